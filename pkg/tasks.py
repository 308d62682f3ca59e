from invoke import task


@task
def test(ctx, all=False, report_xml=False, verbose=False, clear_cache=False):
    if clear_cache:
        ctx.run("rm -rf .pytest_cache")
    suffix = " -vv " if verbose else ""
    if not all:
        ctx.run(f'pytest --maxfail=2 --lf -m "not slow" {suffix}', pty=True)
    if all:
        suffix += " --cov-report xml" if report_xml else ""
        ctx.run(f"pytest --cov {suffix}", pty=True)
        style(ctx)


@task
def style(ctx):
    ctx.run("black --check .")
    ctx.run("pycodestyle fdconv")


@task
def cov(ctx, report=True):
    ctx.run("pytest --cov --cov-report=html --cov-report=term", pty=True)


@task
def check(ctx, suite="all"):
    """
    Run the invariant check suites.
    """
    ctx.run(f"python -m fdconv check --suite {suite}", pty=True)


@task
def train(ctx, config="configs/toy.cfg", out="runs/toy", compare=False):
    """
    Train the toy network and write its analysis report.
    """
    flag = " --compare" if compare else ""
    ctx.run(f"python -m fdconv train --config {config} --out {out}{flag}", pty=True)
    ctx.run(
        f"python -m fdconv analyze --checkpoint {out}/checkpoint.fdcv --out {out}/report",
        pty=True,
    )


@task
def bench(ctx, config="configs/toy.cfg", repeats=5):
    """
    Time the alternative convolution and band modulation paths.
    """
    ctx.run(f"python -m fdconv bench --config {config} --repeats {repeats}", pty=True)
