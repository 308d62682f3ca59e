"""
Invariant check suites run by ``fdconv check``.

Each check is a function of a random generator returning a measured error; the
``check`` decorator files it under a suite together with the largest error
that still passes.
"""
from typing import NamedTuple

import numpy as np

from . import analysis
from .autodiff import (
    LinearOperator,
    adjoint_dot_test,
    finite_diff_check,
    op_operator,
)
from .config import FDConvConfig
from .fbm import (
    band_decompose,
    band_filter,
    build_band_masks,
    fbm_forward,
    fbm_forward_postmod,
)
from .fdw import (
    assign_groups,
    build_index_table,
    fdw_adjoint,
    materialize_weights,
)
from .ksm import fuse, global_branch, init_ksm, local_branch, modulation
from .layer import (
    attention_pi,
    fdconv_forward,
    init_state,
    param_count,
    random_state,
    record_fdconv,
)
from .logging import log
from .numerics import conv2d_direct, conv2d_fft, dft2, dft2_adjoint, idft2
from .train import model_weights
from .utils import as_rng

SUITES = ("numerics", "fdw", "ksm", "fbm", "grad")
CHECKS = {suite: [] for suite in SUITES}


class CheckResult(NamedTuple):
    suite: str
    name: str
    value: float
    threshold: float

    @property
    def passed(self):
        return bool(np.isfinite(self.value) and self.value <= self.threshold)


def check(suite, threshold):
    """
    Register function as a check of the given suite.
    """
    if suite not in CHECKS:
        raise ValueError(f"invalid suite: {suite!r}")

    def decorator(fn):
        CHECKS[suite].append((fn.__name__, threshold, fn))
        return fn

    return decorator


def run_checks(suite="all", seed=0):
    """
    Run the checks of a suite (or of every suite) and return their results.

    Every check draws from its own generator seeded with seed. A check that
    raises is reported as failed with a NaN value.
    """
    if suite != "all" and suite not in CHECKS:
        raise ValueError(f"invalid suite: {suite!r} (expect all or one of {SUITES})")
    suites = SUITES if suite == "all" else (suite,)

    results = []
    for name in suites:
        for check_name, threshold, fn in CHECKS[name]:
            try:
                value = float(fn(as_rng(seed)))
            except (ArithmeticError, AssertionError, ValueError) as ex:
                log.error("%s/%s raised %s: %s", name, check_name, type(ex).__name__, ex)
                value = float("nan")
            result = CheckResult(name, check_name, value, threshold)
            level = log.info if result.passed else log.error
            status = "pass" if result.passed else "FAIL"
            msg = "[%s] %s/%s: %.3e (threshold %.1e)"
            level(msg, status, name, check_name, value, threshold)
            results.append(result)
    return results


def layer_loss(config: FDConvConfig, x, r, masks=None):
    """
    Graph builder of the scalar ⟨r, FDConv(x)⟩, for gradient checks.
    """

    def loss(tape, nodes):
        y = record_fdconv(tape, tape.constant(x), nodes, config, masks)
        return tape.record("sum", tape.record("multiply", y, tape.constant(r)))

    return loss


def naive_dft2(x):
    """
    Direct double-sum DFT.
    """
    m, n = x.shape
    p, u = np.arange(m), np.arange(n)
    out = np.zeros((m, n), dtype=complex)
    for a in range(m):
        for b in range(n):
            phase = np.exp(-2j * np.pi * (p[:, None] * a / m + u[None, :] * b / n))
            out[a, b] = np.sum(x * phase)
    return out


#
# numerics
#
@check("numerics", 1e-12)
def dft_matches_double_sum(rng):
    x = rng.standard_normal((4, 4))
    return np.max(np.abs(dft2(x) - naive_dft2(x)))


@check("numerics", 1e-12)
def dft_round_trip(rng):
    x = rng.standard_normal((8, 8))
    return np.max(np.abs(idft2(dft2(x)) - x))


@check("numerics", 1e-12)
def parseval(rng):
    worst = 0.0
    for m, n in [(1, 1), (3, 5), (8, 8), (16, 9), (32, 32)]:
        x = rng.standard_normal((m, n))
        energy = np.sum(x ** 2)
        spectral = np.sum(np.abs(dft2(x)) ** 2) / (m * n)
        worst = max(worst, abs(energy - spectral) / energy)
    return worst


@check("numerics", 1e-12)
def hermitian_symmetry(rng):
    x = rng.standard_normal((6, 7))
    g = dft2(x)
    mirrored = np.roll(np.flip(g, axis=(0, 1)), (1, 1), axis=(0, 1))
    return np.max(np.abs(g - np.conj(mirrored)))


@check("numerics", 1e-10)
def conv_fft_matches_direct(rng):
    worst = 0.0
    for _ in range(200):
        k = int(rng.choice([1, 3, 5]))
        h, w = rng.integers(k, 17, size=2)
        c_in, c_out = rng.integers(1, 5, size=2)
        x = rng.standard_normal((c_in, h, w))
        kernel = rng.standard_normal((k, k, c_in, c_out))
        error = np.abs(conv2d_fft(x, kernel) - conv2d_direct(x, kernel, "circular"))
        worst = max(worst, np.max(error))
    return worst


#
# fdw
#
@check("fdw", 1e-8)
def fdw_orthogonality(rng):
    table = build_index_table(3, 8, 8)
    bank = rng.standard_normal(table.size)
    worst = 0.0
    for n in (2, 4, 16, 64):
        weights = materialize_weights(bank, assign_groups(table, n))
        worst = max(worst, analysis.max_similarity(weights))
    return worst


@check("fdw", 1e-12)
def fdw_spectral_disjointness(rng):
    table = build_index_table(3, 4, 4)
    bank = rng.standard_normal(table.size)
    spectra = analysis.native_spectra(materialize_weights(bank, assign_groups(table, 8)))
    return analysis.max_spectral_product(spectra)


@check("fdw", 0.0)
def budget_invariance(rng):
    worst = 0
    for n in (1, 2, 4, 16, 64):
        count = param_count(FDConvConfig(k=3, c_in=8, c_out=8, n=n))
        worst = max(worst, abs(count.bank - 3 * 3 * 8 * 8))
    return worst


@check("fdw", 1e-10)
def fdw_reconstruction(rng):
    table = build_index_table(3, 4, 6)
    bank = rng.standard_normal(table.size)
    whole = materialize_weights(bank, assign_groups(table, 1))[0]
    parts = materialize_weights(bank, assign_groups(table, 16))
    return np.max(np.abs(parts.sum(axis=0) - whole))


@check("fdw", 1e-10)
def fdw_group_adjoint(rng):
    table = build_index_table(3, 2, 3)
    assignment = assign_groups(table, 4)
    worst = 0.0
    for i in range(assignment.n):
        lo, hi = assignment.param_bounds[i], assignment.param_bounds[i + 1]

        def forward(coefficients, i=i, lo=lo, hi=hi):
            bank = np.zeros(table.size)
            bank[lo:hi] = coefficients
            return materialize_weights(bank, assignment, group=i)

        def adjoint(grad, i=i):
            return fdw_adjoint(grad, assignment, i)

        linop = LinearOperator(forward, adjoint, (hi - lo,), f"fdw group {i}")
        worst = max(worst, adjoint_dot_test(linop, trials=3, seed=rng))
    return worst


@check("fdw", 1e-10)
def degenerate_collapse(rng):
    config = FDConvConfig(k=3, c_in=3, c_out=2, n=1, enable_ksm=False, enable_fbm=False)
    state = init_state(config, rng)
    x = rng.standard_normal((2, 3, 8, 8))
    expected = conv2d_direct(x, state.weights()[0], "circular")
    return np.max(np.abs(fdconv_forward(x, state) - expected))


@check("fdw", 1e-12)
def attention_simplex(rng):
    config = FDConvConfig(k=3, c_in=4, c_out=4, n=8)
    state = random_state(config, rng, scale=1.0)
    pi = attention_pi(rng.standard_normal((16, 4, 8, 8)), state.attention, config.tau)
    if not np.all(pi > 0):
        return float("inf")
    return np.max(np.abs(pi.sum(axis=-1) - 1))


@check("fdw", 1e-12)
def uniform_attention_at_init(rng):
    config = FDConvConfig(k=3, c_in=4, c_out=4, n=8)
    state = init_state(config, rng)
    pi = attention_pi(rng.standard_normal((4, 4, 8, 8)), state.attention, config.tau)
    return np.max(np.abs(pi - 1 / config.n))


#
# ksm
#
def _random_ksm(rng, k, c_in, c_out):
    params = init_ksm(k, c_in, c_out, rng)
    return type(params)(*(rng.standard_normal(p.shape) for p in params))


@check("ksm", 1e-15)
def ksm_identity_at_init(rng):
    params = init_ksm(3, 4, 5, rng)
    alpha = modulation(rng.standard_normal((2, 4)), params, 3, 5)
    return np.max(np.abs(alpha - 1))


@check("ksm", 0.0)
def ksm_range(rng):
    params = _random_ksm(rng, 3, 4, 5)
    alpha = modulation(rng.standard_normal((8, 4)), params, 3, 5)
    return np.sum((alpha <= 0) | (alpha >= 2))


@check("ksm", 0.0)
def ksm_broadcast(rng):
    k, c_in, c_out = 3, 4, 5
    params = _random_ksm(rng, k, c_in, c_out)
    d = rng.standard_normal(c_in)
    local = local_branch(d, params, k, c_out)
    g_in, g_out, g_spatial = global_branch(d, params, k, c_out)
    base = fuse(local, g_in, g_out, g_spatial)

    leaks = 0
    for j in range(c_out):
        bumped = g_out.copy()
        bumped[j] += 0.5
        changed = fuse(local, g_in, bumped, g_spatial) != base
        changed[..., j] = False
        leaks += int(changed.sum())
    return leaks


#
# fbm
#
@check("fbm", 0.0)
def band_masks_partition(rng):
    worst = 0.0
    for s in (16, 32):
        masks = build_band_masks(s, s)
        worst = max(worst, np.max(np.abs(masks.masks.sum(axis=0) - 1)))
    return worst


@check("fbm", 1e-10)
def band_sum_reconstruction(rng):
    worst = 0.0
    for s in (16, 32):
        x = rng.standard_normal((3, s, s))
        bands = band_decompose(x, build_band_masks(s, s))
        worst = max(worst, np.max(np.abs(bands.sum(axis=-4) - x)))
    return worst


@check("fbm", 1e-10)
def band_energy_split(rng):
    worst = 0.0
    for s in (16, 32):
        x = rng.standard_normal((3, s, s))
        bands = band_decompose(x, build_band_masks(s, s))
        energy = np.sum(x ** 2)
        worst = max(worst, abs(np.sum(bands ** 2) - energy) / energy)
    return worst


@check("fbm", 1e-10)
def band_filter_idempotence(rng):
    x = rng.standard_normal((2, 16, 16))
    masks = build_band_masks(16, 16).masks
    worst = 0.0
    for i, mi in enumerate(masks):
        once = band_filter(x, mi)
        worst = max(worst, np.max(np.abs(band_filter(once, mi) - once)))
        for j, mj in enumerate(masks):
            if i != j:
                worst = max(worst, np.max(np.abs(band_filter(once, mj))))
    return worst


@check("fbm", 1e-10)
def postmod_equivalence_constant_modulation(rng):
    masks = build_band_masks(16, 16)
    x = rng.standard_normal((2, 3, 16, 16))
    w = rng.standard_normal((3, 3, 3, 4))
    a = rng.uniform(0.2, 1.8, (2, masks.count, 1, 1)) * np.ones((1, 1, 16, 16))
    gap = fbm_forward(x, w, a, masks) - fbm_forward_postmod(x, w, a, masks)
    return np.max(np.abs(gap))


@check("fbm", float("inf"))
def postmod_gap_varying_modulation(rng):
    masks = build_band_masks(16, 16)
    x = rng.standard_normal((2, 3, 16, 16))
    w = rng.standard_normal((3, 3, 3, 4))
    a = rng.uniform(0.0, 2.0, (2, masks.count, 16, 16))
    gap = fbm_forward(x, w, a, masks) - fbm_forward_postmod(x, w, a, masks)
    return np.max(np.abs(gap))


#
# grad
#
def linear_operators():
    """
    Every linear recorded operation, wrapped with its backward rule.
    """
    masks = build_band_masks(16, 16)
    table = build_index_table(3, 2, 3)
    return [
        op_operator("band-filter", (2, 16, 16), mask=masks.masks[2]),
        op_operator("fdw-materialize", (table.size,), assignment=assign_groups(table, 4)),
        LinearOperator(dft2, dft2_adjoint, (8, 6), "dft2"),
        op_operator("reshape", (3, 4, 5), shape=(12, 5)),
        op_operator("transpose", (3, 4, 5), axes=(2, 0, 1)),
        op_operator("global-average-pool", (2, 3, 6, 6)),
        op_operator("slice", (4, 6), key=(slice(None), slice(1, 4))),
        op_operator("sum", (3, 4)),
        op_operator("scale", (5,), factor=2.0),
    ]


@check("grad", 1e-10)
def linear_adjoints(rng):
    worst = 0.0
    for linop in linear_operators():
        error = adjoint_dot_test(linop, trials=3, seed=rng)
        log.debug("adjoint test %s: %.3e", linop.name, error)
        worst = max(worst, error)
    return worst


@check("grad", 1e-9)
def quadratic_gradient(rng):
    def square(tape, nodes):
        return tape.record("multiply", nodes["x"], nodes["x"])

    return finite_diff_check(square, {"x": 3.0})


@check("grad", 1e-4)
def layer_gradient(rng):
    config = FDConvConfig(k=3, c_in=2, c_out=4, n=4)
    state = random_state(config, rng)
    x = rng.standard_normal((2, 2, 16, 16))
    r = rng.standard_normal((2, 4, 16, 16))
    theta = state.tensors()
    return finite_diff_check(layer_loss(config, x, r), theta, samples=200, seed=rng)


#
# Checkpoint checks
#
def checkpoint_checks(checkpoint):
    """
    Structural checks of a trained checkpoint, reported in analysis manifests.
    """
    config = checkpoint.config
    layer = config.layer
    results = []
    if config.model == "fdconv":
        weights = model_weights(checkpoint.tensors, config)
        similarity = analysis.max_similarity(weights)
        overlap = analysis.max_spectral_product(analysis.native_spectra(weights))
        results += [
            CheckResult("checkpoint", "weight_orthogonality", similarity, 1e-8),
            CheckResult("checkpoint", "spectral_disjointness", overlap, 1e-12),
        ]
        expected = param_count(layer).total
    else:
        expected = layer.k * layer.k * layer.c_in * layer.c_out
    expected += (layer.c_out + 1) * layer.band_count

    actual = sum(np.size(v) for v in checkpoint.tensors.values())
    tally = CheckResult("checkpoint", "parameter_tally", abs(actual - expected), 0)
    return [*results, tally]
