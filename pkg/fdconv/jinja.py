from pathlib import Path

from jinja2 import Environment, FileSystemLoader

PATH = Path(__file__).parent

#
# Create default environment.
#
env = Environment(
    loader=FileSystemLoader(PATH / "templates"),
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=True,
)


#
# Functions
#
def jinja_filter(fn):
    """
    Register function as a filter in the global environment.
    """
    env.filters[fn.__name__] = fn
    return fn


@jinja_filter
def num(x):
    """
    Render a number losslessly (shortest round-trip repr for floats).
    """
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


def render(template, *args, **kwargs):
    """
    Render named template in the given context.
    """
    template = env.get_template(template + ".jinja2")
    if args:
        kwargs = {**args[0], **kwargs}
    return template.render(kwargs)
