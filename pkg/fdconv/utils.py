import time
from functools import wraps

import numpy as np

from .logging import log


def timed(fn):
    """
    Log the wall time of each call at DEBUG level.
    """

    @wraps(fn)
    def decorated(*args, **kwargs):
        start = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        finally:
            log.debug("%s: %.3fs", fn.__qualname__, time.perf_counter() - start)

    return decorated


def as_rng(seed):
    """
    Coerce seed or generator to a numpy Generator.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def fmt_shape(shape):
    return "×".join(map(str, shape)) or "scalar"
