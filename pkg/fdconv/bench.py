"""
Wall-time comparison of the alternative computation paths.
"""
import time

import numpy as np
import pandas as pd

from .config import TrainConfig
from .fbm import fbm_forward, fbm_forward_postmod
from .layer import fdconv_forward, random_state
from .logging import log
from .numerics import conv2d_direct, conv2d_fft
from .utils import as_rng


def median_time(fn, repeats=5):
    """
    Median and minimum wall time of fn over repeats calls, plus its last result.
    """
    times = []
    result = None
    for _ in range(repeats):
        start = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - start)
    return float(np.median(times)), float(np.min(times)), result


def bench(config: TrainConfig, repeats=5, batch=8, seed=0) -> pd.DataFrame:
    """
    Time direct against Fourier convolution, fbm_forward against
    fbm_forward_postmod and the whole layer, at the dataset image extent.

    The max_abs_diff column holds the largest deviation of each alternative
    path from the reference path listed right before it.
    """
    if repeats < 1:
        raise ValueError(f"repeats must be positive, got {repeats}")
    layer = config.layer
    s = config.dataset_s
    rng = as_rng(seed)
    x = rng.standard_normal((batch, layer.c_in, s, s))
    w = rng.standard_normal((layer.k, layer.k, layer.c_in, layer.c_out))
    masks = layer.masks(s, s)
    a = rng.uniform(0.0, 2.0, (batch, masks.count, s, s))
    state = random_state(layer, rng)

    pairs = [
        (
            ("conv2d_direct", lambda: conv2d_direct(x, w, "circular")),
            ("conv2d_fft", lambda: conv2d_fft(x, w)),
        ),
        (
            ("fbm_forward", lambda: fbm_forward(x, w, a, masks)),
            ("fbm_forward_postmod", lambda: fbm_forward_postmod(x, w, a, masks)),
        ),
    ]

    rows = []
    for (ref_name, ref_fn), (alt_name, alt_fn) in pairs:
        median, best, expected = median_time(ref_fn, repeats)
        rows.append((ref_name, median, best, 0.0))
        median, best, value = median_time(alt_fn, repeats)
        rows.append((alt_name, median, best, float(np.max(np.abs(value - expected)))))

    median, best, _ = median_time(lambda: fdconv_forward(x, state), repeats)
    rows.append(("fdconv_forward", median, best, float("nan")))

    table = pd.DataFrame(rows, columns=["path", "median_s", "min_s", "max_abs_diff"])
    table = table.set_index("path")
    for path, row in table.iterrows():
        log.info("%s: median %.4fs, min %.4fs", path, row.median_s, row.min_s)
    return table
