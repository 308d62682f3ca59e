"""
Frequency Band Modulation.

Features are split into disjoint frequency bands with binary masks over
max(|f_u|, |f_v|), each band is scaled by a predicted per-location map, and the
recombined feature is convolved once with the (already modulated) kernel.
"""
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .autodiff import defop, sigmoid
from .numerics import conv2d_direct, real_part
from .utils import fmt_shape

DEFAULT_BANDS = (0.0, 1 / 16, 1 / 8, 1 / 4, 1 / 2)
PREDICTOR_KERNEL = 3


class BandMaskSet(NamedTuple):
    thresholds: tuple
    masks: np.ndarray  # B×H×W in FFT layout

    @property
    def count(self):
        return len(self.masks)

    def centered(self):
        """
        Masks with the zero frequency moved to the grid center.
        """
        return np.fft.fftshift(self.masks, axes=(-2, -1))


class FbmParams(NamedTuple):
    weight: np.ndarray  # 3×3×C×(B-1)
    bias: np.ndarray  # B-1


def check_bands(bands):
    """
    Validate band thresholds and return them as a tuple of floats.
    """
    try:
        bands = tuple(float(x) for x in bands)
    except (TypeError, ValueError):
        raise ValueError(f"band thresholds must be numbers, got {bands!r}")
    if len(bands) < 2:
        raise ValueError(f"need at least two band thresholds, got {bands}")
    if bands[0] != 0.0 or bands[-1] != 0.5:
        raise ValueError(f"band thresholds must start at 0 and end at 1/2, got {bands}")
    if any(a >= b for a, b in zip(bands, bands[1:])):
        raise ValueError(f"band thresholds must be strictly ascending, got {bands}")
    return bands


def build_band_masks(h, w, bands=DEFAULT_BANDS) -> BandMaskSet:
    """
    Binary band masks of an H×W grid.

    mask_b holds the frequencies with ψ_b ≤ max(|u/H|, |v/W|) < ψ_{b+1}; the top
    band also takes the Nyquist frequencies at exactly 1/2.
    """
    bands = check_bands(bands)
    if h < 1 or w < 1:
        raise ValueError(f"grid extents must be positive, got {h}×{w}")
    return _band_masks(int(h), int(w), bands)


@lru_cache(32)
def _band_masks(h, w, bands):
    fu, fv = np.abs(np.fft.fftfreq(h)), np.abs(np.fft.fftfreq(w))
    radius = np.maximum(fu[:, None], fv[None, :])
    last = len(bands) - 2
    masks = []
    for b, (lo, hi) in enumerate(zip(bands, bands[1:])):
        upper = radius <= hi if b == last else radius < hi
        masks.append((radius >= lo) & upper)

    masks = np.array(masks, dtype=float)
    masks.flags.writeable = False
    return BandMaskSet(bands, masks)


#
# Filtering
#
def band_filter(x, mask):
    """
    Keep the frequencies selected by mask: iDFT(mask ⊙ DFT(x)) over the last
    two axes.
    """
    x = np.asarray(x, dtype=float)
    mask = np.asarray(mask)
    if mask.shape != x.shape[-2:]:
        raise ValueError(
            f"mask of shape {fmt_shape(mask.shape)} does not match features "
            f"{fmt_shape(x.shape)}"
        )
    return real_part(np.fft.ifft2(mask * np.fft.fft2(x)), "band filter")


def band_decompose(x, masks: BandMaskSet):
    """
    All band components of x, stacked on a new axis before the channel axis
    (…×B×C×H×W).
    """
    x = np.asarray(x, dtype=float)
    spectrum = np.fft.fft2(x)[..., None, :, :, :]
    bands = np.fft.ifft2(masks.masks[:, None] * spectrum)
    return real_part(bands, "band decomposition")


@defop("band-filter", linear=True)
def _band_filter(x, mask):
    return band_filter(x, mask)


@_band_filter.defvjp
def _(g, out, x, mask):
    return (band_filter(g, mask),)


#
# Modulation
#
def init_fbm(channels, band_count):
    """
    Zero predictor: every predicted plane starts at σ(0) = 0.5.
    """
    k = PREDICTOR_KERNEL
    return FbmParams(np.zeros((k, k, channels, band_count - 1)), np.zeros(band_count - 1))


def predict_modulation(x, params: FbmParams):
    """
    Per-location band modulation maps (…×B×H×W).

    A zero-padded 3×3 convolution with sigmoid predicts planes 1…B-1; plane 0
    (the lowest band) is fixed to 1.
    """
    x = np.asarray(x, dtype=float)
    ones = np.ones(x.shape[:-3] + (1,) + x.shape[-2:])
    if params.bias.size == 0:
        return ones
    logits = conv2d_direct(x, params.weight, "zero") + params.bias[:, None, None]
    return np.concatenate([ones, sigmoid(logits)], axis=-3)


def _check_planes(a, masks):
    a = np.asarray(a, dtype=float)
    if a.shape[-3] != masks.count:
        raise ValueError(
            f"modulation has {a.shape[-3]} planes but there are {masks.count} bands"
        )
    return a


def recombine(x, a, masks: BandMaskSet):
    """
    Σ_b A_b ⊙ X_b, with A_b shared across channels.
    """
    a = _check_planes(a, masks)
    if masks.count == 1:
        return a[..., 0:1, :, :] * x
    bands = band_decompose(x, masks)
    return np.einsum("...bhw,...bchw->...chw", a, bands)


def fbm_forward(x, w, a, masks: BandMaskSet):
    """
    Modulate the bands of x, recombine them and convolve once (circular).
    """
    return conv2d_direct(recombine(x, a, masks), w, "circular")


def fbm_forward_postmod(x, w, a, masks: BandMaskSet):
    """
    Reference path: convolve each band, then modulate and sum.

    Agrees with fbm_forward only when every A_b is spatially constant.
    """
    a = _check_planes(a, masks)
    bands = band_decompose(x, masks)
    out = 0.0
    for b in range(masks.count):
        conv = conv2d_direct(bands[..., b, :, :, :], w, "circular")
        out = out + a[..., b, None, :, :] * conv
    return out


#
# Tape builders
#
def record_modulation(tape, x, weight, bias, band_count):
    """
    Record the predictor on a tape. Return the node of planes 1…B-1.
    """
    logits = tape.record("conv2d", x, weight, mode="zero")
    bias = tape.record("reshape", bias, shape=(band_count - 1, 1, 1))
    return tape.record("sigmoid", tape.record("add", logits, bias))


def record_recombine(tape, x, planes, masks: BandMaskSet):
    """
    Record Σ_b A_b ⊙ X_b given the predicted planes 1…B-1 (plane 0 is 1).
    """
    if masks.count == 1:
        return x
    out = tape.record("band-filter", x, mask=masks.masks[0])
    for b in range(1, masks.count):
        band = tape.record("band-filter", x, mask=masks.masks[b])
        key = (Ellipsis, slice(b - 1, b), slice(None), slice(None))
        plane = tape.record("slice", planes, key=key)
        out = tape.record("add", out, tape.record("multiply", plane, band))
    return out
