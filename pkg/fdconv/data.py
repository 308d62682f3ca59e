"""
Synthetic frequency-band classification task.

Each image is a sum of random 2-D cosines whose frequencies fall in the band of
its label, plus white noise.
"""
from typing import NamedTuple

import numpy as np

from .fbm import DEFAULT_BANDS, check_bands
from .numerics import centered_indices
from .utils import as_rng

N_COSINES = 3
AMPLITUDES = (0.5, 1.0)
HOLDOUT_EVERY = 5


class BandDataset(NamedTuple):
    images: np.ndarray  # count×1×S×S
    labels: np.ndarray
    seed: int
    s: int
    bands: tuple
    sigma: float

    @property
    def count(self):
        return len(self.labels)

    @property
    def band_count(self):
        return len(self.bands) - 1

    def take(self, idx):
        """
        Images and labels of the given sample indices.
        """
        return self.images[idx], self.labels[idx]


def band_frequencies(s, bands, b):
    """
    Centered frequencies (u, v) of an S×S grid that belong to band b.
    """
    u, v = np.meshgrid(centered_indices(s), centered_indices(s), indexing="ij")
    radius = np.maximum(np.abs(u), np.abs(v)) / s
    lo, hi = bands[b], bands[b + 1]
    inside = (radius >= lo) & ((radius <= hi) if b == len(bands) - 2 else (radius < hi))
    return np.stack([u[inside], v[inside]], axis=1)


def gen_band_dataset(
    seed, count, s=32, bands=DEFAULT_BANDS, sigma=0.1, n_cosines=N_COSINES
):
    """
    Generate a reproducible band dataset.

    Labels are assigned round-robin, so class counts differ by at most one.

    Args:
        seed:
            Generator seed; equal arguments give bitwise identical datasets.
        count:
            Number of samples.
        s:
            Image extent, a power of two ≥ 16.
        bands:
            Band thresholds; the label range is [0, B).
        sigma:
            Standard deviation of the additive white noise.
        n_cosines:
            Number of cosines per image.
    """
    bands = check_bands(bands)
    if s < 16 or s & (s - 1):
        raise ValueError(f"image extent must be a power of two ≥ 16, got S={s}")
    if count < 1:
        raise ValueError(f"sample count must be positive, got {count}")
    if sigma < 0:
        raise ValueError(f"noise level must be non-negative, got {sigma}")

    n_bands = len(bands) - 1
    choices = [band_frequencies(s, bands, b) for b in range(n_bands)]
    for b, freqs in enumerate(choices):
        if not len(freqs):
            raise ValueError(f"band {b} holds no frequency of a {s}×{s} grid")

    rng = as_rng(seed)
    p, q = np.meshgrid(np.arange(s), np.arange(s), indexing="ij")
    labels = np.arange(count) % n_bands
    images = np.zeros((count, 1, s, s))
    for i, label in enumerate(labels):
        freqs = choices[label][rng.integers(len(choices[label]), size=n_cosines)]
        amplitudes = rng.uniform(*AMPLITUDES, size=n_cosines)
        phases = rng.uniform(0.0, 2 * np.pi, size=n_cosines)
        for (u, v), a, phi in zip(freqs, amplitudes, phases):
            images[i, 0] += a * np.cos(2 * np.pi * (u * p + v * q) / s + phi)
        images[i, 0] += sigma * rng.standard_normal((s, s))
    return BandDataset(images, labels, seed, s, bands, float(sigma))


def split_indices(count):
    """
    Fixed train/held-out split: every fifth sample is held out.
    """
    idx = np.arange(count)
    held = idx % HOLDOUT_EVERY == HOLDOUT_EVERY - 1
    return idx[~held], idx[held]
