"""
Frequency-response, similarity and parameter reports.

Reports are plain arrays in memory and CSV files on disk. Spectra are kept in
FFT layout and exported with the zero frequency at the center.
"""
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd

from .fbm import DEFAULT_BANDS, band_decompose, build_band_masks
from .fdw import disassemble
from .jinja import render
from .logging import log
from .numerics import centered_indices

DEFAULT_PAD = 64
FLOAT_FORMAT = "%.17g"


class SpectrumReport(NamedTuple):
    pad: int
    spectra: np.ndarray  # n×P×P mean magnitudes, FFT layout

    def centered(self):
        return np.fft.fftshift(self.spectra, axes=(-2, -1))


class SimilarityReport(NamedTuple):
    matrix: np.ndarray  # n×n, NaN on rows and columns of zero-norm weights
    zero_norm: np.ndarray

    def max_offdiag(self):
        n = len(self.matrix)
        if n < 2:
            return 0.0
        off = self.matrix[~np.eye(n, dtype=bool)]
        off = off[np.isfinite(off)]
        return float(np.max(np.abs(off), initial=0.0))


def _as_stack(weights):
    weights = np.asarray(weights, dtype=float)
    if weights.ndim == 4:
        weights = weights[None]
    if weights.ndim != 5:
        raise ValueError(f"expect n×k×k×C_in×C_out weights, got shape {weights.shape}")
    return weights


def weight_frequency_response(weights, pad=DEFAULT_PAD) -> SpectrumReport:
    """
    Mean magnitude response of each weight.

    Every k×k filter is zero-padded to P×P and transformed; magnitudes are
    averaged over the C_in·C_out filters of a weight.
    """
    weights = _as_stack(weights)
    k = weights.shape[1]
    if pad < k:
        raise ValueError(f"pad size P={pad} smaller than kernel k={k}")
    filters = np.moveaxis(weights, (1, 2), (-2, -1))
    padded = np.zeros(filters.shape[:-2] + (pad, pad))
    padded[..., :k, :k] = filters
    spectra = np.abs(np.fft.fft2(padded)).mean(axis=(1, 2))
    return SpectrumReport(pad, spectra)


def native_spectra(weights):
    """
    Magnitude spectra of the weights on their native k·C_in × k·C_out grid.

    For FDW weights these are the supports of the disjoint groups.
    """
    return np.abs(np.fft.fft2(disassemble(_as_stack(weights))))


def spectral_overlap(spectra):
    """
    Σ over weight pairs of the summed pointwise product of magnitude spectra.
    """
    spectra = np.asarray(spectra)
    total = 0.0
    for i in range(len(spectra)):
        for j in range(i + 1, len(spectra)):
            total += float(np.sum(spectra[i] * spectra[j]))
    return total


def max_spectral_product(spectra):
    """
    Largest pointwise product of the magnitude spectra of two distinct weights.
    """
    spectra = np.asarray(spectra)
    worst = 0.0
    for i in range(len(spectra)):
        for j in range(i + 1, len(spectra)):
            worst = max(worst, float(np.max(spectra[i] * spectra[j])))
    return worst


def pairwise_cosine_similarity(weights) -> SimilarityReport:
    """
    Cosine similarity ⟨W_i, W_j⟩ / (‖W_i‖·‖W_j‖) of every pair of weights.

    Zero-norm weights are flagged and their rows and columns set to NaN. The
    matrix is exactly symmetric with unit diagonal elsewhere.
    """
    weights = _as_stack(weights)
    n = len(weights)
    flat = weights.reshape(n, -1)
    norms = np.linalg.norm(flat, axis=1)
    zero = norms == 0

    matrix = np.full((n, n), np.nan)
    for i in range(n):
        if zero[i]:
            continue
        matrix[i, i] = 1.0
        for j in range(i + 1, n):
            if not zero[j]:
                cos = float(flat[i] @ flat[j]) / (norms[i] * norms[j])
                matrix[i, j] = matrix[j, i] = cos
    return SimilarityReport(matrix, zero)


def max_similarity(weights):
    """
    Largest off-diagonal |cosine similarity| of a weight stack.
    """
    return pairwise_cosine_similarity(weights).max_offdiag()


def band_energy_profile(weights, pad=DEFAULT_PAD, bands=None):
    """
    Fraction of each weight's padded spectrum energy falling in each band.
    """
    report = weight_frequency_response(weights, pad)
    masks = build_band_masks(pad, pad, tuple(bands or DEFAULT_BANDS))
    energy = report.spectra ** 2
    per_band = np.einsum("nhw,bhw->nb", energy, masks.masks)
    total = energy.sum(axis=(1, 2))[:, None]
    fractions = np.divide(per_band, total, out=np.zeros_like(per_band), where=total > 0)
    return pd.DataFrame(
        fractions,
        index=pd.RangeIndex(len(fractions), name="weight"),
        columns=[f"band_{b}" for b in range(masks.count)],
    )


def feature_band_energy(x, a, masks):
    """
    Energy of each band of a feature before and after band modulation.
    """
    bands = band_decompose(x, masks)
    a = np.asarray(a, dtype=float)
    modulated = a[..., :, None, :, :] * bands
    axes = tuple(i for i in range(bands.ndim) if i != bands.ndim - 4)
    return pd.DataFrame(
        {
            "before": (bands ** 2).sum(axis=axes),
            "after": (modulated ** 2).sum(axis=axes),
        },
        index=pd.RangeIndex(masks.count, name="band"),
    )


#
# CSV export
#
def write_matrix(path, matrix, labels=True):
    """
    Write a matrix as CSV with a header row and 17 significant digits.

    With labels, rows and columns are labelled by their integer index;
    otherwise the header holds centered frequency indices.
    """
    matrix = np.asarray(matrix)
    if labels:
        rows, cols = range(matrix.shape[0]), range(matrix.shape[1])
        data = pd.DataFrame(matrix, index=rows, columns=cols)
    else:
        data = pd.DataFrame(matrix, columns=centered_indices(matrix.shape[1]))
    try:
        data.to_csv(path, index=labels, float_format=FLOAT_FORMAT)
    except OSError as ex:
        raise OSError(f"cannot write report file {path}: {ex.strerror}") from ex
    return Path(path)


def read_matrix(path, labels=True):
    """
    Read back a matrix written by write_matrix.
    """
    index_col = 0 if labels else None
    data = pd.read_csv(path, index_col=index_col, float_precision="round_trip")
    return data.to_numpy(dtype=float)


def export_modulation_maps(a, out_dir, prefix="sample"):
    """
    Write each band modulation plane as modulation_<prefix>_<b>.csv.
    """
    out_dir = Path(out_dir)
    return [
        write_matrix(out_dir / f"modulation_{prefix}_{b}.csv", plane, labels=False)
        for b, plane in enumerate(np.asarray(a))
    ]


def export_report(
    out_dir,
    weights=(),
    config=None,
    pad=DEFAULT_PAD,
    checks=(),
    tables=None,
    extra_files=(),
):
    """
    Write spectrum and similarity CSVs plus a plain-text manifest.

    Args:
        out_dir:
            Destination directory, created when missing.
        weights:
            Weight stack (possibly empty).
        config:
            Configuration text for the manifest.
        checks:
            Sequence of CheckResult-like objects shown in the manifest.
        tables:
            Mapping of file name to DataFrame written alongside.
        extra_files:
            Paths of files written by the caller, listed in the manifest.

    Returns:
        List of written paths, manifest last.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as ex:
        raise OSError(f"cannot create report directory {out_dir}: {ex.strerror}") from ex

    files = [Path(p) for p in extra_files]
    weights = np.asarray(weights, dtype=float)
    if weights.size:
        report = weight_frequency_response(weights, pad)
        for i, spectrum in enumerate(report.centered()):
            path = out_dir / f"spectrum_{i}.csv"
            files.append(write_matrix(path, spectrum, labels=False))
        similarity = pairwise_cosine_similarity(weights)
        files.append(write_matrix(out_dir / "similarity.csv", similarity.matrix))

    for name, table in (tables or {}).items():
        path = out_dir / name
        try:
            table.to_csv(path, float_format=FLOAT_FORMAT)
        except OSError as ex:
            raise OSError(f"cannot write report file {path}: {ex.strerror}") from ex
        files.append(path)

    manifest = out_dir / "manifest.txt"
    text = render(
        "manifest",
        config=config,
        pad=pad,
        weights=len(weights) if weights.size else 0,
        checks=list(checks),
        files=[p.name for p in files],
    )
    try:
        manifest.write_text(text)
    except OSError as ex:
        raise OSError(f"cannot write manifest {manifest}: {ex.strerror}") from ex
    log.info("report written to %s (%d files)", out_dir, len(files) + 1)
    return [*files, manifest]
