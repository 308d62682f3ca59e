"""
Dense array substrate: the 2-D DFT pair and direct/Fourier-domain convolution.

Real tensors are float64 numpy arrays and complex grids are complex128 arrays.
Transforms and convolutions act on the trailing axes; any leading axes are
treated as batch axes.

Convolution follows the deep-learning convention (cross-correlation, no kernel
flip). Weights are laid out as ``k × k × C_in × C_out`` (optionally with leading
batch axes) and features as ``C × H × W``.
"""
import numpy as np

from .utils import fmt_shape

CONV_MODES = ("zero", "circular")
IMAG_TOLERANCE = 1e-10


class ConsistencyError(AssertionError):
    """
    A computed quantity broke an internal invariant.
    """


#
# Fourier indices
#
def centered_indices(m):
    """
    Centered index range -⌊m/2⌋ … ⌈m/2⌉-1 in ascending order.
    """
    return np.arange(-(m // 2), m - m // 2)


def to_centered(u, m):
    """
    Map (possibly negative or wrapped) indices to the centered range.
    """
    u = np.mod(u, m)
    return np.where(u >= m - m // 2, u - m, u)


def conjugate_index(u, v, m, n):
    """
    Centered conjugate partner (-u mod m, -v mod n) of centered index (u, v).
    """
    return to_centered(-np.asarray(u), m), to_centered(-np.asarray(v), n)


#
# Checks
#
def check_finite(x, what="input"):
    """
    Raise ValueError pointing to the first non-finite entry of x.
    """
    finite = np.isfinite(x)
    if not np.all(finite):
        bad = tuple(int(i) for i in np.argwhere(~finite)[0])
        raise ValueError(f"non-finite {what} at index {bad}")
    return x


def _check_grid(x, what):
    if x.ndim < 2 or x.shape[-2] < 1 or x.shape[-1] < 1:
        raise ValueError(
            f"{what} must have positive trailing extents, got {fmt_shape(x.shape)}"
        )
    return check_finite(x, what)


def real_part(z, what="transform"):
    """
    Discard the imaginary residue of a transform that should be real.

    The residue is checked against IMAG_TOLERANCE scaled by max(1, |z|max) and a
    ConsistencyError is raised when it is exceeded.
    """
    residue = np.max(np.abs(z.imag), initial=0.0)
    scale = max(1.0, np.max(np.abs(z.real), initial=0.0))
    if residue >= IMAG_TOLERANCE * scale:
        raise ConsistencyError(
            f"{what}: imaginary residue {residue:.3g} exceeds {IMAG_TOLERANCE:g} "
            f"(is the spectrum Hermitian?)"
        )
    return np.ascontiguousarray(z.real)


#
# Transforms
#
def dft2(x):
    """
    Forward 2-D DFT over the last two axes, no normalization.
    """
    x = _check_grid(np.asarray(x, dtype=float), "dft2 input")
    return np.fft.fft2(x)


def idft2(g):
    """
    Inverse 2-D DFT over the last two axes with the 1/(MN) normalization.
    """
    g = _check_grid(np.asarray(g, dtype=complex), "idft2 input")
    return np.fft.ifft2(g)


def dft2_adjoint(g):
    """
    Adjoint of dft2 restricted to real inputs, under Re⟨a, b⟩.
    """
    g = np.asarray(g, dtype=complex)
    m, n = g.shape[-2:]
    return (m * n) * np.fft.ifft2(g).real


#
# Convolution
#
def shift2d(x, du, dv, mode="zero"):
    """
    Return y with y[..., i, j] = x[..., i + du, j + dv].

    Out of range reads wrap around in circular mode and read zeros otherwise.
    The adjoint of a shift by (du, dv) is the shift by (-du, -dv).
    """
    if mode == "circular":
        return np.roll(x, (-du, -dv), axis=(-2, -1))
    elif mode != "zero":
        raise ValueError(f"invalid convolution mode: {mode!r}")

    h, w = x.shape[-2:]
    out = np.zeros_like(x)
    i0, i1 = max(0, -du), min(h, h - du)
    j0, j1 = max(0, -dv), min(w, w - dv)
    if i1 > i0 and j1 > j0:
        out[..., i0:i1, j0:j1] = x[..., i0 + du : i1 + du, j0 + dv : j1 + dv]
    return out


def check_kernel(x, w, mode="circular"):
    """
    Validate a feature/kernel pair and return the kernel extent.

    Only circular correlation needs the kernel to fit inside the features; zero
    padding reads zeros wherever the kernel overhangs.
    """
    if w.ndim < 4 or x.ndim < 3:
        raise ValueError(
            f"expect features C×H×W and weights k×k×C_in×C_out, got "
            f"{fmt_shape(x.shape)} and {fmt_shape(w.shape)}"
        )
    k = w.shape[-4]
    h, wd = x.shape[-2:]
    if w.shape[-3] != k:
        raise ValueError(f"kernel must be square, got {fmt_shape(w.shape)}")
    if k % 2 == 0:
        raise ValueError(f"kernel extent must be odd, got k={k}")
    if mode == "circular" and (k > h or k > wd):
        raise ValueError(f"kernel extent {k} exceeds feature extent {h}×{wd}")
    if w.shape[-2] != x.shape[-3]:
        raise ValueError(
            f"input channels differ: features {fmt_shape(x.shape)}, "
            f"weights {fmt_shape(w.shape)}"
        )
    return k


def conv2d_direct(x, w, mode="zero"):
    """
    Same-size, stride 1 cross-correlation of C_in×H×W features with a
    k×k×C_in×C_out kernel.

    Args:
        x:
            Features, optionally with leading batch axes.
        w:
            Kernel. Leading axes, when present, broadcast against those of x
            (per-sample kernels).
        mode:
            "zero" pads symmetrically by ⌊k/2⌋, "circular" wraps around.
    """
    if mode not in CONV_MODES:
        raise ValueError(f"invalid convolution mode: {mode!r}")
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    k = check_kernel(x, w, mode)
    r = k // 2

    out = 0.0
    for a in range(k):
        for b in range(k):
            xs = shift2d(x, a - r, b - r, mode)
            out = out + np.einsum("...co,...chw->...ohw", w[..., a, b, :, :], xs)
    return out


def pad_kernel(w, h, wd):
    """
    Embed a k×k×C_in×C_out kernel into C_in×C_out×H×W with its center at (0, 0).
    """
    k = w.shape[-4]
    r = k // 2
    out = np.zeros(w.shape[:-4] + (w.shape[-2], w.shape[-1], h, wd))
    for a in range(k):
        for b in range(k):
            out[..., (a - r) % h, (b - r) % wd] = w[..., a, b, :, :]
    return out


def conv2d_fft(x, w):
    """
    Circular cross-correlation computed through the convolution theorem.

    Each output channel is the sum over input channels of
    iDFT(conj(DFT(w_padded)) ⊙ DFT(x_channel)).
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    check_kernel(x, w)
    h, wd = x.shape[-2:]

    kernel_f = dft2(pad_kernel(w, h, wd))
    feature_f = dft2(x)
    out_f = np.einsum("...cohw,...chw->...ohw", np.conj(kernel_f), feature_f)
    return real_part(np.fft.ifft2(out_f), "conv2d_fft")
