"""
Kernel Spatial Modulation.

A pooled channel descriptor drives two branches: a local 1-D convolution along
the channel axis giving dense k×k×C_in×C_out logits, and a global two-stage
fully-connected map giving one logit per input channel, output channel and
kernel position. The broadcast sum of both goes through 2·sigmoid, so a zero
final stage means identity modulation.
"""
from typing import NamedTuple

import numpy as np

from .autodiff import defop, sigmoid
from .utils import as_rng, fmt_shape

WINDOW = 3
REDUCTION = 16


class KsmParams(NamedTuple):
    local: np.ndarray  # window × (k²·C_out)
    fc1: np.ndarray  # C_in × hidden
    fc1_bias: np.ndarray
    fc2: np.ndarray  # hidden × (C_in + C_out + k²)
    fc2_bias: np.ndarray


def hidden_width(c_in):
    return max(1, c_in // REDUCTION)


def init_ksm(k, c_in, c_out, rng=None, window=WINDOW):
    """
    Kaiming first stage, zero final stages.
    """
    rng = as_rng(rng)
    hidden = hidden_width(c_in)
    return KsmParams(
        local=np.zeros((window, k * k * c_out)),
        fc1=rng.normal(0.0, np.sqrt(2.0 / c_in), (c_in, hidden)),
        fc1_bias=np.zeros(hidden),
        fc2=np.zeros((hidden, c_in + c_out + k * k)),
        fc2_bias=np.zeros(c_in + c_out + k * k),
    )


def channel_descriptor(x):
    """
    Spatial mean of each channel of a …×C×H×W feature.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim < 3 or x.shape[-2] < 1 or x.shape[-1] < 1:
        raise ValueError(f"expect C×H×W features, got {fmt_shape(x.shape)}")
    return x.mean(axis=(-2, -1))


#
# Channel convolution
#
def shift1d(d, s):
    """
    Return y with y[..., c] = d[..., c + s], reading zeros out of range.
    """
    out = np.zeros_like(d)
    n = d.shape[-1]
    if s >= 0:
        out[..., : max(n - s, 0)] = d[..., s:]
    else:
        out[..., -s:] = d[..., : max(n + s, 0)]
    return out


def conv1d(d, w):
    """
    Zero-padded 1-D correlation along the last axis of d.

    A window×K kernel maps a length-C descriptor to C×K values, with
    out[c, j] = Σ_t w[t, j]·d[c + t - window // 2].
    """
    d = np.asarray(d, dtype=float)
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] % 2 == 0:
        raise ValueError(f"expect an odd window × K kernel, got {fmt_shape(w.shape)}")
    r = w.shape[0] // 2
    out = 0.0
    for t in range(w.shape[0]):
        out = out + shift1d(d, t - r)[..., :, None] * w[t]
    return out


@defop("conv1d")
def _conv1d(d, w):
    return conv1d(d, w)


@_conv1d.defvjp
def _(g, out, d, w):
    r = w.shape[0] // 2
    gd = 0.0
    gw = np.zeros(g.shape[:-2] + w.shape)
    for t in range(w.shape[0]):
        gd = gd + shift1d(g @ w[t], r - t)
        gw[..., t, :] = np.einsum("...cj,...c->...j", g, shift1d(d, t - r))
    return gd, gw


#
# Branches
#
def local_branch(d, params: KsmParams, k, c_out):
    """
    Dense logits k×k×C_in×C_out: position c of the channel convolution supplies
    the slice at input channel c.
    """
    d = np.asarray(d, dtype=float)
    c_in = d.shape[-1]
    out = conv1d(d, params.local).reshape(d.shape[:-1] + (c_in, k, k, c_out))
    return np.moveaxis(out, -4, -2)


def global_branch(d, params: KsmParams, k, c_out):
    """
    Two-stage fully-connected map, split as (in-channel, out-channel, spatial).
    """
    d = np.asarray(d, dtype=float)
    c_in = d.shape[-1]
    if params.fc1.shape[0] != c_in:
        raise ValueError(
            f"descriptor has {c_in} channels, global branch expects {params.fc1.shape[0]}"
        )
    hidden = np.maximum(d @ params.fc1 + params.fc1_bias, 0.0)
    z = hidden @ params.fc2 + params.fc2_bias
    return z[..., :c_in], z[..., c_in : c_in + c_out], z[..., c_in + c_out :]


def fuse(local, g_in, g_out, g_spatial):
    """
    α = 2·sigmoid(L + g_in + g_out + g_spatial), each global vector broadcast
    along its own axis of the k×k×C_in×C_out lattice.
    """
    local = np.asarray(local, dtype=float)
    k = local.shape[-4]
    g_spatial = np.asarray(g_spatial)
    g_spatial = g_spatial.reshape(g_spatial.shape[:-1] + (k, k, 1, 1))
    g_in = np.asarray(g_in)[..., None, None, :, None]
    g_out = np.asarray(g_out)[..., None, None, None, :]
    return 2.0 * sigmoid(local + g_in + g_out + g_spatial)


def apply_modulation(w, alpha):
    w = np.asarray(w, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if w.shape[-4:] != alpha.shape[-4:]:
        raise ValueError(
            f"weight {fmt_shape(w.shape)} and modulation {fmt_shape(alpha.shape)} differ"
        )
    return w * alpha


def modulation(d, params: KsmParams, k, c_out):
    """
    Full KSM map from descriptor to α.
    """
    return fuse(local_branch(d, params, k, c_out), *global_branch(d, params, k, c_out))


#
# Tape builder
#
def record_modulation(tape, d, nodes, k, c_in, c_out):
    """
    Record α for a batch of descriptors (node of shape batch×C_in).

    nodes maps the KsmParams field names to parameter nodes.
    """
    local = tape.record("conv1d", d, nodes["local"])
    local = tape.record("reshape", local, shape=(-1, c_in, k, k, c_out))
    local = tape.record("transpose", local, axes=(0, 2, 3, 1, 4))

    hidden = tape.record("add", tape.record("matmul", d, nodes["fc1"]), nodes["fc1_bias"])
    hidden = tape.record("relu", hidden)
    z = tape.record("add", tape.record("matmul", hidden, nodes["fc2"]), nodes["fc2_bias"])

    every = slice(None)
    g_in = tape.record("slice", z, key=(every, slice(0, c_in)))
    g_out = tape.record("slice", z, key=(every, slice(c_in, c_in + c_out)))
    g_spatial = tape.record("slice", z, key=(every, slice(c_in + c_out, None)))
    g_in = tape.record("reshape", g_in, shape=(-1, 1, 1, c_in, 1))
    g_out = tape.record("reshape", g_out, shape=(-1, 1, 1, 1, c_out))
    g_spatial = tape.record("reshape", g_spatial, shape=(-1, k, k, 1, 1))

    logits = tape.record("add", tape.record("add", local, g_in), g_out)
    logits = tape.record("add", logits, g_spatial)
    return tape.record("scale", tape.record("sigmoid", logits), factor=2.0)
