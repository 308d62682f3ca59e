"""
The composed FDConv layer.

attention π → FDW mixture → KSM modulation → FBM forward, each stage also
available as a tape builder for training. Tensors are flattened into a name →
array mapping (see :meth:`LayerState.tensors`) for optimizers and checkpoints.
"""
from typing import NamedTuple, Optional

import numpy as np

from . import fbm, ksm
from .autodiff import softmax
from .config import FDConvConfig
from .fdw import init_bank, materialize_weights, mix_weights
from .numerics import conv2d_direct
from .utils import as_rng, fmt_shape


class AttentionParams(NamedTuple):
    fc1: np.ndarray  # C_in × hidden
    fc1_bias: np.ndarray
    fc2: np.ndarray  # hidden × n
    fc2_bias: np.ndarray


class ModulationState(NamedTuple):
    pi: np.ndarray
    alpha: Optional[np.ndarray]
    bands: Optional[np.ndarray]


class ParamCount(NamedTuple):
    bank: int
    attention: int
    ksm: int
    fbm: int
    total: int
    dense_equivalent: int  # n independent weights, CondConv style

    @property
    def ratio(self):
        return self.dense_equivalent / self.bank


class LayerState(NamedTuple):
    config: FDConvConfig
    bank: np.ndarray
    attention: AttentionParams
    ksm: Optional[ksm.KsmParams]
    fbm: Optional[fbm.FbmParams]

    def weights(self):
        """
        The n materialized FDW weights, stacked.
        """
        return materialize_weights(self.bank, self.config.assignment)

    def tensors(self):
        """
        Flat name → array mapping of every parameter.
        """
        out = {"bank": self.bank}
        parts = [("attention", self.attention), ("ksm", self.ksm), ("fbm", self.fbm)]
        for prefix, params in parts:
            if params is not None:
                out.update({f"{prefix}.{k}": v for k, v in params._asdict().items()})
        return out

    @classmethod
    def from_tensors(cls, config: FDConvConfig, tensors):
        """
        Inverse of tensors().
        """

        def group(kind, prefix):
            fields = {f: tensors[f"{prefix}.{f}"] for f in kind._fields}
            return kind(**fields)

        try:
            return cls(
                config,
                tensors["bank"],
                group(AttentionParams, "attention"),
                group(ksm.KsmParams, "ksm") if config.enable_ksm else None,
                group(fbm.FbmParams, "fbm") if config.enable_fbm else None,
            )
        except KeyError as ex:
            raise ValueError(f"missing layer tensor: {ex.args[0]}")


def init_state(config: FDConvConfig, rng=None) -> LayerState:
    """
    Initial layer state: Kaiming-like spectral bank, zero final stages.
    """
    rng = as_rng(config.seed if rng is None else rng)
    c_in, hidden = config.c_in, ksm.hidden_width(config.c_in)
    bank = init_bank(config.table, rng)
    attention = AttentionParams(
        fc1=rng.normal(0.0, np.sqrt(2.0 / c_in), (c_in, hidden)),
        fc1_bias=np.zeros(hidden),
        fc2=np.zeros((hidden, config.n)),
        fc2_bias=np.zeros(config.n),
    )
    ksm_params = None
    if config.enable_ksm:
        ksm_params = ksm.init_ksm(config.k, c_in, config.c_out, rng)
    fbm_params = None
    if config.enable_fbm:
        fbm_params = fbm.init_fbm(c_in, config.band_count)
    return LayerState(config, bank, attention, ksm_params, fbm_params)


def random_state(config: FDConvConfig, rng=None, scale=0.1) -> LayerState:
    """
    Initial state with Gaussian noise of deviation scale added to every
    parameter, so that no stage sits at its identity point.
    """
    rng = as_rng(config.seed if rng is None else rng)
    tensors = init_state(config, rng).tensors()
    noisy = {k: v + scale * rng.standard_normal(v.shape) for k, v in tensors.items()}
    return LayerState.from_tensors(config, noisy)


def init_static(config: FDConvConfig, rng=None):
    """
    Kaiming-initialized weight of the static baseline layer.
    """
    rng = as_rng(config.seed if rng is None else rng)
    k, c_in, c_out = config.k, config.c_in, config.c_out
    return rng.normal(0.0, np.sqrt(2.0 / (k * k * c_in)), (k, k, c_in, c_out))


#
# Forward
#
def _check_input(x, config):
    x = np.asarray(x, dtype=float)
    if x.ndim < 3 or x.shape[-3] != config.c_in:
        raise ValueError(
            f"expect features with {config.c_in} channels, got {fmt_shape(x.shape)}"
        )
    if min(x.shape[-2:]) < config.k:
        raise ValueError(
            f"features {fmt_shape(x.shape)} smaller than kernel k={config.k}"
        )
    return x


def attention_pi(x, params: AttentionParams, tau=1.0):
    """
    Attention over the n weights: pool, FC, rectify, FC, softmax with
    temperature τ.
    """
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got tau={tau}")
    d = ksm.channel_descriptor(x)
    hidden = np.maximum(d @ params.fc1 + params.fc1_bias, 0.0)
    return softmax(hidden @ params.fc2 + params.fc2_bias, tau)


def fdconv_forward(x, state: LayerState, return_state=False):
    """
    Forward pass of the FDConv layer over C_in×H×W features (optionally batched).

    Disabled stages act as identity (α ≡ 1, A ≡ 1). With return_state, also
    return the ModulationState of the pass.
    """
    config = state.config
    x = _check_input(x, config)
    pi = attention_pi(x, state.attention, config.tau)
    w = mix_weights(state.weights(), pi)

    alpha = bands = None
    if config.enable_ksm:
        d = ksm.channel_descriptor(x)
        alpha = ksm.modulation(d, state.ksm, config.k, config.c_out)
        w = ksm.apply_modulation(w, alpha)

    if config.enable_fbm:
        masks = config.masks(*x.shape[-2:])
        bands = fbm.predict_modulation(x, state.fbm)
        y = fbm.fbm_forward(x, w, bands, masks)
    else:
        y = conv2d_direct(x, w, "circular")

    if return_state:
        return y, ModulationState(pi, alpha, bands)
    return y


def static_conv_forward(x, w):
    """
    Baseline: plain circular convolution with a single learned weight.
    """
    return conv2d_direct(x, w, "circular")


def param_count(config: FDConvConfig) -> ParamCount:
    """
    Exact parameter tally per component.
    """
    k, c_in, c_out, n = config.k, config.c_in, config.c_out, config.n
    hidden = ksm.hidden_width(c_in)
    bank = k * k * c_in * c_out
    attention = c_in * hidden + hidden + hidden * n + n
    ksm_count = fbm_count = 0
    if config.enable_ksm:
        split = c_in + c_out + k * k
        local = ksm.WINDOW * k * k * c_out
        ksm_count = local + c_in * hidden + hidden + (hidden + 1) * split
    if config.enable_fbm:
        planes = config.band_count - 1
        fbm_count = fbm.PREDICTOR_KERNEL ** 2 * c_in * planes + planes
    total = bank + attention + ksm_count + fbm_count
    return ParamCount(bank, attention, ksm_count, fbm_count, total, n * bank)


#
# Tape builders
#
def record_attention(tape, d, nodes, tau):
    hidden = tape.record("matmul", d, nodes["attention.fc1"])
    hidden = tape.record("relu", tape.record("add", hidden, nodes["attention.fc1_bias"]))
    logits = tape.record("matmul", hidden, nodes["attention.fc2"])
    logits = tape.record("add", logits, nodes["attention.fc2_bias"])
    return tape.record("softmax", logits, tau=tau)


def record_fdconv(tape, x, nodes, config: FDConvConfig, masks=None):
    """
    Record the layer on a tape for a batch×C_in×H×W input node.

    nodes maps the names of LayerState.tensors() to parameter nodes.
    """
    k, c_in, c_out, n = config.k, config.c_in, config.c_out, config.n
    d = tape.record("global-average-pool", x)
    pi = record_attention(tape, d, nodes, config.tau)

    weights = tape.record("fdw-materialize", nodes["bank"], assignment=config.assignment)
    weights = tape.record("reshape", weights, shape=(n, k * k * c_in * c_out))
    w = tape.record("matmul", pi, weights)
    w = tape.record("reshape", w, shape=(-1, k, k, c_in, c_out))

    if config.enable_ksm:
        names = {f: nodes[f"ksm.{f}"] for f in ksm.KsmParams._fields}
        alpha = ksm.record_modulation(tape, d, names, k, c_in, c_out)
        w = tape.record("multiply", w, alpha)

    if config.enable_fbm and config.band_count > 1:
        h, wd = tape.value(x).shape[-2:]
        masks = masks or config.masks(h, wd)
        planes = fbm.record_modulation(
            tape, x, nodes["fbm.weight"], nodes["fbm.bias"], config.band_count
        )
        x = fbm.record_recombine(tape, x, planes, masks)

    return tape.record("conv2d", x, w, mode="circular")


def record_static_conv(tape, x, weight):
    return tape.record("conv2d", x, weight, mode="circular")


def record_classifier(tape, features, weight, bias):
    """
    Rectify, pool and project features to class logits.
    """
    pooled = tape.record("global-average-pool", tape.record("relu", features))
    return tape.record("add", tape.record("matmul", pooled, weight), bias)


def classifier_logits(features, weight, bias):
    pooled = np.maximum(features, 0.0).mean(axis=(-2, -1))
    return pooled @ weight + bias
