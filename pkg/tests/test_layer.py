import numpy as np
import pytest

from fdconv.autodiff import evaluate
from fdconv.checks import layer_loss
from fdconv.config import FDConvConfig
from fdconv.fbm import fbm_forward, predict_modulation
from fdconv.layer import (
    AttentionParams,
    LayerState,
    attention_pi,
    fdconv_forward,
    init_state,
    init_static,
    param_count,
    random_state,
    static_conv_forward,
)
from fdconv.numerics import conv2d_direct


def direct_softmax(z, tau=1.0):
    e = np.exp(np.asarray(z) / tau)
    return e / e.sum(axis=-1, keepdims=True)


class TestAttention:
    def test_uniform_at_init(self, rng, small_layer):
        state = init_state(small_layer, rng)
        pi = attention_pi(rng.standard_normal((3, 2, 8, 8)), state.attention)
        assert np.max(np.abs(pi - 0.25)) < 1e-15

    def test_temperature_limit(self, rng):
        params = AttentionParams(
            fc1=np.ones((2, 1)),
            fc1_bias=np.zeros(1),
            fc2=np.zeros((1, 4)),
            fc2_bias=np.array([3.0, -1.0, 0.5, 2.0]),
        )
        x = rng.standard_normal((2, 8, 8))
        sharp = attention_pi(x, params, tau=1.0)
        flat = attention_pi(x, params, tau=1e4)
        assert sharp.max() - sharp.min() > 0.5
        assert flat.max() - flat.min() < 1e-3

    def test_matches_direct_softmax(self, rng, small_layer):
        state = random_state(small_layer, rng, scale=1.0)
        params = state.attention
        x = rng.standard_normal((5, 2, 8, 8))
        d = x.mean(axis=(-2, -1))
        hidden = np.maximum(d @ params.fc1 + params.fc1_bias, 0)
        logits = hidden @ params.fc2 + params.fc2_bias
        pi = attention_pi(x, params, tau=0.7)
        assert np.max(np.abs(pi - direct_softmax(logits, 0.7))) < 1e-14
        assert np.array_equal(pi.argmax(axis=-1), logits.argmax(axis=-1))

    def test_simplex(self, rng, small_layer):
        state = random_state(small_layer, rng, scale=2.0)
        pi = attention_pi(3 * rng.standard_normal((20, 2, 8, 8)), state.attention)
        assert np.max(np.abs(pi.sum(axis=-1) - 1)) < 1e-12
        assert np.all(pi > 0)

    def test_temperature_must_be_positive(self, rng, small_layer):
        state = init_state(small_layer, rng)
        with pytest.raises(ValueError, match="tau"):
            attention_pi(np.zeros((2, 4, 4)), state.attention, tau=0.0)


class TestForward:
    def test_degenerate_collapse(self, rng):
        config = FDConvConfig(k=3, c_in=2, c_out=3, n=1)
        config = config.replace(enable_ksm=False, enable_fbm=False)
        state = random_state(config, rng)
        x = rng.standard_normal((2, 9, 9))
        expected = conv2d_direct(x, state.weights()[0], "circular")
        assert np.max(np.abs(fdconv_forward(x, state) - expected)) < 1e-10

    def test_initial_layer_uses_mean_weight(self, rng, small_layer):
        config = small_layer.replace(enable_fbm=False)
        state = init_state(config, rng)
        x = rng.standard_normal((2, 12, 12))
        mean = state.weights().mean(axis=0)
        expected = conv2d_direct(x, mean, "circular")
        assert np.max(np.abs(fdconv_forward(x, state) - expected)) < 1e-10

    def test_initial_layer_with_band_modulation(self, rng, small_layer):
        state = init_state(small_layer, rng)
        x = rng.standard_normal((2, 16, 16))
        mean = state.weights().mean(axis=0)
        a = predict_modulation(x, state.fbm)
        expected = fbm_forward(x, mean, a, small_layer.masks(16, 16))
        assert np.max(np.abs(fdconv_forward(x, state) - expected)) < 1e-10

    def test_batch_is_per_sample(self, rng, small_layer):
        state = random_state(small_layer, rng)
        x = rng.standard_normal((3, 2, 16, 16))
        batch = fdconv_forward(x, state)
        assert batch.shape == (3, 4, 16, 16)
        for i in range(3):
            assert np.max(np.abs(batch[i] - fdconv_forward(x[i], state))) < 1e-12

    def test_modulation_state(self, rng, small_layer):
        state = random_state(small_layer, rng)
        x = rng.standard_normal((2, 2, 16, 16))
        y, mod = fdconv_forward(x, state, return_state=True)
        assert mod.pi.shape == (2, 4)
        assert mod.alpha.shape == (2, 3, 3, 2, 4)
        assert mod.bands.shape == (2, 4, 16, 16)
        assert np.array_equal(y, fdconv_forward(x, state))

    def test_disabled_stages_report_nothing(self, rng, small_layer):
        config = small_layer.replace(enable_ksm=False, enable_fbm=False)
        _, mod = fdconv_forward(np.ones((2, 8, 8)), init_state(config, rng), True)
        assert mod.alpha is None and mod.bands is None

    def test_deterministic(self, small_layer):
        x = np.random.default_rng(1).standard_normal((2, 16, 16))
        first = fdconv_forward(x, random_state(small_layer, 5))
        second = fdconv_forward(x, random_state(small_layer, 5))
        assert np.array_equal(first, second)

    def test_matches_tape(self, rng, small_layer):
        state = random_state(small_layer, rng)
        x = rng.standard_normal((2, 2, 16, 16))
        r = rng.standard_normal((2, 4, 16, 16))
        value = evaluate(layer_loss(small_layer, x, r), state.tensors())
        assert value == pytest.approx(np.sum(r * fdconv_forward(x, state)), abs=1e-10)

    def test_reject_bad_inputs(self, rng, small_layer):
        state = init_state(small_layer, rng)
        with pytest.raises(ValueError, match="2 channels"):
            fdconv_forward(np.zeros((3, 8, 8)), state)
        with pytest.raises(ValueError, match="smaller than kernel"):
            fdconv_forward(np.zeros((2, 2, 8)), state)

    @pytest.mark.parametrize("s", [1, 2])
    def test_pointwise_layer_on_tiny_features(self, rng, s):
        config = FDConvConfig(k=1, c_in=1, c_out=2, n=1)
        state = random_state(config, rng)
        x = rng.standard_normal((3, 1, s, s))
        y = fdconv_forward(x, state)
        assert y.shape == (3, 2, s, s)
        assert np.all(np.isfinite(y))

        r = rng.standard_normal(y.shape)
        value = evaluate(layer_loss(config, x, r), state.tensors())
        assert value == pytest.approx(np.sum(r * y), abs=1e-10)

    def test_static_baseline(self, rng, small_layer):
        w = init_static(small_layer, rng)
        x = rng.standard_normal((2, 6, 6))
        assert w.shape == (3, 3, 2, 4)
        assert np.array_equal(static_conv_forward(x, w), conv2d_direct(x, w, "circular"))


class TestState:
    def test_tensor_round_trip(self, rng, small_layer):
        state = random_state(small_layer, rng)
        back = LayerState.from_tensors(small_layer, state.tensors())
        for name, value in back.tensors().items():
            assert np.array_equal(value, state.tensors()[name])

    def test_disabled_stages_have_no_tensors(self, rng, small_layer):
        config = small_layer.replace(enable_ksm=False, enable_fbm=False)
        names = set(init_state(config, rng).tensors())
        assert names == {"bank", *(f"attention.{f}" for f in AttentionParams._fields)}

    def test_missing_tensor(self, rng, small_layer):
        tensors = init_state(small_layer, rng).tensors()
        del tensors["ksm.fc2"]
        with pytest.raises(ValueError, match="ksm.fc2"):
            LayerState.from_tensors(small_layer, tensors)

    def test_seed_from_config(self, small_layer):
        a = init_state(small_layer.replace(seed=3))
        b = init_state(small_layer.replace(seed=3))
        assert np.array_equal(a.bank, b.bank)


class TestParamCount:
    @pytest.mark.parametrize("n", [1, 2, 4, 16, 64])
    def test_budget_invariance(self, n):
        count = param_count(FDConvConfig(k=3, c_in=64, c_out=64, n=n))
        assert count.bank == 36_864
        assert count.dense_equivalent == n * 36_864
        assert count.ratio == n

    def test_total_matches_state(self):
        config = FDConvConfig(k=3, c_in=1, c_out=8, n=8)
        count = param_count(config)
        sizes = {k: v.size for k, v in init_state(config).tensors().items()}
        assert count.total == sum(sizes.values())
        assert count.bank == sizes["bank"]
        assert count.fbm == sizes["fbm.weight"] + sizes["fbm.bias"]
        assert count.ksm == sum(v for k, v in sizes.items() if k.startswith("ksm."))
        assert count.total == count.bank + count.attention + count.ksm + count.fbm

    def test_disabled_stages(self):
        config = FDConvConfig(k=3, c_in=4, c_out=4, n=4)
        config = config.replace(enable_ksm=False, enable_fbm=False)
        count = param_count(config)
        assert count.ksm == count.fbm == 0
        assert count.total == count.bank + count.attention
