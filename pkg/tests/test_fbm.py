import numpy as np
import pytest

from fdconv.fbm import (
    DEFAULT_BANDS,
    FbmParams,
    band_decompose,
    band_filter,
    build_band_masks,
    check_bands,
    fbm_forward,
    fbm_forward_postmod,
    init_fbm,
    predict_modulation,
    recombine,
)
from fdconv.numerics import conv2d_direct


def cosine(s, u, v):
    i, j = np.meshgrid(np.arange(s), np.arange(s), indexing="ij")
    return np.cos(2 * np.pi * (u * i + v * j) / s)


class TestMasks:
    def test_single_band(self):
        masks = build_band_masks(7, 5, (0.0, 0.5))
        assert masks.count == 1
        assert np.all(masks.masks == 1.0)

    def test_default_bands(self):
        assert build_band_masks(32, 32).count == 4
        assert build_band_masks(32, 32).thresholds == DEFAULT_BANDS

    def test_thresholds_as_list(self):
        masks = build_band_masks(8, 8, [0.0, 0.25, 0.5])
        assert masks.thresholds == (0.0, 0.25, 0.5)
        assert masks is build_band_masks(8, 8, (0.0, 0.25, 0.5))
        with pytest.raises(ValueError, match="end at 1/2"):
            build_band_masks(8, 8, [0.0, 0.25])

    def test_eight_by_eight(self):
        masks = build_band_masks(8, 8, (0.0, 0.25, 0.5))
        assert masks.masks[0].sum() == 9
        assert masks.masks[1].sum() == 55
        centered = masks.centered()[0]
        assert np.all(centered[3:6, 3:6] == 1.0)

    @pytest.mark.parametrize("shape", [(1, 1), (5, 7), (16, 16), (32, 31)])
    def test_partition(self, shape):
        masks = build_band_masks(*shape)
        assert np.array_equal(masks.masks.sum(axis=0), np.ones(shape))
        assert set(np.unique(masks.masks)) <= {0.0, 1.0}

    def test_nyquist_goes_to_top_band(self):
        masks = build_band_masks(8, 8)
        assert masks.masks[-1][4, 0] == 1.0
        assert masks.masks[-1][4, 4] == 1.0

    def test_masks_are_frozen(self):
        with pytest.raises(ValueError):
            build_band_masks(4, 4).masks[0, 0, 0] = 0.0

    @pytest.mark.parametrize(
        "bands",
        [(0.0,), (0.1, 0.5), (0.0, 0.25), (0.0, 0.3, 0.2, 0.5), (0.0, "a", 0.5)],
    )
    def test_invalid_thresholds(self, bands):
        with pytest.raises(ValueError):
            check_bands(bands)

    def test_thresholds_are_normalized(self):
        assert check_bands([0, "0.25", 0.5]) == (0.0, 0.25, 0.5)


class TestFilter:
    def test_all_ones_mask(self, rng):
        x = rng.standard_normal((2, 8, 8))
        assert np.max(np.abs(band_filter(x, np.ones((8, 8))) - x)) < 1e-12

    def test_constant_input(self):
        x = np.full((1, 16, 16), 3.0)
        masks = build_band_masks(16, 16)
        assert np.max(np.abs(band_filter(x, masks.masks[0]) - x)) < 1e-12
        for mask in masks.masks[1:]:
            assert np.max(np.abs(band_filter(x, mask))) < 1e-12

    def test_cosine_lands_in_one_band(self):
        x = cosine(16, 2, 0)[None]
        bands = band_decompose(x, build_band_masks(16, 16))
        energy = (bands ** 2).sum(axis=(-3, -2, -1))
        assert np.argmax(energy) == 2
        assert np.max(np.abs(bands[2] - x)) < 1e-10
        assert np.max(np.abs(np.delete(bands, 2, axis=0))) < 1e-10

    def test_partition_of_unity(self, rng):
        for s in (4, 9, 16, 32):
            x = rng.standard_normal((3, s, s))
            bands = band_decompose(x, build_band_masks(s, s))
            assert np.max(np.abs(bands.sum(axis=0) - x)) < 1e-10

    def test_idempotent_and_disjoint(self, rng):
        x = rng.standard_normal((2, 16, 16))
        masks = build_band_masks(16, 16).masks
        for i, mi in enumerate(masks):
            once = band_filter(x, mi)
            assert np.max(np.abs(band_filter(once, mi) - once)) < 1e-10
            for j, mj in enumerate(masks):
                if i != j:
                    assert np.max(np.abs(band_filter(once, mj))) < 1e-10

    def test_decompose_matches_filter(self, rng):
        x = rng.standard_normal((2, 3, 8, 8))
        masks = build_band_masks(8, 8)
        bands = band_decompose(x, masks)
        assert bands.shape == (2, 4, 3, 8, 8)
        assert np.max(np.abs(bands[:, 1] - band_filter(x, masks.masks[1]))) < 1e-13

    def test_mask_shape_mismatch(self):
        with pytest.raises(ValueError, match="does not match"):
            band_filter(np.zeros((1, 8, 8)), np.ones((4, 4)))


class TestModulation:
    def test_zero_predictor(self, rng):
        a = predict_modulation(rng.standard_normal((3, 8, 8)), init_fbm(3, 4))
        assert a.shape == (4, 8, 8)
        assert np.all(a[0] == 1.0)
        assert np.all(a[1:] == 0.5)

    def test_range(self, rng):
        params = FbmParams(rng.standard_normal((3, 3, 2, 3)) * 5, rng.standard_normal(3))
        a = predict_modulation(rng.standard_normal((4, 2, 8, 8)), params)
        assert a.shape == (4, 4, 8, 8)
        assert np.all(a[:, 0] == 1.0)
        assert np.all((a >= 0) & (a <= 1))

    def test_matches_conv_oracle(self, rng):
        params = FbmParams(rng.standard_normal((3, 3, 2, 3)), rng.standard_normal(3))
        x = rng.standard_normal((2, 6, 6))
        z = conv2d_direct(x, params.weight, "zero") + params.bias[:, None, None]
        expected = 1 / (1 + np.exp(-z))
        assert np.max(np.abs(predict_modulation(x, params)[1:] - expected)) < 1e-13

    def test_single_band_has_no_predictor(self, rng):
        a = predict_modulation(rng.standard_normal((2, 5, 5)), init_fbm(2, 1))
        assert a.shape == (1, 5, 5)
        assert np.all(a == 1.0)

    def test_plane_count_mismatch(self, rng):
        masks = build_band_masks(8, 8)
        with pytest.raises(ValueError, match="planes"):
            recombine(rng.standard_normal((1, 8, 8)), np.ones((3, 8, 8)), masks)


class TestForward:
    def setup_method(self):
        rng = np.random.default_rng(7)
        self.x = rng.standard_normal((2, 16, 16))
        self.w = rng.standard_normal((3, 3, 2, 3))
        self.masks = build_band_masks(16, 16)
        self.plain = conv2d_direct(self.x, self.w, "circular")

    def test_unit_modulation(self):
        a = np.ones((4, 16, 16))
        out = fbm_forward(self.x, self.w, a, self.masks)
        assert np.max(np.abs(out - self.plain)) < 1e-10
        postmod = fbm_forward_postmod(self.x, self.w, a, self.masks)
        assert np.max(np.abs(postmod - self.plain)) < 1e-10

    def test_single_band_is_plain_convolution(self):
        masks = build_band_masks(16, 16, (0.0, 0.5))
        out = fbm_forward(self.x, self.w, np.ones((1, 16, 16)), masks)
        assert np.array_equal(out, self.plain)

    def test_constant_modulation(self):
        c = np.array([1.0, 0.3, 1.7, 0.05])
        a = np.broadcast_to(c[:, None, None], (4, 16, 16))
        bands = band_decompose(self.x, self.masks)
        parts = [conv2d_direct(bands[b], self.w, "circular") for b in range(4)]
        expected = sum(c[b] * parts[b] for b in range(4))
        out = fbm_forward(self.x, self.w, a, self.masks)
        assert np.max(np.abs(out - expected)) < 1e-10
        postmod = fbm_forward_postmod(self.x, self.w, a, self.masks)
        assert np.max(np.abs(out - postmod)) < 1e-10

    def test_varying_modulation_differs(self):
        a = np.random.default_rng(3).uniform(0, 1, (4, 16, 16))
        out = fbm_forward(self.x, self.w, a, self.masks)
        postmod = fbm_forward_postmod(self.x, self.w, a, self.masks)
        assert np.max(np.abs(out - postmod)) > 1e-3

    def test_batched(self):
        x = np.stack([self.x, 2 * self.x])
        a = np.ones((2, 4, 16, 16))
        out = fbm_forward(x, self.w, a, self.masks)
        assert out.shape == (2, 3, 16, 16)
        assert np.max(np.abs(out[1] - 2 * self.plain)) < 1e-9
