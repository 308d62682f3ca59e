import numpy as np
import pytest

from fdconv.analysis import (
    band_energy_profile,
    export_modulation_maps,
    export_report,
    feature_band_energy,
    max_similarity,
    max_spectral_product,
    native_spectra,
    pairwise_cosine_similarity,
    read_matrix,
    spectral_overlap,
    weight_frequency_response,
    write_matrix,
)
from fdconv.checks import CheckResult
from fdconv.config import FDConvConfig
from fdconv.fbm import build_band_masks
from fdconv.layer import init_state


@pytest.fixture
def fdw_weights(rng):
    state = init_state(FDConvConfig(k=3, c_in=2, c_out=2, n=4), rng)
    return state.weights()


class TestFrequencyResponse:
    def test_delta_filter_is_flat(self):
        w = np.zeros((3, 3, 1, 1))
        w[1, 1] = 1.0
        report = weight_frequency_response(w, pad=16)
        assert report.spectra.shape == (1, 16, 16)
        assert np.max(np.abs(report.spectra - 1.0)) < 1e-14

    def test_constant_filter_peaks_at_dc(self):
        report = weight_frequency_response(np.ones((3, 3, 2, 2)), pad=32)
        spectrum = report.spectra[0]
        assert spectrum[0, 0] == pytest.approx(9.0)
        assert spectrum.max() == spectrum[0, 0]
        assert np.unravel_index(report.centered()[0].argmax(), (32, 32)) == (16, 16)

    def test_conjugate_symmetric(self, fdw_weights):
        spectra = weight_frequency_response(fdw_weights, pad=20).spectra
        assert np.all(spectra >= 0)
        flipped = np.roll(spectra[:, ::-1, ::-1], 1, axis=(1, 2))
        assert np.max(np.abs(spectra - flipped)) < 1e-12

    def test_native_grid_supports_are_disjoint(self, fdw_weights):
        spectra = native_spectra(fdw_weights)
        assert spectra.shape == (4, 6, 6)
        assert max_spectral_product(spectra) < 1e-12
        assert spectral_overlap(spectra) < 1e-12

    def test_overlapping_weights(self, rng):
        w = rng.standard_normal((2, 3, 3, 1, 1))
        assert spectral_overlap(native_spectra(w)) > 0.1

    def test_pad_below_kernel(self):
        with pytest.raises(ValueError, match="pad"):
            weight_frequency_response(np.zeros((5, 5, 1, 1)), pad=4)


class TestSimilarity:
    def test_identical_and_opposite(self, rng):
        w = rng.standard_normal((3, 3, 2, 2))
        matrix = pairwise_cosine_similarity(np.stack([w, w, -w])).matrix
        assert matrix[0, 1] == pytest.approx(1.0)
        assert matrix[0, 2] == pytest.approx(-1.0)
        assert np.array_equal(np.diag(matrix), np.ones(3))

    def test_symmetric(self, rng):
        matrix = pairwise_cosine_similarity(rng.standard_normal((5, 3, 3, 2, 2))).matrix
        assert np.max(np.abs(matrix - matrix.T)) < 1e-14

    def test_zero_norm_flagged(self, rng):
        w = rng.standard_normal((3, 3, 3, 1, 2))
        w[1] = 0.0
        report = pairwise_cosine_similarity(w)
        assert report.zero_norm.tolist() == [False, True, False]
        assert np.isnan(report.matrix[1]).all() and np.isnan(report.matrix[:, 1]).all()
        assert report.max_offdiag() == pytest.approx(abs(report.matrix[0, 2]))

    def test_fdw_weights_are_orthogonal(self, fdw_weights):
        report = pairwise_cosine_similarity(fdw_weights)
        assert report.max_offdiag() < 1e-8
        assert max_similarity(fdw_weights) < 1e-8

    def test_single_weight(self, rng):
        assert max_similarity(rng.standard_normal((3, 3, 1, 1))) == 0.0


class TestBandEnergy:
    def test_profile_fractions(self, fdw_weights):
        profile = band_energy_profile(fdw_weights, pad=32)
        assert profile.shape == (4, 4)
        assert list(profile.columns) == ["band_0", "band_1", "band_2", "band_3"]
        assert np.max(np.abs(profile.sum(axis=1) - 1)) < 1e-12

    def test_zero_weight_has_no_energy(self):
        profile = band_energy_profile(np.zeros((1, 3, 3, 1, 1)), pad=8)
        assert not profile.to_numpy().any()

    def test_feature_energy(self, rng):
        x = rng.standard_normal((2, 16, 16))
        masks = build_band_masks(16, 16)
        unit = feature_band_energy(x, np.ones((4, 16, 16)), masks)
        assert unit["before"].sum() == pytest.approx(np.sum(x ** 2))
        assert np.allclose(unit["after"], unit["before"], rtol=1e-12)

        halved = feature_band_energy(x, np.full((4, 16, 16), 0.5), masks)
        assert np.allclose(halved["after"], unit["before"] / 4, rtol=1e-12)


class TestExport:
    def test_round_trip(self, tmp_path, rng):
        matrix = rng.standard_normal((4, 5)) * 1e-7
        write_matrix(tmp_path / "m.csv", matrix)
        assert np.array_equal(read_matrix(tmp_path / "m.csv"), matrix)

        write_matrix(tmp_path / "s.csv", matrix, labels=False)
        assert np.array_equal(read_matrix(tmp_path / "s.csv", labels=False), matrix)
        header = (tmp_path / "s.csv").read_text().splitlines()[0]
        assert header == "-2,-1,0,1,2"

    def test_empty_report(self, tmp_path):
        files = export_report(tmp_path / "out")
        assert [p.name for p in files] == ["manifest.txt"]
        assert "(none)" in files[0].read_text()

    def test_weight_report(self, tmp_path, fdw_weights):
        checks = [CheckResult("fdw", "orthogonality", 1e-17, 1e-8)]
        files = export_report(
            tmp_path, fdw_weights, config="k = 3", pad=16, checks=checks
        )
        names = [p.name for p in files]
        assert names == [
            "spectrum_0.csv",
            "spectrum_1.csv",
            "spectrum_2.csv",
            "spectrum_3.csv",
            "similarity.csv",
            "manifest.txt",
        ]
        spectrum = read_matrix(tmp_path / "spectrum_2.csv", labels=False)
        expected = weight_frequency_response(fdw_weights, 16).centered()[2]
        assert np.array_equal(spectrum, expected)

        manifest = (tmp_path / "manifest.txt").read_text()
        assert "k = 3" in manifest
        assert "[pass] orthogonality" in manifest
        assert "similarity.csv" in manifest

    def test_identical_weights_similarity(self, tmp_path, rng):
        w = rng.standard_normal((3, 3, 1, 2))
        export_report(tmp_path, np.stack([w, w, w]), pad=8)
        assert np.allclose(read_matrix(tmp_path / "similarity.csv"), 1.0, atol=1e-15)

    def test_extra_tables(self, tmp_path, fdw_weights):
        profile = band_energy_profile(fdw_weights, pad=16)
        files = export_report(tmp_path, tables={"band_energy.csv": profile})
        assert [p.name for p in files] == ["band_energy.csv", "manifest.txt"]

    def test_modulation_maps(self, tmp_path, rng):
        a = rng.uniform(0, 1, (3, 4, 4))
        files = export_modulation_maps(a, tmp_path, prefix="sample0")
        expected = [f"modulation_sample0_{b}.csv" for b in range(3)]
        assert [p.name for p in files] == expected
        assert np.array_equal(read_matrix(files[1], labels=False), a[1])

    def test_unwritable_destination(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(OSError, match="cannot create report directory"):
            export_report(blocker / "out")
