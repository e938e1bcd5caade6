import numpy as np
import pytest

from doacal import (ArrayGeometry, CovarianceMatrix, DirectionGrid,
                    SourceScene, SpatialSpectrum, WaveformConfig,
                    dbf_spectrum, generate_cfr, music_spectrum, pick_aoa,
                    sample_covariance, synth_profile)
from doacal.simulate import SPEED_OF_LIGHT, ProfileSynthParams

F0 = 4.85e9


@pytest.fixture
def geom():
    return ArrayGeometry(4, SPEED_OF_LIGHT / (2 * F0), F0)


@pytest.fixture
def grid():
    return DirectionGrid.from_spacing(-60, 60, 1.0)


def random_psd_cov(rng, m=4):
    x = rng.standard_normal((m, 8)) + 1j * rng.standard_normal((m, 8))
    r = x @ x.conj().T
    return CovarianceMatrix(0.5 * (r + r.conj().T), 8)


class TestSampleCovariance:
    def test_all_ones_cfr(self, geom):
        wave = WaveformConfig(16, 30e3)
        from doacal.simulate import CfrSet
        cfr = CfrSet(np.ones((4, 16), dtype=complex), geom, wave, 0)
        cov = sample_covariance(cfr)
        assert np.allclose(cov.r, 16.0 * np.ones((4, 4)))

    def test_identical_columns_rank_one(self, geom):
        wave = WaveformConfig(16, 30e3)
        from doacal.simulate import CfrSet
        rng = np.random.default_rng(0)
        col = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        h = np.tile(col[:, None], (1, 16))
        cov = sample_covariance(CfrSet(h, geom, wave, 0))
        vals = np.linalg.eigvalsh(cov.r)
        assert np.sum(vals > 1e-10 * vals[-1]) == 1
        assert np.trace(cov.r).real == pytest.approx(16 * np.sum(np.abs(col) ** 2))

    def test_random_cfr_is_psd(self, geom):
        wave = WaveformConfig(16, 30e3)
        cfr = generate_cfr(SourceScene.single(10.0, snr_db=0.0), geom, wave, seed=1)
        cov = sample_covariance(cfr)
        vals = np.linalg.eigvalsh(cov.r)
        assert vals.min() >= -1e-8 * np.trace(cov.r).real

    def test_hermitian_residual_small(self, geom):
        rng = np.random.default_rng(2)
        cov = random_psd_cov(rng)
        vals, vecs = np.linalg.eigh(cov.r)
        recon = (vecs * vals) @ vecs.conj().T
        rel = np.linalg.norm(cov.r - recon) / np.linalg.norm(cov.r)
        assert rel < 1e-10


class TestDbfSpectrum:
    def test_identity_covariance_flat(self, geom, grid):
        cov = CovarianceMatrix(np.eye(4, dtype=complex), 1)
        spec = dbf_spectrum(cov, grid, geom)
        assert np.allclose(spec.values, 4.0)

    def test_noiseless_single_source_argmax(self, geom, grid):
        wave = WaveformConfig(16, 30e3)
        cfr = generate_cfr(SourceScene.single(23.0), geom, wave, seed=4)
        spec = dbf_spectrum(sample_covariance(cfr), grid, geom)
        assert pick_aoa(spec) == 23.0

    def test_two_sources_local_maxima_near_truth(self, geom, grid):
        from doacal.simulate import Source
        wave = WaveformConfig(16, 30e3)
        scene = SourceScene((Source(-40.0), Source(40.0)), snr_db=30.0)
        cfr = generate_cfr(scene, geom, wave, seed=8)
        v = dbf_spectrum(sample_covariance(cfr), grid, geom).values
        peaks = [i for i in range(1, len(v) - 1) if v[i] > v[i - 1] and v[i] > v[i + 1]]
        top2 = sorted(peaks, key=lambda i: v[i])[-2:]
        found = sorted(grid.angles[i] for i in top2)
        assert abs(found[0] - (-40.0)) <= 1.0
        assert abs(found[1] - 40.0) <= 1.0

    def test_linearity_in_covariance(self, geom, grid):
        rng = np.random.default_rng(3)
        cov = random_psd_cov(rng)
        scaled = CovarianceMatrix(2.5 * cov.r, cov.num_snapshots)
        a = dbf_spectrum(cov, grid, geom).values
        b = dbf_spectrum(scaled, grid, geom).values
        assert np.allclose(b, 2.5 * a)
        assert pick_aoa(dbf_spectrum(cov, grid, geom)) == pick_aoa(
            dbf_spectrum(scaled, grid, geom))


class TestMusicSpectrum:
    def test_exact_recovery_on_grid(self, geom, grid):
        wave = WaveformConfig(16, 30e3)
        cfr = generate_cfr(SourceScene.single(-37.0), geom, wave, seed=6)
        spec = music_spectrum(sample_covariance(cfr), 1, grid, geom)
        assert pick_aoa(spec) == -37.0

    def test_identity_covariance_finite(self, geom, grid):
        cov = CovarianceMatrix(np.eye(4, dtype=complex), 1)
        spec = music_spectrum(cov, 1, grid, geom)
        assert np.all(np.isfinite(spec.values))

    def test_num_sources_bounds(self, geom, grid):
        cov = CovarianceMatrix(np.eye(4, dtype=complex), 1)
        with pytest.raises(ValueError):
            music_spectrum(cov, 4, grid, geom)
        with pytest.raises(ValueError):
            music_spectrum(cov, 0, grid, geom)

    def test_impairment_biases_music(self, geom, grid):
        # Simulation oracle: with angular-dependent phase errors at the
        # 20-degree scale, the subspace scan has a systematic bias at
        # high SNR.
        wave = WaveformConfig(16, 30e3)
        profile = synth_profile(geom, grid, wave, ProfileSynthParams(seed=7))
        errs = []
        for seed in range(6):
            cfr = generate_cfr(SourceScene.single(-45.0, snr_db=60.0), geom,
                               wave, profile=profile, seed=seed)
            spec = music_spectrum(sample_covariance(cfr), 1, grid, geom)
            errs.append(pick_aoa(spec) - (-45.0))
        assert np.sqrt(np.mean(np.square(errs))) > 0.5

    def test_noise_floor_shift_preserves_argmax(self, geom, grid):
        wave = WaveformConfig(16, 30e3)
        cfr = generate_cfr(SourceScene.single(14.0, snr_db=10.0), geom, wave,
                           seed=12)
        cov = sample_covariance(cfr)
        shifted = CovarianceMatrix(cov.r + 3.0 * np.eye(4), cov.num_snapshots)
        a = pick_aoa(music_spectrum(cov, 1, grid, geom))
        b = pick_aoa(music_spectrum(shifted, 1, grid, geom))
        assert a == b


class TestPickAoa:
    def test_unique_max(self, grid):
        v = np.zeros(len(grid))
        v[3] = 1.0
        assert pick_aoa(SpatialSpectrum(v, grid)) == grid.angles[3]

    def test_tie_goes_to_smaller_angle(self, grid):
        v = np.ones(len(grid))
        assert pick_aoa(SpatialSpectrum(v, grid)) == grid.angles[0]

    def test_nan_rejected(self, grid):
        v = np.zeros(len(grid))
        with pytest.raises(ValueError):
            SpatialSpectrum(v * np.nan, grid)
