import numpy as np
import pytest

import oracles
from domp.channel import MultipathComponent, UlaConfig, build_channel, dft_dictionary, to_beamspace, vec
from domp.errors import DomainError
from domp.measurement import (
    build_sensing_setup,
    derive_seed,
    dictionary_matrix,
    measure,
    random_beamformers,
    sensing_matrix,
    splitmix64,
)


def _random_channel(cfg, rng, L=3):
    paths = [MultipathComponent(complex(rng.standard_normal(), rng.standard_normal()),
                                rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)) for _ in range(L)]
    return build_channel(cfg, paths)


class TestBeamformers:
    def test_single_beam(self):
        F, W = random_beamformers(UlaConfig(8, 4), 1, 1, seed=0)
        assert F.shape == (8, 1) and W.shape == (4, 1)
        assert np.linalg.norm(F) == pytest.approx(1.0) and np.linalg.norm(W) == pytest.approx(1.0)

    def test_deterministic(self):
        a = random_beamformers(UlaConfig(8, 4), 3, 2, seed=11)
        b = random_beamformers(UlaConfig(8, 4), 3, 2, seed=11)
        c = random_beamformers(UlaConfig(8, 4), 3, 2, seed=12)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])
        assert not np.array_equal(a[0], c[0])

    def test_unit_columns_and_constant_modulus(self):
        F, W = random_beamformers(UlaConfig(16, 12), 10, 10, seed=5)
        np.testing.assert_allclose(np.linalg.norm(F, axis=0), 1.0, atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(W, axis=0), 1.0, atol=1e-12)
        np.testing.assert_allclose(np.abs(F), 1 / 4, atol=1e-15)

    @pytest.mark.parametrize("M_t, N_t", [(0, 1), (1, 0)])
    def test_rejects_empty(self, M_t, N_t):
        with pytest.raises(DomainError):
            random_beamformers(UlaConfig(4, 4), M_t, N_t, seed=0)


class TestSensingMatrix:
    def test_two_by_two_scalar(self):
        cfg = UlaConfig(2, 2)
        rng = np.random.default_rng(0)
        F, W = random_beamformers(cfg, 1, 1, seed=1)
        H = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        A = sensing_matrix(F, W, cfg)
        assert A.shape == (1, 4)
        y = A @ vec(to_beamspace(H, cfg))
        assert y[0] == pytest.approx((W.conj().T @ H @ F)[0, 0], abs=1e-12)

    def test_identity_beamformers_give_dictionary(self):
        cfg = UlaConfig(4, 3)
        A = sensing_matrix(np.eye(4), np.eye(3), cfg)
        np.testing.assert_allclose(A, dictionary_matrix(cfg), atol=1e-14)
        H = _random_channel(cfg, np.random.default_rng(2)).matrix
        np.testing.assert_allclose(A @ vec(to_beamspace(H, cfg)), vec(H @ np.eye(4)), atol=1e-12)

    def test_dense_kronecker_oracle(self):
        cfg = UlaConfig(6, 5)
        F, W = random_beamformers(cfg, 3, 4, seed=9)
        setup = build_sensing_setup(cfg, 3, 4, seed=9)
        np.testing.assert_allclose(setup.sensing_matrix, oracles.dense_sensing(F, W, 6, 5), atol=1e-12)
        np.testing.assert_allclose(setup.sensing_matrix, setup.beamforming_effect @ setup.dictionary, atol=1e-12)
        assert np.linalg.norm(setup.sensing_matrix) == pytest.approx(
            np.linalg.norm(oracles.dense_sensing(F, W, 6, 5)), rel=1e-12)

    def test_dictionary_column_order(self):
        # column j (0-based) of the dictionary is the image of cell (j // N + 1, j % N + 1)
        cfg = UlaConfig(4, 3)
        Psi = dictionary_matrix(cfg)
        for j in range(12):
            m, n = j // 3, j % 3
            E = np.zeros((3, 4))
            E[n, m] = 1.0
            H = dft_dictionary(3) @ E @ dft_dictionary(4).conj().T
            np.testing.assert_allclose(Psi[:, j], vec(H), atol=1e-13)

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            sensing_matrix(np.ones((5, 2)), np.ones((4, 2)), UlaConfig(4, 4))


class TestMeasure:
    def setup_method(self):
        self.cfg = UlaConfig(8, 8)
        self.channel = _random_channel(self.cfg, np.random.default_rng(4))
        self.setup = build_sensing_setup(self.cfg, 5, 5, seed=4)

    def test_noiseless(self):
        obs = measure(self.channel, self.setup, np.inf, seed=1)
        expected = vec(self.setup.combiner.conj().T @ self.channel.matrix @ self.setup.precoder)
        np.testing.assert_allclose(obs.y, expected, atol=1e-12)
        assert obs.noise_variance == 0.0

    def test_deterministic(self):
        a = measure(self.channel, self.setup, 10.0, seed=3)
        b = measure(self.channel, self.setup, 10.0, seed=3)
        np.testing.assert_array_equal(a.y, b.y)

    def test_rejects_bad_snr(self):
        with pytest.raises(DomainError):
            measure(self.channel, self.setup, -np.inf, seed=0)
        with pytest.raises(DomainError):
            measure(self.channel, self.setup, float("nan"), seed=0)

    def test_empirical_snr(self):
        # Monte-Carlo over 10^4 draws; W has unit-norm columns so the
        # combined noise power per measurement is sigma^2
        snr = 7.0
        clean = measure(self.channel, self.setup, np.inf).y
        signal_power = np.mean(np.abs(clean) ** 2)
        noise_power = np.mean([np.mean(np.abs(measure(self.channel, self.setup, snr, seed=s).y - clean) ** 2)
                               for s in range(10_000)])
        assert abs(10 * np.log10(signal_power / noise_power) - snr) < 0.2

    def test_noise_covariance_is_colored(self):
        cfg = UlaConfig(4, 4)
        channel = _random_channel(cfg, np.random.default_rng(8), L=1)
        setup = build_sensing_setup(cfg, 2, 3, seed=8)
        clean = measure(channel, setup, np.inf).y
        sigma2 = measure(channel, setup, 0.0, seed=0).noise_variance
        noise = np.array([measure(channel, setup, 0.0, seed=s).y - clean for s in range(100_000)])
        sample = noise.T @ noise.conj() / len(noise)
        expected = sigma2 * np.kron(np.eye(2), setup.combiner.conj().T @ setup.combiner)
        assert np.linalg.norm(sample - expected) / np.linalg.norm(expected) < 0.05
        # W^H W is not diagonal here, so whitening would have been detectable
        assert np.abs(expected - np.diag(np.diag(expected))).max() > 0.05 * sigma2


class TestSeeds:
    def test_splitmix_reference_value(self):
        # first output of the reference SplitMix64 generator seeded with 0
        assert splitmix64(0) == 0xE220A8397B1DCDAF

    def test_derived_seeds_are_distinct(self):
        seeds = {derive_seed(0, i) for i in range(1000)}
        assert len(seeds) == 1000
        assert derive_seed(1, 0) != derive_seed(0, 1)
