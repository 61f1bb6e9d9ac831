import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from taskquant import mimosim
from taskquant.mimosim import ChannelEstScenario, DetectionScenario


class TestPilots:
    def test_first_column_all_ones(self):
        np.testing.assert_array_equal(mimosim.dft_pilots(2, 1), [[1.0], [1.0]])

    def test_second_column(self):
        phi = mimosim.dft_pilots(4, 2)
        np.testing.assert_allclose(phi[:, 1], [1, -1j, -1, 1j], atol=1e-15)

    @given(st.integers(1, 32), st.data())
    def test_orthogonality(self, tau, data):
        n_u = data.draw(st.integers(1, tau))
        phi = mimosim.dft_pilots(tau, n_u)
        assert np.max(np.abs(phi.conj().T @ phi - tau * np.eye(n_u))) < 1e-9

    def test_too_few_pilots(self):
        with pytest.raises(ValueError):
            mimosim.dft_pilots(3, 4)


class TestRealEmbed:
    def test_single(self):
        np.testing.assert_array_equal(mimosim.real_embed(np.array([1 + 2j])), [1.0, 2.0])

    def test_real_input(self):
        np.testing.assert_array_equal(mimosim.real_embed(np.array([3.0, -1.0])), [3.0, -1.0, 0.0, 0.0])

    def test_round_trip(self, rng):
        v = rng.normal(size=6) + 1j * rng.normal(size=6)
        np.testing.assert_array_equal(mimosim.real_unembed(mimosim.real_embed(v)), v)


class TestChannelEst:
    def test_derived_sizes(self):
        sc = ChannelEstScenario()
        assert (sc.n, sc.n_s, sc.rho) == (240, 80, 3.0)

    def test_noiseless_identity_channel(self, rng):
        sc = ChannelEstScenario(n_users=1, n_antennas=1, pilots=1, snr=1.0)
        data = mimosim.gen_channel_est(sc, 5, rng, noise=False)
        np.testing.assert_allclose(data.x, data.s, atol=1e-15)

    def test_bad_pilot_matrix(self):
        with pytest.raises(ValueError):
            ChannelEstScenario(n_users=2, n_antennas=1, pilots=2, pilot_matrix=np.ones((2, 2)))

    def test_target_variance(self, rng):
        sc = ChannelEstScenario(n_users=2, n_antennas=2, pilots=2)
        s = mimosim.gen_channel_est(sc, 10**5, rng).s
        np.testing.assert_allclose(s.var(axis=0), 0.5, rtol=0.01)

    def test_observation_variance(self, rng):
        sc = ChannelEstScenario(n_users=4, n_antennas=2, pilots=4, snr=4.0)
        x = mimosim.gen_channel_est(sc, 10**5, rng).x
        np.testing.assert_allclose(x.var(axis=0), (4 * 4 + 1) / 2, rtol=0.02)

    def test_snr_uncertainty_spreads_power(self, rng):
        sc = ChannelEstScenario(n_users=1, n_antennas=1, pilots=1, snr=4.0)
        x = mimosim.gen_channel_est(sc, 10**5, rng, snr_mode="uniform").x
        # E[P] = 5.5 under U[1, 10]
        np.testing.assert_allclose(x.var(axis=0), (5.5 + 1) / 2, rtol=0.02)

    def test_linear_in_h(self, rng):
        sc = ChannelEstScenario()
        a = sc.observation_matrix()
        h = rng.normal(size=40) + 1j * rng.normal(size=40)
        np.testing.assert_allclose(2 * (a @ h), a @ (2 * h))
        data = mimosim.gen_channel_est(sc, 3, rng, noise=False)
        hc = mimosim.real_unembed(data.s)
        np.testing.assert_allclose(mimosim.real_unembed(data.x), 2.0 * (hc @ a.T), atol=1e-12)

    def test_seeded(self):
        sc = ChannelEstScenario()
        d1 = mimosim.gen_channel_est(sc, 4, np.random.default_rng(9))
        d2 = mimosim.gen_channel_est(sc, 4, np.random.default_rng(9))
        np.testing.assert_array_equal(d1.x, d2.x)


class TestDetection:
    def test_noise_negligible(self, rng):
        h = mimosim.random_channel(6, 3, rng)
        sc = DetectionScenario(h, 1e-16)
        d = mimosim.gen_detection(sc, 50, rng)
        assert np.max(np.abs(d.x - d.s @ h.T)) < 1e-6

    def test_symbols_balanced(self, rng):
        sc = DetectionScenario(np.eye(4), 1.0)
        s = mimosim.gen_detection(sc, 10**5, rng).s
        assert set(np.unique(s)) == {-1.0, 1.0}
        assert np.all(np.abs(s.mean(axis=0)) < 3 / np.sqrt(10**5))
        np.testing.assert_allclose(s.var(axis=0), 1.0, rtol=1e-3)

    def test_perturbation_variance(self, rng):
        h = np.array([[0.5, -2.0], [1.0, 0.1]])
        draws = mimosim.perturb_channel(h, rng, size=10**5)
        np.testing.assert_allclose((draws - h).var(axis=0), 0.2 * np.abs(h), rtol=0.05)

    def test_perturbation_squared_rule(self, rng):
        h = np.array([[0.5, -2.0]])
        draws = mimosim.perturb_channel(h, rng, rule="squared", size=10**5)
        np.testing.assert_allclose((draws - h).var(axis=0), (0.2 * np.abs(h)) ** 2, rtol=0.05)

    def test_perturbed_batch_shares_one_channel(self, rng):
        h = mimosim.random_channel(4, 2, rng)
        sc = DetectionScenario(h, 1e-20)
        d = mimosim.gen_detection(sc, 40, rng, csi_mode="perturbed")
        h_fit, *_ = np.linalg.lstsq(d.s, d.x, rcond=None)
        assert not np.allclose(h_fit.T, h, atol=1e-6)
        np.testing.assert_allclose(d.s @ h_fit, d.x, atol=1e-8)

    def test_linear_in_s(self, rng):
        h = mimosim.random_channel(5, 3, rng)
        d = mimosim.gen_detection(DetectionScenario(h, 1.0), 10, rng, noise=False)
        np.testing.assert_allclose(d.x, d.s @ h.T)

    def test_snr_db(self):
        sc = DetectionScenario.from_snr_db(np.eye(2), 10.0)
        assert sc.noise_var == pytest.approx(0.1)
        assert sc.snr_db == pytest.approx(10.0)

    def test_bad_noise(self):
        with pytest.raises(ValueError):
            DetectionScenario(np.eye(2), 0.0)


class TestRandomChannel:
    def test_seeded(self):
        a = mimosim.random_channel(12, 4, np.random.default_rng(3))
        b = mimosim.random_channel(12, 4, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_entry_variance(self, rng):
        h = np.stack([mimosim.random_channel(3, 2, rng) for _ in range(10**4)])
        assert h.var() == pytest.approx(1.0, rel=0.03)

    def test_full_column_rank(self):
        for seed in range(100):
            h = mimosim.random_channel(12, 4, np.random.default_rng(seed))
            assert np.linalg.matrix_rank(h) == 4

    def test_normalize_columns(self, rng):
        h = mimosim.normalize_columns(mimosim.random_channel(12, 4, rng))
        np.testing.assert_allclose(np.linalg.norm(h, axis=0), 1.0)


class TestDatasetCsv:
    def test_round_trip(self, rng, tmp_path):
        sc = ChannelEstScenario(n_users=1, n_antennas=2, pilots=2)
        data = mimosim.gen_channel_est(sc, 7, rng)
        path = tmp_path / "d.csv"
        mimosim.write_dataset_csv(data, path)
        header = path.read_text().splitlines()[0]
        assert header == "s_0,s_1,s_2,s_3,x_0,x_1,x_2,x_3,x_4,x_5,x_6,x_7"
        back = mimosim.read_dataset_csv(path)
        np.testing.assert_array_equal(back.s, data.s)
        np.testing.assert_array_equal(back.x, data.x)
