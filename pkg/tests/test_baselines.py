import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from taskquant import baselines, mimosim
from taskquant.baselines import CellObservation
from taskquant.quantizer import uniform_quantizer


def _series_cdf(z, dps=40):
    """Phi(z) = 1/2 + phi(z) * sum z^(2k+1) / (2k+1)!!, summed at high precision."""
    with mpmath.workdps(dps):
        z = mpmath.mpf(z)
        term = z
        total = z
        k = 0
        while abs(term) > mpmath.mpf(10) ** (-dps):
            k += 1
            term *= z * z / (2 * k + 1)
            total += term
        return float(mpmath.mpf(0.5) + mpmath.npdf(z) * total)


class TestBounds:
    def test_mmse_zero_snr(self):
        assert baselines.mmse_bound(0.0, 12) == 0.5

    def test_mmse_high_snr(self):
        assert baselines.mmse_bound(1e12, 12) < 1e-12

    def test_mmse_value(self):
        assert baselines.mmse_bound(4, 12) == pytest.approx(1 / 98, abs=1e-15)

    def test_limit_zero_rate(self):
        assert baselines.fundamental_limit(4, 12, 3, 0) == 0.5

    def test_limit_infinite_rate(self):
        assert baselines.fundamental_limit(4, 12, 3, 200) == pytest.approx(1 / 98, abs=1e-15)

    def test_limit_value(self):
        expected = 1 / 98 + (48 / 98) * 2 ** -6
        assert baselines.fundamental_limit(4, 12, 3, 1) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.017857, abs=1e-6)

    @given(st.floats(0.01, 100), st.integers(1, 64), st.floats(1, 8), st.floats(0, 5), st.floats(0.01, 2))
    def test_limit_decreasing_and_above_mmse(self, snr, tau, rho, rate, step):
        lo = baselines.fundamental_limit(snr, tau, rho, rate)
        hi_rate = baselines.fundamental_limit(snr, tau, rho, rate + step)
        assert lo >= baselines.mmse_bound(snr, tau)
        assert hi_rate <= lo


class TestNormalCdf:
    def test_zero(self):
        assert baselines.normal_cdf(0.0) == 0.5

    def test_tails(self):
        assert baselines.normal_cdf(-40.0) == 0.0
        assert baselines.normal_cdf(40.0) == 1.0

    @pytest.mark.parametrize("z", [1.0, -1.0, 0.3, -2.5, 3.7, -6.0, 0.01])
    def test_series_oracle(self, z):
        assert baselines.normal_cdf(z) == pytest.approx(_series_cdf(z), abs=1e-12)

    def test_one(self):
        assert baselines.normal_cdf(1.0) == pytest.approx(0.8413447460685429, abs=1e-12)


class TestMapDetect:
    def test_noiseless(self, rng):
        h = mimosim.random_channel(6, 3, rng)
        s = np.array([1.0, -1.0, 1.0])
        np.testing.assert_array_equal(baselines.map_detect(h @ s, h, 1e-3), s)

    def test_sign_rule(self):
        np.testing.assert_array_equal(baselines.map_detect(np.array([0.3]), np.array([[1.0]]), 1.0), [1.0])

    def test_likelihood_oracle(self, rng):
        for _ in range(100):
            h = mimosim.random_channel(5, 3, rng)
            sigma = rng.uniform(0.2, 2.0)
            x = h @ rng.choice([-1.0, 1.0], 3) + sigma * rng.normal(size=5)
            best, best_ll = None, -np.inf
            for bits in itertools.product([0, 1], repeat=3):
                s = np.array([2.0 * b - 1 for b in reversed(bits)])
                ll = -np.sum((x - h @ s) ** 2) / (2 * sigma ** 2)
                if ll > best_ll:
                    best, best_ll = s, ll
            np.testing.assert_array_equal(baselines.map_detect(x, h, sigma), best)

    def test_tie_goes_to_lowest_index(self):
        h = np.array([[1.0, 0.0]])
        # second user invisible: every pair ties, index 0 / 1 chosen by first user
        np.testing.assert_array_equal(baselines.map_detect(np.array([0.5]), h, 1.0), [1.0, -1.0])

    @given(st.floats(0.01, 100))
    def test_scale_invariance(self, scale):
        rng = np.random.default_rng(5)
        h = mimosim.random_channel(6, 3, rng)
        x = rng.normal(size=(20, 6))
        np.testing.assert_array_equal(baselines.map_detect(x, h, 1.0),
                                      baselines.map_detect(scale * x, scale * h, 1.0))

    def test_too_many_users(self):
        with pytest.raises(ValueError):
            baselines.map_detect(np.zeros(30), np.zeros((30, 25)), 1.0)

    def test_mismatched_with_exact_channel(self, rng):
        h = mimosim.random_channel(6, 3, rng)
        x = rng.normal(size=(30, 6))
        np.testing.assert_array_equal(baselines.map_detect_mismatched(x, np.broadcast_to(h, (30, 6, 3)), 1.0),
                                      baselines.map_detect(x, h, 1.0))


class TestQuantizedMap:
    def test_single_cell_ties(self, rng):
        q = uniform_quantizer(-2, 2, 1)
        h = mimosim.random_channel(4, 2, rng)
        cells = CellObservation.from_quantizer(q, rng.normal(size=(5, 4)))
        np.testing.assert_array_equal(baselines.quantized_map_detect(cells, h, 0.5), np.full((5, 2), -1.0))

    @pytest.mark.parametrize("cell", [(-np.inf, 0.0), (0.0, 0.5), (0.5, 1.0), (1.0, np.inf), (3.0, 3.5)])
    def test_posterior_matches_quadrature(self, cell):
        h = np.array([[0.8]])
        sigma = 0.6
        lo, hi = cell
        ll = baselines.quantized_loglik(CellObservation(np.array([lo]), np.array([hi])), h, sigma)[0]
        post = np.exp(ll - ll.max())
        post /= post.sum()
        like = []
        for s in (-1.0, 1.0):
            dens = lambda x: math.exp(-0.5 * ((x - 0.8 * s) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
            like.append(integrate.quad(dens, lo, hi, epsabs=1e-14, epsrel=1e-12)[0])
        expected = np.array(like) / sum(like)
        np.testing.assert_allclose(post, expected, atol=1e-6)

    def test_fine_quantization_agrees_with_map(self, rng):
        h = mimosim.normalize_columns(mimosim.random_channel(12, 4, rng))
        sc = mimosim.DetectionScenario.from_snr_db(h, 8.0)
        d = mimosim.gen_detection(sc, 10**4, rng)
        q = uniform_quantizer(-2, 2, 1024)
        qmap = baselines.quantized_map_detect(CellObservation.from_quantizer(q, d.x), h, sc.sigma)
        umap = baselines.map_detect(d.x, h, sc.sigma)
        assert np.mean(np.all(qmap == umap, axis=1)) >= 0.99

    def test_log_terms_bounded(self, rng):
        h = mimosim.random_channel(4, 2, rng)
        q = uniform_quantizer(-2, 2, 8)
        cells = CellObservation.from_quantizer(q, 3 * rng.normal(size=(50, 4)))
        ll = baselines.quantized_loglik(cells, h, 0.3)
        assert np.all(np.isfinite(ll))
        assert np.all(ll <= 0)
        assert np.all(ll >= 4 * baselines.kernels.LOG_FLOOR)

    def test_empty_cell(self):
        with pytest.raises(ValueError):
            CellObservation(np.array([1.0]), np.array([1.0]))

    def test_rate_helper(self, rng):
        h = mimosim.random_channel(4, 2, rng)
        x = rng.normal(size=(10, 4))
        q = uniform_quantizer(-2, 2, 4)
        np.testing.assert_array_equal(baselines.quantized_map_rate(x, h, 0.5, 2.0),
                                      baselines.quantized_map_detect(CellObservation.from_quantizer(q, x), h, 0.5))


def test_data_processing_ordering():
    rng = np.random.default_rng(11)
    h = mimosim.normalize_columns(mimosim.random_channel(12, 4, rng))
    sc = mimosim.DetectionScenario.from_snr_db(h, 6.0)
    d = mimosim.gen_detection(sc, 20000, rng)
    err_map = (baselines.map_detect(d.x, h, sc.sigma) != d.s).mean(axis=1)
    err_q = (baselines.quantized_map_rate(d.x, h, sc.sigma, 1.0) != d.s).mean(axis=1)
    se = np.sqrt(err_map.var() / err_map.size + err_q.var() / err_q.size)
    assert err_map.mean() <= err_q.mean() + 3 * se
