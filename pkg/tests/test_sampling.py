import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bincma import poisson_binomial as pbm
from bincma.errors import BadDimension, DimensionTooLarge, VarianceTooLarge
from bincma.expfam import CanonicalParams, IsingParams, JointTable, canonical_from_moment
from bincma.sampling import (
    SearchDistribution,
    exact_joint_sampler,
    p_from_variance,
    rng_stream,
    sample_candidates,
    sample_shifted_binomial,
    shifted_binomial_pmf,
)
from conftest import chi_square_pvalue

N_MC = 100_000


class TestPFromVariance:
    def test_examples(self):
        assert p_from_variance(4, 1.0) == pytest.approx(0.5, abs=1e-15)
        assert p_from_variance(100, 9.0) == pytest.approx(0.1, abs=1e-15)
        assert p_from_variance(7, 0.0) == 0.0

    def test_matches_quadratic_formula(self):
        for n, v in [(10, 1.0), (3, 0.5), (50, 12.0)]:
            assert p_from_variance(n, v) == pytest.approx((1 - math.sqrt(1 - 4 * v / n)) / 2, rel=1e-12)

    def test_too_large(self):
        with pytest.raises(VarianceTooLarge):
            p_from_variance(4, 1.0001)

    @settings(max_examples=200)
    @given(st.integers(1, 1000), st.floats(0, 1))
    def test_inverts_variance(self, n, frac):
        var = frac * n / 4
        p = p_from_variance(n, var)
        assert 0 <= p <= 0.5
        assert n * p * (1 - p) == pytest.approx(var, abs=1e-12 * max(1.0, n))

    def test_monotone(self):
        ps = [p_from_variance(20, v) for v in np.linspace(0, 5, 101)]
        assert all(a < b for a, b in zip(ps, ps[1:]))


class TestShiftedBinomial:
    def test_zero_variance(self):
        rng = rng_stream(0)
        assert sample_shifted_binomial(2.4, 4, 0.0, rng) == 2
        assert sample_shifted_binomial(6.7, 4, 0.0, rng) == 2  # round(6.7) = 7 = 2 mod 5
        assert np.all(sample_shifted_binomial(2.0, 4, 1e-9, rng, size=1000) == 2)

    def test_centered_fair_coin(self):
        # mu = 0, n = 4, p = 1/2: B - 2 in {-2..2} wraps to {3, 4, 0, 1, 2}
        law = shifted_binomial_pmf(0.0, 4, 0.5)
        np.testing.assert_allclose(law.probs, np.array([6, 4, 1, 1, 4]) / 16)
        x = sample_shifted_binomial(0.0, 4, 0.5, rng_stream(1), size=N_MC)
        assert set(np.unique(x)) == {0, 1, 2, 3, 4}
        assert chi_square_pvalue(x, law.probs) > 0.01
        unwrapped = np.where(x > 2, x - 5, x)
        se = math.sqrt(1.0 / N_MC)
        assert abs(unwrapped.mean()) < 3 * se
        assert unwrapped.var() == pytest.approx(1.0, rel=0.05)

    def test_mean_and_variance_without_wrap(self):
        mu, n, p = 8.0, 16, 0.25
        x = sample_shifted_binomial(mu, n, p, rng_stream(2), size=N_MC)
        var = n * p * (1 - p)
        assert abs(x.mean() - mu) < 3 * math.sqrt(var / N_MC)
        assert x.var() == pytest.approx(var, rel=0.05)

    def test_rounding_offset(self):
        # mu - n p not an integer: the law is the binomial shifted by round(mu - n p)
        law = shifted_binomial_pmf(8.0, 16, 0.1)
        assert law.mean() == pytest.approx(6 + 1.6, abs=1e-6)  # wrap mass ~1e-7


def _sd(m, sigma, C, dims):
    return SearchDistribution(np.asarray(m, float), sigma, np.asarray(C, float), dims)


class TestSearchDistribution:
    def test_bad_dimension(self):
        with pytest.raises(BadDimension):
            _sd([0, 0], 1.0, np.eye(2), [2, 1])

    def test_clamps_variance(self):
        sd = _sd([3, 3], 10.0, np.eye(2), [5, 9])
        np.testing.assert_allclose(sd.variances(), [1.0, 2.0])
        np.testing.assert_allclose(sd.success_probs(), 0.5)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            _sd([0, 0], 1.0, [[1, 0.1], [0, 1]], [3, 3])


class TestSampleCandidates:
    def test_degenerate(self):
        sd = _sd([2.4, 7.6, 0.2], 1e-9, np.eye(3), [4, 6, 3])
        x = sample_candidates(sd, 50, rng_stream(3))
        np.testing.assert_array_equal(x, np.tile([2, 2, 0], (50, 1)))

    def test_in_range_and_deterministic(self):
        sd = _sd([1.0, 5.5, 0.3], 3.0, np.eye(3), [3, 8, 2])
        a = sample_candidates(sd, 200, rng_stream(4))
        b = sample_candidates(sd, 200, rng_stream(4))
        assert a.tobytes() == b.tobytes()
        assert np.all(a >= 0) and np.all(a < sd.dims)

    @pytest.mark.parametrize("sampler", ["copula", "exact"])
    def test_marginals_chi_square(self, sampler):
        C = np.array([[1.0, 0.5, 0.0], [0.5, 1.0, -0.3], [0.0, -0.3, 0.6]])
        sd = _sd([4.0, 2.5, 10.0], 1.2, C, [9, 6, 17])
        x = sample_candidates(sd, N_MC, rng_stream(5), sampler=sampler)
        p = sd.success_probs()
        for j in range(3):
            law = shifted_binomial_pmf(sd.m[j], int(sd.trials[j]), p[j])
            assert chi_square_pvalue(x[:, j], law.probs) > 0.01

    def test_independent_coordinates(self):
        sd = _sd([8, 8], 1.5, np.eye(2), [17, 17])
        x = sample_candidates(sd, N_MC, rng_stream(6))
        r = np.corrcoef(x.T)[0, 1]
        assert abs(r) < 3 / math.sqrt(N_MC)

    def test_positive_correlation(self):
        C = np.array([[1.0, 0.8], [0.8, 1.0]])
        sd = _sd([8, 8], 1.5, C, [17, 17])
        x = sample_candidates(sd, N_MC, rng_stream(7))
        assert stats.spearmanr(x[:, 0], x[:, 1]).statistic >= 0.4

    def test_negative_correlation_sign(self):
        C = np.array([[1.0, -0.6], [-0.6, 1.0]])
        sd = _sd([8, 8], 1.5, C, [17, 17])
        x = sample_candidates(sd, 20_000, rng_stream(8))
        assert stats.spearmanr(x[:, 0], x[:, 1]).statistic < 0

    def test_variance_tracks_sigma(self):
        sd_vars = []
        for sigma in (1.0, 0.5, 0.1):
            sd = _sd([8, 8], sigma, np.diag([2.0, 3.0]), [17, 17])
            x = sample_candidates(sd, N_MC, rng_stream(9))
            sd_vars.append(x.var(axis=0))
            np.testing.assert_allclose(x.var(axis=0), sigma**2 * np.diag(sd.C), rtol=0.10)
        assert np.all(np.diff(np.array(sd_vars), axis=0) < 0)

    def test_copula_agrees_with_exact(self):
        C = np.array([[1.0, 0.5], [0.5, 1.0]])
        sd = _sd([4, 4], 1.0, C, [9, 9])
        cop = sample_candidates(sd, 50_000, rng_stream(10), sampler="copula")
        ex = sample_candidates(sd, 50_000, rng_stream(11), sampler="exact")
        c1, c2 = np.cov(cop.T)[0, 1], np.cov(ex.T)[0, 1]
        assert c1 > 0 and c2 > 0
        assert c1 == pytest.approx(c2, abs=0.05)

    def test_unknown_sampler(self):
        with pytest.raises(ValueError):
            sample_candidates(_sd([0], 1.0, np.eye(1), [2]), 1, rng_stream(0), sampler="mcmc")

    def test_exact_dimension_cap(self):
        sd = _sd(np.zeros(17), 0.5, np.eye(17), 2)
        with pytest.raises(DimensionTooLarge):
            sample_candidates(sd, 1, rng_stream(0), sampler="exact")


class TestExactJointSampler:
    def test_independent_theta(self):
        c = canonical_from_moment(JointTable.product([0.3, 0.6]))
        x = exact_joint_sampler(c, 3, rng_stream(12), size=N_MC)
        table = np.zeros((4, 4))
        np.add.at(table, (x[:, 0], x[:, 1]), 1)
        assert stats.chi2_contingency(table).pvalue > 0.01

    def test_univariate_is_binomial(self):
        c = CanonicalParams.from_theta(1, {1: math.log(0.3 / 0.7)})
        x = exact_joint_sampler(c, 6, rng_stream(13), size=N_MC)[:, 0]
        assert chi_square_pvalue(x, pbm.binomial(6, 0.3).probs) > 0.01

    def test_coupled_covariance(self):
        c = canonical_from_moment(JointTable(2, [0.4, 0.2, 0.2, 0.2]))
        n = 5
        x = exact_joint_sampler(c, n, rng_stream(14), size=N_MC)
        # per-trial covariance 0.04, summed over n independent trials
        cov = np.cov(x.T)[0, 1]
        dev = (x[:, 0] - x[:, 0].mean()) * (x[:, 1] - x[:, 1].mean())
        se = dev.std() / math.sqrt(N_MC)
        assert abs(cov - n * 0.04) < 3 * se

    def test_ising_input_and_per_coordinate_trials(self):
        p = IsingParams(2, [0.0, 0.0], [[0, 1.0], [1.0, 0]])
        x = exact_joint_sampler(p, [2, 5], rng_stream(15), size=1000)
        assert x[:, 0].max() <= 2 and x[:, 1].max() <= 5

    def test_single_draw_shape(self):
        c = CanonicalParams.from_theta(3, np.zeros(8))
        assert exact_joint_sampler(c, 4, rng_stream(0)).shape == (3,)


def test_rng_streams_are_distinct_and_reproducible():
    a = rng_stream(7, "sampling").random(4)
    b = rng_stream(7, "sampling").random(4)
    c = rng_stream(7, "problem").random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


class TestMirrored:
    @pytest.mark.parametrize("sampler", ["copula", "exact"])
    def test_marginals(self, sampler):
        C = np.array([[1.0, 0.4], [0.4, 1.0]])
        sd = _sd([3.3, 7.0], 0.6, C, [9, 15])
        x = sample_candidates(sd, N_MC, rng_stream(20), sampler=sampler, mirror=True)
        p = sd.success_probs()
        for j in range(2):
            law = shifted_binomial_pmf(sd.m[j], int(sd.trials[j]), p[j], mirror=True)
            assert chi_square_pvalue(x[:, j], law.probs) > 0.01

    def test_steps_below_rounded_mean(self):
        # n p < 1/2: the plain shift never goes below round(m); the mirrored one does
        sd = _sd([5.0], 0.3, np.eye(1), [16])
        plain = sample_candidates(sd, 5000, rng_stream(21))
        mirrored = sample_candidates(sd, 5000, rng_stream(21), mirror=True)
        assert plain.min() == 5
        assert np.any(mirrored == 4) and np.any(mirrored == 6)

    def test_moments_preserved(self):
        sd = _sd([8.0], 1.2, np.eye(1), [17])
        x = sample_candidates(sd, N_MC, rng_stream(22), mirror=True)[:, 0]
        var = sd.variances()[0]
        law = shifted_binomial_pmf(8.0, 16, sd.success_probs()[0], mirror=True)
        # before rounding the mixture has the binomial variance; the two rounding
        # offsets add at most 1/4
        assert var <= law.variance() <= var + 0.25
        assert law.mean() == pytest.approx(8.0, abs=1e-6)
        assert x.var() == pytest.approx(law.variance(), rel=0.05)
        assert abs(x.mean() - 8.0) < 3 * math.sqrt(law.variance() / N_MC)

    def test_correlation_sign_kept(self):
        C = np.array([[1.0, 0.8], [0.8, 1.0]])
        sd = _sd([8, 8], 1.5, C, [17, 17])
        x = sample_candidates(sd, 20_000, rng_stream(23), mirror=True)
        assert stats.spearmanr(x[:, 0], x[:, 1]).statistic >= 0.4


class TestWraparound:
    """Measured distortion of the modular wrap on ``{0..10}`` (values from the exact law)."""

    @pytest.mark.parametrize(
        "mu,var,mean,variance",
        [(5.0, 2.0, 4.763, 1.999), (5.0, 2.5, 5.0, 2.5), (2.0, 1.0, 2.127, 1.0), (2.0, 2.0, 2.197, 4.182)],
    )
    def test_distortion(self, mu, var, mean, variance):
        d = shifted_binomial_pmf(mu, 10, p_from_variance(10, var))
        assert d.mean() == pytest.approx(mean, abs=1e-3)
        assert d.variance() == pytest.approx(variance, abs=1e-3)

    def test_centred_draws_keep_variance(self):
        # without wrapping the variance is exactly n p (1 - p), whatever the offset of mu
        for var in (0.25, 1.0, 2.0, 2.5):
            p = p_from_variance(10, var)
            assert shifted_binomial_pmf(10 * p, 10, p).variance() == pytest.approx(var, rel=1e-12)
