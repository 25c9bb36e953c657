import math

import numpy as np
import pytest
from scipy.stats import nbinom

from sipsim.core import Geometry, derive_stream
from sipsim.measures import (
    Deterministic,
    NuLambda,
    NuMixture,
    PoissonProduct,
    detailed_balance_ratio,
    lambda_of_density,
    marginal_pmf,
    sample_marginal,
    sample_product,
)


class TestMarginalPmf:
    def test_lam_zero_is_empty(self):
        assert marginal_pmf(0, 0.0, 2.0) == 1.0
        assert marginal_pmf(3, 0.0, 2.0) == 0.0

    def test_m_two_is_geometric(self):
        assert marginal_pmf(2, 0.5, 2.0) == pytest.approx(0.125)
        for k in range(6):
            assert marginal_pmf(k, 0.3, 2.0) == pytest.approx(0.7 * 0.3**k)

    def test_against_scipy_negative_binomial(self):
        for lam, m in [(0.4, 2.0), (0.7, 1.5), (0.25, 5.0)]:
            for k in range(12):
                assert marginal_pmf(k, lam, m) == pytest.approx(
                    nbinom.pmf(k, 0.5 * m, 1.0 - lam), rel=1e-12
                )

    def test_mass_sums_to_one(self):
        for lam, m in [(0.4, 2.0), (0.9, 0.5), (0.6, 7.0)]:
            total = sum(marginal_pmf(k, lam, m) for k in range(2000))
            assert abs(total - 1.0) < 1e-12

    def test_domain(self):
        with pytest.raises(ValueError):
            marginal_pmf(0, 1.0, 2.0)
        with pytest.raises(ValueError):
            marginal_pmf(0, -0.1, 2.0)
        assert marginal_pmf(-1, 0.5, 2.0) == 0.0


class TestSampling:
    def test_lam_zero_always_zero(self):
        s = derive_stream(0, 0)
        assert all(sample_marginal(0.0, 2.0, s) == 0 for _ in range(100))

    def test_mean_matches_density(self):
        # mean count is (m/2) * lam/(1-lam)
        s = derive_stream(1, 0)
        n = 100_000
        draws = [sample_marginal(0.4, 2.0, s) for _ in range(n)]
        target = 0.4 / 0.6
        se = np.std(draws, ddof=1) / math.sqrt(n)
        assert abs(np.mean(draws) - target) < 3 * se

    def test_pmf_at_zero_m_one(self):
        s = derive_stream(2, 0)
        n = 100_000
        hits = sum(sample_marginal(0.5, 1.0, s) == 0 for _ in range(n))
        p = (1.0 - 0.5) ** 0.5
        assert abs(hits / n - p) < 3 * math.sqrt(p * (1 - p) / n)

    def test_empirical_pmf_profile(self):
        s = derive_stream(3, 0)
        n = 50_000
        lam, m = 0.6, 3.0
        counts = np.bincount([sample_marginal(lam, m, s) for _ in range(n)])
        for k in range(4):
            p = marginal_pmf(k, lam, m)
            assert abs(counts[k] / n - p) < 3 * math.sqrt(p * (1 - p) / n) + 1e-9


class TestSampleProduct:
    def test_lam_zero_gives_empty_configuration(self):
        eta = sample_product(NuLambda(0.0, 2.0), Geometry(1, 5), derive_stream(0, 0))
        assert eta == {}

    def test_poisson_zero_gives_empty_configuration(self):
        eta = sample_product(PoissonProduct(0.0), Geometry(1, 5), derive_stream(0, 0))
        assert eta == {}

    def test_requires_torus(self):
        with pytest.raises(ValueError):
            sample_product(NuLambda(0.4, 2.0), Geometry(1), derive_stream(0, 0))

    def test_sites_are_independent(self):
        g = Geometry(1, 6)
        reps = 20_000
        a, b = [], []
        for r in range(reps):
            eta = sample_product(NuLambda(0.4, 2.0), g, derive_stream(4, r))
            a.append(eta.get((0,), 0))
            b.append(eta.get((3,), 0))
        cov = np.cov(a, b)[0, 1]
        se = np.std(np.array(a) * np.array(b), ddof=1) / math.sqrt(reps)
        assert abs(cov) < 3 * se + 1e-9

    def test_mixture_shares_one_fugacity_per_draw(self):
        # under the mixture, distinct sites must be positively correlated
        g = Geometry(1, 6)
        law = NuMixture(atoms=((0.0, 0.5), (0.8, 0.5)), m=2.0)
        reps = 20_000
        a, b = [], []
        for r in range(reps):
            eta = sample_product(law, g, derive_stream(5, r))
            a.append(eta.get((0,), 0))
            b.append(eta.get((3,), 0))
        assert np.cov(a, b)[0, 1] > 1.0  # rho^2/4 = 4 in expectation, far from 0

    def test_deterministic_law(self):
        law = Deterministic(items=(((0,), 2), ((3,), 1)))
        eta = sample_product(law, Geometry(1, 5), derive_stream(0, 0))
        assert eta == {(0,): 2, (3,): 1}


class TestDetailedBalance:
    def test_simple_case_is_one(self):
        assert detailed_balance_ratio(1, 0, 0.3, 2.0) == pytest.approx(1.0, abs=1e-12)

    def test_spec_point(self):
        assert detailed_balance_ratio(3, 2, 0.7, 1.5) == pytest.approx(1.0, abs=1e-12)

    def test_randomized_grid(self):
        rng = np.random.default_rng(7)
        for _ in range(500):
            a = int(rng.integers(1, 21))
            b = int(rng.integers(0, 21))
            lam = float(rng.uniform(0.01, 0.95))
            m = float(rng.uniform(0.1, 8.0))
            assert abs(detailed_balance_ratio(a, b, lam, m) - 1.0) < 1e-12

    def test_precondition(self):
        with pytest.raises(ValueError):
            detailed_balance_ratio(0, 3, 0.4, 2.0)


class TestLaws:
    def test_rho_and_inverse(self):
        law = NuLambda(0.4, 2.0)
        assert law.rho == pytest.approx(2.0 / 3.0)
        assert lambda_of_density(law.rho) == pytest.approx(0.4)

    def test_mixture_validation(self):
        with pytest.raises(ValueError):
            NuMixture(atoms=((0.2, 0.6), (0.6, 0.2)), m=2.0)  # weights not 1
        with pytest.raises(ValueError):
            NuMixture(atoms=((1.2, 1.0),), m=2.0)

    def test_nu_lambda_domain(self):
        with pytest.raises(ValueError):
            NuLambda(1.0, 2.0)
        with pytest.raises(ValueError):
            NuLambda(0.5, 0.0)
