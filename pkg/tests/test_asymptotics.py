"""
Unit tests for the limit law, its moments and generating function
"""
import math

import numpy as np
import pytest

from star_bdi.asymptotics import (
    limit_generating_function,
    limit_law,
    limit_moments,
    limit_moments_infinite_d,
    negative_binomial_pi,
    theta_d,
    write_limit_csv,
)
from star_bdi.errors import DomainError
from star_bdi.model import ModelParams

SUBCRITICAL = ModelParams(alpha=0.1, lam=0.1, mu=0.5, d=3)


def zero_mass(params):
    return (1.0 - params.lam / params.mu) ** (params.alpha / params.lam)


class TestMixingWeight:
    """Test theta_d"""

    def test_single_ray(self):
        """theta_1 = 1"""
        assert theta_d(SUBCRITICAL.with_d(1)) == 1.0

    def test_closed_value(self):
        """theta_d = 1/(1 - (1 - 1/d) c)"""
        c = zero_mass(SUBCRITICAL)
        assert theta_d(SUBCRITICAL) == pytest.approx(1.0 / (1.0 - (2.0 / 3.0) * c))

    def test_increasing_in_d(self):
        """More rays deflate the origin further"""
        weights = [theta_d(SUBCRITICAL, d) for d in (1, 2, 5, 100)]
        assert all(np.diff(weights) > 0)

    def test_requires_subcritical(self):
        """lambda >= mu has no mixing weight"""
        with pytest.raises(DomainError):
            theta_d(ModelParams(alpha=0.5, lam=0.5, mu=0.5, d=2))


class TestLimitLaw:
    """Test the zero-modified negative binomial limit"""

    def test_negative_binomial_normalised(self):
        """pi sums to one"""
        total = math.fsum(negative_binomial_pi(SUBCRITICAL, k) for k in range(400))
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_origin_mass(self):
        """p(0) = theta_d c / d"""
        law = limit_law(SUBCRITICAL, 10)
        c = zero_mass(SUBCRITICAL)
        assert law.p0_limit == pytest.approx(theta_d(SUBCRITICAL) * c / 3)

    def test_mixture(self):
        """Level probabilities equal theta_d pi(k) + (1 - theta_d) 1{k = 0}"""
        law = limit_law(SUBCRITICAL, 20)
        for k in range(21):
            mixture = law.theta_d * law.nb_pi[k] + (1.0 - law.theta_d) * (k == 0)
            assert law.pmf(k) == pytest.approx(mixture, abs=1e-14)

    def test_normalised(self):
        """pmf sums to one, tail reported"""
        law = limit_law(SUBCRITICAL, 400)
        total = law.p0_limit + math.fsum(law.pk_limit.values())
        assert total == pytest.approx(1.0, abs=1e-12)
        assert law.tail < 1e-12

    def test_single_ray_is_negative_binomial(self):
        """d = 1 gives the classical negative binomial law"""
        params = SUBCRITICAL.with_d(1)
        law = limit_law(params, 5)
        for k in range(6):
            assert law.pmf(k) == pytest.approx(negative_binomial_pi(params, k), rel=1e-13)

    @pytest.mark.parametrize("lam,mu", [(0.5, 0.5), (0.5, 0.1)])
    def test_degenerate(self, lam, mu):
        """lambda >= mu: every level probability vanishes"""
        law = limit_law(ModelParams(alpha=0.3, lam=lam, mu=mu, d=2), 5)
        assert law.degenerate
        assert law.p0_limit == 0.0
        assert all(value == 0.0 for value in law.pk_limit.values())
        assert math.isnan(law.mean)

    def test_negative_kmax(self):
        """k_max must be nonnegative"""
        with pytest.raises(DomainError):
            limit_law(SUBCRITICAL, -1)


class TestMoments:
    """Test closed moments against pmf summation"""

    @pytest.mark.parametrize("d", [1, 2, 3, 10])
    def test_against_pmf(self, d):
        """E[N] and Var[N] match the summed pmf"""
        params = SUBCRITICAL.with_d(d)
        law = limit_law(params, 500)
        ks = np.arange(501)
        pmf = np.array([law.pmf(k) for k in ks])
        mean = float(np.sum(ks * pmf))
        variance = float(np.sum(ks**2 * pmf)) - mean**2
        closed_mean, closed_variance = limit_moments(params)
        assert closed_mean == pytest.approx(mean, rel=1e-9)
        assert closed_variance == pytest.approx(variance, rel=1e-9)

    def test_infinite_rays(self):
        """Moments approach the d -> infinity limit"""
        mean, variance = limit_moments(SUBCRITICAL.with_d(10**7))
        inf_mean, inf_variance = limit_moments_infinite_d(SUBCRITICAL)
        assert mean == pytest.approx(inf_mean, rel=1e-5)
        assert variance == pytest.approx(inf_variance, rel=1e-5)

    def test_requires_subcritical(self):
        """No finite moments for lambda >= mu"""
        with pytest.raises(DomainError):
            limit_moments(ModelParams(alpha=0.3, lam=0.6, mu=0.4, d=2))


class TestGeneratingFunction:
    """Test the limit generating function"""

    def test_endpoints(self):
        """G(1) = 1 and G(0) = p(0)"""
        law = limit_law(SUBCRITICAL, 1)
        assert limit_generating_function(SUBCRITICAL, 1.0) == pytest.approx(1.0)
        assert limit_generating_function(SUBCRITICAL, 0.0) == pytest.approx(law.p0_limit)

    def test_series(self):
        """G(z) = sum_k pmf(k) z^k"""
        law = limit_law(SUBCRITICAL, 200)
        z = 0.6
        series = math.fsum(law.pmf(k) * z**k for k in range(201))
        assert limit_generating_function(SUBCRITICAL, z) == pytest.approx(series, rel=1e-12)

    def test_degenerate(self):
        """Zero for lambda >= mu"""
        assert limit_generating_function(ModelParams(alpha=0.3, lam=0.5, mu=0.5, d=2), 0.5) == 0.0

    def test_domain(self):
        """z outside [0, 1] is rejected"""
        with pytest.raises(DomainError):
            limit_generating_function(SUBCRITICAL, 1.5)


class TestLimitCsv:
    """Test CSV output"""

    def test_layout(self, tmp_path):
        """pmf block followed by the scalar block"""
        path = tmp_path / "limit.csv"
        write_limit_csv(limit_law(SUBCRITICAL, 4), str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "k,limit_probability,nb_pi"
        assert len(lines) == 1 + 5 + 1 + 2
        assert lines[7] == "theta_d,mean,variance"
