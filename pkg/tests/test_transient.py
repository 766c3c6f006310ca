"""
Unit tests for the transient law: kernels, Volterra and cycle routes, closed series
"""
import math

import numpy as np
import pytest
from scipy import special

from star_bdi.errors import DomainError
from star_bdi.model import ModelParams, path_generator, sample_cycle_times
from star_bdi.specfun import hyp2f1
from star_bdi.transient import (
    Pk_alpha_eq_lambda,
    Pk_equal_rates,
    Pk_volterra,
    TransientMethod,
    build_cycle_distribution,
    coefficient_kernel,
    cycle_cdf,
    cycle_mass,
    eval_F,
    g_k_eval,
    inner_series_equal_rates,
    kernel_G,
    kernel_h,
    kernel_h_prime,
    laplace_p0,
    p0_theorem25,
    polylog_identity_check,
    series_p0_alpha_eq_lambda,
    series_p0_equal_rates,
    series_radius,
    solve_volterra_p0,
    transient_law,
    write_transient_csv,
)

KERNEL_CASES = [
    ModelParams(alpha=0.3, lam=0.4, mu=0.6, d=1),
    ModelParams(alpha=0.3, lam=0.5, mu=0.5, d=1),
    ModelParams(alpha=0.3, lam=0.6, mu=0.4, d=1),
]


class TestKernels:
    """Test h(t, z), G(t) and the coefficient kernels"""

    @pytest.mark.parametrize("params", KERNEL_CASES)
    def test_initial_value(self, params):
        """h(0, z) = 1"""
        for z in (0.0, 0.3, 0.9):
            assert kernel_h(params, z, 0.0) == pytest.approx(1.0)

    @pytest.mark.parametrize("params", KERNEL_CASES)
    def test_unit_argument(self, params):
        """h(t, 1) = 1: the single-ray law is proper"""
        assert kernel_h(params, 1.0, 3.0) == pytest.approx(1.0, rel=1e-12)

    @pytest.mark.parametrize("params", KERNEL_CASES)
    def test_time_derivative(self, params):
        """Analytic dh/dt matches a central difference"""
        z, t, step = 0.4, 1.3, 1e-5
        numeric = (kernel_h(params, z, t + step) - kernel_h(params, z, t - step)) / (2 * step)
        assert kernel_h_prime(params, z, t) == pytest.approx(numeric, rel=1e-6)

    @pytest.mark.parametrize("params", KERNEL_CASES)
    def test_G_vectorised(self, params):
        """kernel_G accepts arrays and returns G(0) = 0"""
        G, G_prime = kernel_G(params, np.array([0.0, 1.0, 2.0]))
        assert G[0] == pytest.approx(0.0)
        assert np.all(np.diff(G) > 0)
        assert np.all(G_prime > 0)

    def test_cycle_mass(self):
        """c = 1 - (1 - lambda/mu)^(alpha/lambda) for lambda < mu, 1 otherwise"""
        sub, crit, sup = KERNEL_CASES
        assert cycle_mass(sub) == pytest.approx(1.0 - (1.0 / 3.0) ** 0.75)
        assert cycle_mass(crit) == 1.0
        assert cycle_mass(sup) == 1.0

    @pytest.mark.parametrize("params", KERNEL_CASES)
    def test_coefficients_rebuild_h(self, params):
        """sum_k phi_k(t) z^k = h(t, z)"""
        z, t = 0.5, 1.7
        total = sum(float(coefficient_kernel(params, k, t)[0]) * z**k for k in range(200))
        assert total == pytest.approx(kernel_h(params, z, t), rel=1e-10)

    @pytest.mark.parametrize("params", KERNEL_CASES)
    def test_coefficient_derivative(self, params):
        """phi_k' matches a central difference"""
        t, step = 0.8, 1e-5
        for k in (0, 1, 3):
            numeric = (coefficient_kernel(params, k, t + step)[0] - coefficient_kernel(params, k, t - step)[0]) / (
                2 * step
            )
            assert float(coefficient_kernel(params, k, t)[1]) == pytest.approx(float(numeric), rel=1e-6, abs=1e-12)


class TestCycleDistribution:
    """Test closed cycle laws, sampled cycles and convolutions"""

    @pytest.mark.parametrize("params", [KERNEL_CASES[0], KERNEL_CASES[2]])
    def test_lomax_samples(self, params):
        """Lomax-constructed cycle times follow the closed F_Y^(1)"""
        n = 20_000
        samples = np.sort(sample_cycle_times(params, n, path_generator(17)))
        cdf = np.asarray(cycle_cdf(params, samples))
        ranks = np.arange(1, n + 1) / n
        ks = max(np.max(np.abs(ranks - cdf)), np.max(np.abs(ranks - 1.0 / n - cdf)))
        assert ks < 0.02

    def test_first_convolution(self):
        """F_conv[0] is the closed distribution function"""
        params = KERNEL_CASES[0]
        cycles = build_cycle_distribution(params, 4.0, n_grid=2048, j_max=4)
        assert np.allclose(cycles.F_conv[0], cycle_cdf(params, cycles.grid), atol=1e-5)

    def test_single_ray_reduction(self):
        """For d = 1 the cycle series is 1 - G(t)"""
        params = KERNEL_CASES[1]
        cycles = build_cycle_distribution(params, 3.0, n_grid=2048, j_max=10)
        assert p0_theorem25(params, cycles, 2.0) == pytest.approx(1.0 - kernel_G(params, 2.0)[0], abs=1e-6)

    def test_matches_volterra(self, subcritical):
        """Cycle series agrees with the Volterra solution within the grid error"""
        cycles = build_cycle_distribution(subcritical, 3.0)
        history = solve_volterra_p0(subcritical, 3.0, n_steps=4096)
        for t in (0.5, 1.0, 2.0, 3.0):
            assert p0_theorem25(subcritical, cycles, t) == pytest.approx(history.p0_at(t), abs=2e-4)

    def test_outside_grid(self, subcritical):
        """Times beyond the tabulated grid are rejected"""
        cycles = build_cycle_distribution(subcritical, 1.0, n_grid=64, j_max=4)
        with pytest.raises(DomainError):
            p0_theorem25(subcritical, cycles, 2.0)


class TestVolterra:
    """Test the product-trapezoid renewal solver"""

    def test_single_ray(self):
        """d = 1 gives p(0,t) = 1/(1 + lambda t) for equal rates"""
        params = ModelParams(alpha=0.5, lam=0.5, mu=0.5, d=1)
        law = solve_volterra_p0(params, 2.0, n_steps=256)
        assert np.allclose(law.p0, 1.0 / (1.0 + 0.5 * law.t_grid), atol=1e-14)

    def test_initial_condition(self, equal_rates):
        """p(0,0) = 1 and p stays in [0, 1]"""
        law = solve_volterra_p0(equal_rates, 5.0, n_steps=1024)
        assert law.p0[0] == 1.0
        assert np.all((law.p0 >= 0.0) & (law.p0 <= 1.0))
        assert law.diagnostics["n_steps"] == 1024

    def test_p0_at_range(self, equal_rates):
        """Interpolation refuses times beyond the solved range"""
        law = solve_volterra_p0(equal_rates, 1.0, n_steps=64)
        with pytest.raises(DomainError):
            law.p0_at(1.5)

    def test_invalid_grid(self, equal_rates):
        """n_steps >= 2 and t_max > 0"""
        with pytest.raises(DomainError):
            solve_volterra_p0(equal_rates, 1.0, n_steps=1)
        with pytest.raises(DomainError):
            solve_volterra_p0(equal_rates, 0.0, n_steps=64)

    def test_single_ray_levels(self):
        """d = 1 level probabilities are the negative binomial coefficients"""
        params = ModelParams(alpha=0.5, lam=0.5, mu=0.5, d=1)
        history = solve_volterra_p0(params, 1.0, n_steps=64)
        x = 0.5
        for k in (1, 2, 3):
            assert Pk_volterra(params, k, 1.0, history) == pytest.approx(x**k / (1 + x) ** (k + 1), rel=1e-12)

    @pytest.mark.parametrize("fixture_name", ["equal_rates", "alpha_eq_lambda_sub", "subcritical"])
    def test_levels_sum_to_one(self, fixture_name, request):
        """p(0,t) + sum_k P(k,t) = 1 on the Volterra route"""
        params = request.getfixturevalue(fixture_name)
        history = solve_volterra_p0(params, 1.0, n_steps=2048)
        total = history.p0_at(1.0) + sum(Pk_volterra(params, k, 1.0, history) for k in range(1, 121))
        assert total == pytest.approx(1.0, abs=1e-4)

    def test_second_order_refinement(self, equal_rates):
        """Halving dt divides the error by about four"""
        base = 64
        reference = solve_volterra_p0(equal_rates, 2.0, n_steps=base * 128)
        errors = []
        for n_steps in (base, 2 * base, 4 * base, 8 * base):
            law = solve_volterra_p0(equal_rates, 2.0, n_steps=n_steps)
            coarse = law.p0[:: n_steps // base]
            exact = reference.p0[:: reference.p0.size // base]
            errors.append(float(np.max(np.abs(coarse - exact))))
        ratios = [errors[i] / errors[i + 1] for i in range(len(errors) - 1)]
        assert all(3.5 <= r <= 4.5 for r in ratios), ratios


class TestEqualRatesSeries:
    """Test the closed series for mu = alpha = lambda"""

    def test_single_ray(self):
        """d = 1 reduces to 1/(1 + lambda t) and the geometric law"""
        params = ModelParams(alpha=0.5, lam=0.5, mu=0.5, d=1)
        x = 0.5 * 1.2
        assert series_p0_equal_rates(params, 1.2) == pytest.approx(1.0 / (1.0 + x), rel=1e-12)
        assert Pk_equal_rates(params, 2, 1.2) == pytest.approx(x**2 / (1 + x) ** 3, rel=1e-12)

    def test_matches_volterra(self, equal_rates):
        """p(0,t) and P(k,t) agree with the Volterra route"""
        history = solve_volterra_p0(equal_rates, 1.5, n_steps=4096)
        for t in (0.3, 0.9, 1.5):
            assert series_p0_equal_rates(equal_rates, t) == pytest.approx(history.p0_at(t), abs=1e-6)
            for k in (1, 2):
                assert Pk_equal_rates(equal_rates, k, t) == pytest.approx(
                    Pk_volterra(equal_rates, k, t, history), abs=1e-5
                )

    def test_ordering_in_d(self):
        """p(0,t) decreases and P(1,t) increases with the number of rays"""
        t = 1.0
        p0 = [series_p0_equal_rates(ModelParams(alpha=0.5, lam=0.5, mu=0.5, d=d), t) for d in (1, 2, 3, 4, 10)]
        p1 = [Pk_equal_rates(ModelParams(alpha=0.5, lam=0.5, mu=0.5, d=d), 1, t) for d in (1, 2, 3, 4, 10)]
        assert all(np.diff(p0) < 0)
        assert all(np.diff(p1) > 0)

    def test_inner_series_closed_form(self):
        """Term-by-term r-series equals 2F1(n, k+1; n+k+1; q)/C(n+k, k)"""
        n, k, x = 3, 2, 0.4
        q = x / (1 + x)
        closed = special.hyp2f1(n, k + 1, n + k + 1, q) / math.comb(n + k, k)
        assert inner_series_equal_rates(n, k, x) == pytest.approx(closed, rel=1e-9)

    def test_radius(self, equal_rates):
        """lambda t >= 1 is outside the series radius"""
        assert series_radius(equal_rates) == pytest.approx(2.0)
        with pytest.raises(DomainError):
            series_p0_equal_rates(equal_rates, 2.0)

    def test_level_zero_rejected(self, equal_rates):
        """P(k,t) needs k >= 1"""
        with pytest.raises(DomainError):
            Pk_equal_rates(equal_rates, 0, 0.5)

    def test_wrong_regime(self, subcritical):
        """Other regimes are rejected"""
        with pytest.raises(DomainError):
            series_p0_equal_rates(subcritical, 0.5)


class TestAlphaEqLambdaSeries:
    """Test the closed series for alpha = lambda != mu"""

    def test_single_ray(self):
        """d = 1 reduces to the classical linear birth-death law"""
        params = ModelParams(alpha=0.1, lam=0.1, mu=0.5, d=1)
        t = 2.0
        assert series_p0_alpha_eq_lambda(params, t) == pytest.approx(kernel_h(params, 0.0, t), rel=1e-12)
        assert Pk_alpha_eq_lambda(params, 1, t) == pytest.approx(
            float(coefficient_kernel(params, 1, t)[0]), rel=1e-10
        )

    def test_p0_matches_volterra(self, alpha_eq_lambda_sub):
        """p(0,t) agrees with Volterra below lambda"""
        history = solve_volterra_p0(alpha_eq_lambda_sub, 2.0, n_steps=4096)
        for t in (0.5, 1.0, 2.0):
            assert series_p0_alpha_eq_lambda(alpha_eq_lambda_sub, t) == pytest.approx(history.p0_at(t), abs=1e-6)

    def test_levels_below_lambda(self, alpha_eq_lambda_sub):
        """P(k,t) for mu > lambda agrees with coefficient extraction"""
        t = 2.0
        history = solve_volterra_p0(alpha_eq_lambda_sub, t, n_steps=4096)
        for k in (1, 2):
            assert Pk_alpha_eq_lambda(alpha_eq_lambda_sub, k, t) == pytest.approx(
                Pk_volterra(alpha_eq_lambda_sub, k, t, history), abs=1e-5
            )

    def test_levels_above_lambda(self, alpha_eq_lambda_super):
        """P(k,t) for mu < lambda agrees with coefficient extraction"""
        t = 1.0
        history = solve_volterra_p0(alpha_eq_lambda_super, t, n_steps=4096)
        assert series_p0_alpha_eq_lambda(alpha_eq_lambda_super, t) == pytest.approx(history.p0_at(t), abs=1e-6)
        for k in (1, 2):
            assert Pk_alpha_eq_lambda(alpha_eq_lambda_super, k, t) == pytest.approx(
                Pk_volterra(alpha_eq_lambda_super, k, t, history), abs=1e-5
            )

    def test_level_zero(self, alpha_eq_lambda_sub):
        """k = 0 returns p(0,t)"""
        t = 1.0
        assert Pk_alpha_eq_lambda(alpha_eq_lambda_sub, 0, t) == pytest.approx(
            series_p0_alpha_eq_lambda(alpha_eq_lambda_sub, t)
        )

    def test_radius(self, alpha_eq_lambda_sub):
        """t < log(mu/lambda)/(mu - lambda)"""
        radius = math.log(5.0) / 0.4
        assert series_radius(alpha_eq_lambda_sub) == pytest.approx(radius)
        with pytest.raises(DomainError):
            series_p0_alpha_eq_lambda(alpha_eq_lambda_sub, radius + 0.1)

    def test_g_k_domain(self, alpha_eq_lambda_sub):
        """g_k needs k >= 1 and lambda != mu"""
        assert g_k_eval(alpha_eq_lambda_sub, 2, 0.3, 0.0) == 0.0
        with pytest.raises(DomainError):
            g_k_eval(alpha_eq_lambda_sub, 0, 0.3, 1.0)
        with pytest.raises(DomainError):
            g_k_eval(ModelParams(alpha=0.5, lam=0.5, mu=0.5, d=2), 1, 0.3, 1.0)

    @pytest.mark.parametrize("k,x", [(0, 0.5), (1, 0.5), (2, 0.3), (5, 0.1), (5, 0.9)])
    def test_polylog_identity(self, k, x):
        """Series of terminating 2F1 values against the logarithm tail"""
        assert polylog_identity_check(k, x) < 1e-8

    def test_identity_closed_value(self):
        """k = 1, x = 1/2 gives 2 log 2 - 1, not Li_2(1/2)"""
        series = 0.5 * sum(hyp2f1(1 - s, 2, 1.0, 0.5) / s for s in range(1, 200))
        dilog_half = math.pi**2 / 12 - math.log(2) ** 2 / 2
        assert series == pytest.approx(2 * math.log(2) - 1, abs=1e-12)
        assert abs(series - dilog_half) > 0.1

    def test_levels_vanish_at_start_above_lambda(self, alpha_eq_lambda_super):
        """P(1,t) grows like d lambda t from zero when mu < lambda"""
        t = 1e-3
        expected = alpha_eq_lambda_super.d * alpha_eq_lambda_super.lam * t
        assert Pk_alpha_eq_lambda(alpha_eq_lambda_super, 1, t) == pytest.approx(expected, rel=0.01)
        assert abs(Pk_alpha_eq_lambda(alpha_eq_lambda_super, 2, t)) < 1e-5


class TestGeneratingFunction:
    """Test F(z,t) on its closed and quadrature routes"""

    def test_initial(self, equal_rates):
        """F(z, 0) = 1"""
        assert eval_F(equal_rates, 0.4, 0.0) == pytest.approx(1.0)

    def test_zero_argument(self, equal_rates):
        """F(0, t) = p(0, t)"""
        t = 1.0
        assert eval_F(equal_rates, 0.0, t) == pytest.approx(series_p0_equal_rates(equal_rates, t), abs=1e-6)

    def test_routes_agree(self, equal_rates):
        """Closed and quadrature routes agree"""
        history = solve_volterra_p0(equal_rates, 1.5, n_steps=4096)
        closed = eval_F(equal_rates, 0.5, 1.0, route="closed")
        quadrature = eval_F(equal_rates, 0.5, 1.0, history, route="quadrature")
        assert closed == pytest.approx(quadrature, abs=1e-5)

    def test_proper_law(self, subcritical):
        """F(1-, t) = 1 in a regime without a closed form"""
        history = solve_volterra_p0(subcritical, 2.0, n_steps=2048)
        assert eval_F(subcritical, 1.0 - 1e-9, 2.0, history) == pytest.approx(1.0, abs=1e-6)

    def test_closed_unavailable(self, subcritical):
        """route='closed' outside the closed regimes is an error"""
        with pytest.raises(DomainError):
            eval_F(subcritical, 0.5, 1.0, route="closed")

    def test_quadrature_needs_history(self, subcritical):
        """Quadrature without a p(0,.) history is an error"""
        with pytest.raises(DomainError):
            eval_F(subcritical, 0.5, 1.0)

    def test_argument_range(self, equal_rates):
        """z must lie in [0, 1)"""
        with pytest.raises(DomainError):
            eval_F(equal_rates, 1.0, 0.5)


class TestLaplaceTransform:
    """Test the lambda = mu Laplace transform of p(0,t)"""

    def test_single_ray(self):
        """d = 1: int e^(-st)/(1 + lambda t) dt = e^(s/lambda) E1(s/lambda)/lambda"""
        params = ModelParams(alpha=0.5, lam=0.5, mu=0.5, d=1)
        s = 1.5
        w = s / 0.5
        assert laplace_p0(params, s) == pytest.approx(math.exp(w) * special.exp1(w) / 0.5, rel=1e-8)

    def test_matches_volterra(self):
        """Several rays: transform of the Volterra solution"""
        params = ModelParams(alpha=0.3, lam=0.5, mu=0.5, d=3)
        s = 2.0
        history = solve_volterra_p0(params, 20.0, n_steps=8192)
        numeric = float(np.trapz(np.exp(-s * history.t_grid) * history.p0, history.t_grid))
        assert laplace_p0(params, s) == pytest.approx(numeric, rel=1e-4)

    def test_domain(self, subcritical, equal_rates):
        """lambda != mu and s <= 0 are rejected"""
        with pytest.raises(DomainError):
            laplace_p0(subcritical, 1.0)
        with pytest.raises(DomainError):
            laplace_p0(equal_rates, 0.0)


class TestTransientLaw:
    """Test the method dispatcher and CSV output"""

    def test_auto_inside_radius(self, equal_rates):
        """auto picks the closed series inside the radius"""
        law = transient_law(equal_rates, np.linspace(0.0, 1.5, 4), k_max=2)
        assert law.method == TransientMethod.SERIES_EQUAL_RATES
        assert law.Pk.shape == (2, 4)
        assert law.diagnostics["trunc_order"].shape == (3, 4)
        assert law.p0[0] == 1.0

    def test_auto_outside_radius(self, equal_rates):
        """auto falls back to Volterra past the radius"""
        law = transient_law(equal_rates, np.linspace(0.0, 3.0, 4), k_max=1, n_steps=1024)
        assert law.method == TransientMethod.VOLTERRA

    def test_series_rejected(self, subcritical):
        """series outside the closed regimes is a domain error"""
        with pytest.raises(DomainError):
            transient_law(subcritical, [0.5, 1.0], method="series")

    def test_series_outside_radius(self, equal_rates):
        """series past the radius is a domain error, not a silent fallback"""
        with pytest.raises(DomainError, match="radius"):
            transient_law(equal_rates, [0.5, 3.0], method="series")

    def test_registry_regimes_gate_dispatch(self, subcritical, monkeypatch):
        """A regime missing from a registry entry is rejected by the dispatcher"""
        import bdi_config

        entry = dict(bdi_config.SUPPORTED_METHODS["volterra"], regimes=("EqualRates",))
        monkeypatch.setitem(bdi_config.SUPPORTED_METHODS, "volterra", entry)
        with pytest.raises(DomainError, match="Subcritical"):
            transient_law(subcritical, [0.5], method="volterra", n_steps=64)

    def test_registry_law_method_tags_result(self, subcritical, monkeypatch):
        """The registry law_method picks the numerical route"""
        import bdi_config

        entry = dict(bdi_config.SUPPORTED_METHODS["volterra"], law_method="Theorem25")
        monkeypatch.setitem(bdi_config.SUPPORTED_METHODS, "volterra", entry)
        law = transient_law(subcritical, [0.0, 1.0], method="volterra", k_max=1)
        assert law.method == TransientMethod.THEOREM25

    def test_unknown_method(self, subcritical):
        """Unknown method names are rejected"""
        with pytest.raises(ValueError):
            transient_law(subcritical, [0.5], method="euler")

    def test_theorem25_method(self, subcritical):
        """theorem25 route reports its method tag"""
        law = transient_law(subcritical, [0.0, 1.0, 2.0], method="theorem25", k_max=1)
        assert law.method == TransientMethod.THEOREM25
        assert 0.0 < law.p0[2] < law.p0[1] < 1.0

    @pytest.mark.montecarlo
    def test_monte_carlo_method(self, subcritical):
        """mc route: p(0,0) = 1, stderr reported as tail bound"""
        law = transient_law(subcritical, [0.0, 1.0], method="mc", k_max=2, n_paths=500, seed=3)
        assert law.method == TransientMethod.MONTE_CARLO
        assert law.p0[0] == 1.0
        assert law.diagnostics["tail_bound"][0, 1] > 0.0

    def test_write_csv(self, equal_rates, tmp_path):
        """CSV has the p(0,t) row (k = -1) and one row per level"""
        law = transient_law(equal_rates, [0.5, 1.0], k_max=2)
        path = tmp_path / "transient.csv"
        write_transient_csv(law, str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "method,t,k,value,trunc_order,tail_bound"
        assert len(lines) == 1 + 2 * 3
        assert lines[1].startswith("SeriesEqualRates,0.5,-1,")
