"""
Star-BDI Validation Campaign

Cross-method checks behind `star-bdi validate`. Each check compares two
independent routes (closed series, Volterra, cycle convolution, Monte Carlo,
limit laws) and returns a result dict; failures are reported, never raised.
"""

import json
import math
import time
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from .asymptotics import limit_law, limit_moments
from .combinatorics import check_routes
from .diffusion import (
    DiffusionParams,
    convergence_probe,
    fokker_planck_residual,
    psi,
    stationary_density,
    stationary_ks_distance,
)
from .model import ModelParams, empirical_marginal
from .transient import (
    Pk_alpha_eq_lambda,
    Pk_equal_rates,
    build_cycle_distribution,
    eval_F,
    p0_theorem25,
    polylog_identity_check,
    series_p0_alpha_eq_lambda,
    series_p0_equal_rates,
    series_radius,
    solve_volterra_p0,
    theta_for,
)

logger = logging.getLogger(__name__)

THRESHOLDS_FILE = Path(__file__).resolve().parent.parent / "json-files" / "validation-thresholds.json"

FIGURE_PARAMS = {
    2: {"alpha": 0.5, "lam": 0.5, "mu": 0.5, "d_values": (1, 2, 3, 4, 10), "t_max": 1.8},
    3: {"alpha": 0.1, "lam": 0.1, "mu": 0.5, "d_values": (1, 2, 3, 4), "t_max": 3.6},
    4: {"alpha": 0.5, "lam": 0.5, "mu": 0.1, "d_values": (1, 2, 3, 4), "t_max": 0.9 * math.log(5.0) / 0.4},
}

# one parameter set per cycle-distribution case, outside the closed regimes
CYCLE_CASES = (
    ModelParams(alpha=0.3, lam=0.6, mu=0.4, d=1),
    ModelParams(alpha=0.3, lam=0.5, mu=0.5, d=1),
    ModelParams(alpha=0.3, lam=0.4, mu=0.6, d=1),
)


def load_thresholds(path: Optional[Path] = None) -> Dict[str, Any]:
    """Read the campaign thresholds fixture."""
    path = path or THRESHOLDS_FILE
    with open(path) as handle:
        return json.load(handle)


def figure_params(figure: int, d: int) -> ModelParams:
    preset = FIGURE_PARAMS[figure]
    return ModelParams(alpha=preset["alpha"], lam=preset["lam"], mu=preset["mu"], d=d)


def _z_scores(estimate: float, reference: float, n_paths: int) -> float:
    se = math.sqrt(max(reference * (1.0 - reference), 1e-300) / n_paths)
    return abs(estimate - reference) / se


class ValidationCampaign:
    """Registry of cross-method checks with `list_checks` / `execute_check` dispatch."""

    def __init__(self, thresholds: Optional[Dict[str, Any]] = None):
        self.thresholds = thresholds or load_thresholds()
        self.quick = False

    def _paths(self, key: str = "full") -> int:
        paths = self.thresholds["paths"]
        return paths["quick"] if self.quick and key == "full" else paths[key]

    def _result(self, name: str, residual: float, threshold: float, **extra: Any) -> Dict[str, Any]:
        return {
            "success": bool(residual <= threshold),
            "check": name,
            "residual": float(residual),
            "threshold": float(threshold),
            "error": None,
            **extra,
        }

    def list_checks(self) -> List[Dict[str, Any]]:
        """List available checks."""
        return [
            {"name": "combinatorics_routes", "description": "t_{n,k}: recursion, closed form and enumeration agree"},
            {"name": "polylog_identity", "description": "2F1 series against the logarithm tail, k = 0..5"},
            {"name": "equal_rates_series", "description": "Equal-rates p(0,t) series against Volterra"},
            {"name": "equal_rates_monte_carlo", "description": "Equal-rates P(1,t) against simulation"},
            {"name": "figure2_ordering", "description": "p(0,t) decreasing and P(1,t) increasing in d"},
            {"name": "alpha_eq_lambda_series", "description": "alpha = lambda p(0,t) series against Volterra"},
            {"name": "alpha_eq_lambda_monte_carlo", "description": "alpha = lambda P(k,t), k = 0..2, against simulation"},
            {"name": "cycle_series", "description": "Cycle-convolution p(0,t) against Volterra, three cases"},
            {"name": "asymptotic_law", "description": "Limit law against simulation at t = 200, moments against pmf"},
            {"name": "diffusion", "description": "Fokker-Planck residual, KS probe and stationary rate"},
            {"name": "normalization", "description": "F(z,0) = 1, F(0,t) = p(0,t), F(1-,t) = 1, total mass 1"},
        ]

    def execute_check(self, check_name: str, parameters: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """Run one check by name."""
        parameters = parameters or {}
        logger.info(f"Executing check: {check_name} with parameters: {parameters}")

        handlers: Dict[str, Callable[[Dict[str, Any]], Dict[str, Any]]] = {
            "combinatorics_routes": self._combinatorics_routes,
            "polylog_identity": self._polylog_identity,
            "equal_rates_series": self._equal_rates_series,
            "equal_rates_monte_carlo": self._equal_rates_monte_carlo,
            "figure2_ordering": self._figure2_ordering,
            "alpha_eq_lambda_series": self._alpha_eq_lambda_series,
            "alpha_eq_lambda_monte_carlo": self._alpha_eq_lambda_monte_carlo,
            "cycle_series": self._cycle_series,
            "asymptotic_law": self._asymptotic_law,
            "diffusion": self._diffusion,
            "normalization": self._normalization,
        }

        handler = handlers.get(check_name)
        if not handler:
            return {"success": False, "check": check_name, "error": f"Unknown check: {check_name}"}

        started = time.perf_counter()
        try:
            result = handler(parameters)
        except Exception as e:
            logger.error(f"Check {check_name} raised {type(e).__name__}: {e}")
            result = {
                "success": False,
                "check": check_name,
                "residual": math.nan,
                "threshold": math.nan,
                "error": f"{type(e).__name__}: {e}",
            }
        result["seconds"] = time.perf_counter() - started
        status = "PASS" if result["success"] else "FAIL"
        logger.info(f"{status} {check_name}: residual={result.get('residual')} threshold={result.get('threshold')}")
        return result

    def run(self, quick: bool = False, names: Optional[List[str]] = None) -> List[Dict[str, Any]]:
        """Run every registered check (or `names`) in order."""
        self.quick = quick
        names = names or [check["name"] for check in self.list_checks()]
        logger.info("=" * 80)
        logger.info(f"Validation campaign - {len(names)} checks, quick={quick}")
        logger.info("=" * 80)
        return [self.execute_check(name) for name in names]

    # -- checks ---------------------------------------------------------------

    def _combinatorics_routes(self, params: Dict[str, Any]) -> Dict[str, Any]:
        outcome = check_routes(params.get("n_max", self.thresholds["combinatorics_n_max"]))
        return self._result(
            "combinatorics_routes",
            float(len(outcome["mismatches"])),
            0.0,
            n_max=outcome["n_max"],
        )

    def _polylog_identity(self, params: Dict[str, Any]) -> Dict[str, Any]:
        xs = [round(0.1 * i, 1) for i in range(1, 10)]
        worst = max(polylog_identity_check(k, x) for k in range(6) for x in xs)
        return self._result("polylog_identity", worst, self.thresholds["polylog_identity"])

    def _series_vs_volterra(self, figure: int, series_fn, params: Dict[str, Any]) -> float:
        preset = FIGURE_PARAMS[figure]
        d_values = params.get("d_values", preset["d_values"][:2] if self.quick else preset["d_values"])
        n_steps = self.thresholds["volterra_steps"]
        worst = 0.0
        for d in d_values:
            model = figure_params(figure, d)
            history = solve_volterra_p0(model, preset["t_max"], n_steps)
            # series every 256th grid point
            for t, p0 in zip(history.t_grid[::256], history.p0[::256]):
                if t >= series_radius(model):
                    continue
                worst = max(worst, abs(series_fn(model, t) - p0))
        return worst

    def _equal_rates_series(self, params: Dict[str, Any]) -> Dict[str, Any]:
        worst = self._series_vs_volterra(2, lambda m, t: series_p0_equal_rates(m, t), params)
        return self._result("equal_rates_series", worst, self.thresholds["series_vs_volterra"])

    def _equal_rates_monte_carlo(self, params: Dict[str, Any]) -> Dict[str, Any]:
        n_paths = params.get("n_paths", self._paths())
        worst = 0.0
        for i, t in enumerate((0.5, 1.0, 1.5)):
            model = figure_params(2, params.get("d", 3))
            marginal = empirical_marginal(model, t, n_paths, seed=100 + i, k_max=5)
            worst = max(worst, _z_scores(marginal.probability(1), Pk_equal_rates(model, 1, t), n_paths))
        return self._result(
            "equal_rates_monte_carlo", worst, self.thresholds["mc_standard_errors"], n_paths=n_paths
        )

    def _figure2_ordering(self, params: Dict[str, Any]) -> Dict[str, Any]:
        d_values = FIGURE_PARAMS[2]["d_values"]
        violations = 0
        for t in np.linspace(0.1, 1.8, 18):
            p0 = [series_p0_equal_rates(figure_params(2, d), t) for d in d_values]
            p1 = [Pk_equal_rates(figure_params(2, d), 1, t) for d in d_values]
            violations += int(np.sum(np.diff(p0) >= 0)) + int(np.sum(np.diff(p1) <= 0))
        return self._result("figure2_ordering", float(violations), 0.0)

    def _alpha_eq_lambda_series(self, params: Dict[str, Any]) -> Dict[str, Any]:
        worst = max(
            self._series_vs_volterra(figure, lambda m, t: series_p0_alpha_eq_lambda(m, t), params)
            for figure in (3, 4)
        )
        return self._result("alpha_eq_lambda_series", worst, self.thresholds["series_vs_volterra"])

    def _alpha_eq_lambda_monte_carlo(self, params: Dict[str, Any]) -> Dict[str, Any]:
        n_paths = params.get("n_paths", self._paths())
        z_limit = self.thresholds["mc_standard_errors"]
        z_values: List[float] = []
        seed = 200
        for figure in (3, 4):
            preset = FIGURE_PARAMS[figure]
            d_values = params.get("d_values", preset["d_values"][:2] if self.quick else preset["d_values"])
            times = params.get("times", [fraction * preset["t_max"] for fraction in (0.25, 0.5, 0.9)])
            for d in d_values:
                model = figure_params(figure, d)
                for t in times:
                    theta = theta_for(model, t)
                    marginal = empirical_marginal(model, t, n_paths, seed=seed, k_max=5)
                    seed += 1
                    for k in (0, 1, 2):
                        exact = Pk_alpha_eq_lambda(model, k, t, theta)
                        z_values.append(_z_scores(marginal.probability(k), exact, n_paths))
        outside = sum(z > z_limit for z in z_values) / len(z_values)
        return self._result(
            "alpha_eq_lambda_monte_carlo",
            outside,
            1.0 - self.thresholds["mc_cell_fraction"],
            n_paths=n_paths,
            cells=len(z_values),
            worst_z=max(z_values),
        )

    def _cycle_series(self, params: Dict[str, Any]) -> Dict[str, Any]:
        t_max = params.get("t_max", 5.0)
        worst = 0.0
        for base in CYCLE_CASES:
            for d in (1, 2, 3):
                model = base.with_d(d)
                history = solve_volterra_p0(model, t_max, self.thresholds["volterra_steps"])
                cycles = build_cycle_distribution(model, t_max)
                for t in np.linspace(0.0, t_max, 21):
                    worst = max(worst, abs(p0_theorem25(model, cycles, t) - history.p0_at(t)))
        return self._result("cycle_series", worst, self.thresholds["theorem25_vs_volterra"])

    def _asymptotic_law(self, params: Dict[str, Any]) -> Dict[str, Any]:
        model = ModelParams(alpha=0.1, lam=0.1, mu=0.5, d=3)
        n_paths = params.get("n_paths", self._paths("asymptotic") // (5 if self.quick else 1))
        law = limit_law(model, 500)
        marginal = empirical_marginal(model, 200.0, n_paths, seed=300, k_max=10)
        worst_z = max(_z_scores(marginal.probability(k), law.pmf(k), n_paths) for k in range(11))

        ks = np.arange(501)
        pmf = np.array([law.pmf(k) for k in ks])
        mean_pmf = float(np.sum(ks * pmf))
        var_pmf = float(np.sum(ks**2 * pmf)) - mean_pmf**2
        mean, variance = limit_moments(model)
        moment_error = max(abs(mean_pmf - mean) / mean, abs(var_pmf - variance) / variance)
        result = self._result("asymptotic_law", worst_z, self.thresholds["mc_standard_errors"], n_paths=n_paths)
        result["moment_error"] = moment_error
        result["success"] = result["success"] and moment_error <= self.thresholds["moments_relative"]
        return result

    def _diffusion(self, params: Dict[str, Any]) -> Dict[str, Any]:
        dp = DiffusionParams(gamma_t=1.0, mu_t=1.0, beta_t=-0.5, epsilon=0.01)
        grid_dp = DiffusionParams(gamma_t=2.0, mu_t=1.0, beta_t=-0.5, epsilon=0.01)
        fp = max(
            fokker_planck_residual(grid_dp, x, t)
            for x in np.linspace(0.1, 5.0, 20)
            for t in np.linspace(0.1, 5.0, 20)
        )
        n_paths = params.get("n_paths", self._paths("diffusion"))
        ks, band = convergence_probe(dp, 3, 1.0, n_paths, seed=400)
        stationary_ks = stationary_ks_distance(dp, 3)
        late = 1e3 / abs(dp.beta_t)
        rate_gap = abs(psi(dp, late) - stationary_density(dp).rate)

        result = self._result("diffusion", ks, self.thresholds["diffusion_ks"], n_paths=n_paths)
        result.update(fokker_planck=fp, ks_band=band, stationary_ks=stationary_ks, rate_gap=rate_gap)
        result["success"] = (
            result["success"]
            and stationary_ks <= self.thresholds["diffusion_ks"]
            and fp <= self.thresholds["fokker_planck_residual"]
            and rate_gap <= self.thresholds["stationary_rate"]
        )
        return result

    def _normalization(self, params: Dict[str, Any]) -> Dict[str, Any]:
        model = figure_params(2, 3)
        t = 1.0
        history = solve_volterra_p0(model, 2.0, self.thresholds["volterra_steps"])
        p0 = series_p0_equal_rates(model, t)
        total = p0 + sum(Pk_equal_rates(model, k, t) for k in range(1, 61))
        residuals = [
            abs(eval_F(model, 0.0, 0.0) - 1.0),
            abs(eval_F(model, 0.0, t) - p0),
            abs(eval_F(model, 0.0, t, history, route="quadrature") - history.p0_at(t)),
            abs(eval_F(model, 1.0 - 1e-9, 1.5, history, route="quadrature") - 1.0),
            abs(total - 1.0),
        ]
        return self._result("normalization", max(residuals), self.thresholds["normalization"])


# Singleton instance
campaign = ValidationCampaign()
