"""
Transient law of the star-graph process.

Three independent routes to p(0,t):

* the Volterra equation p(0,t) = 1 - G(t) - (d-1) int_0^t G'(t-y) p(0,y) dy,
* the alternating cycle-convolution series 1 - d sum_j (1-d)^(j-1) c^j F_Y^(j)(t),
* closed power series in the equal-rates (mu = alpha = lambda) and
  alpha = lambda regimes.

The generating function F(z,t) and the level probabilities P(k,t) follow
either from the closed series or from coefficient extraction of
F(z,t) = H(t) + (d-1) int_0^t H'(t-y) p(0,y) dy against a p(0,.) history.
"""

import csv
import math
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Any, Dict, List, Optional, Sequence, Tuple

import mpmath
import numpy as np
from scipy.integrate import cumulative_trapezoid

from .combinatorics import (
    PermutationComponentTable,
    ThetaCoefficients,
    t_table_recursive,
    theta_coefficients,
)
from .errors import DomainError, NonConvergence, SingularKernel
from .model import ModelParams, Regime, empirical_marginal
from .specfun import DEFAULT_CONTROL, SeriesControl, compensated_sum, gen_exp_integral, hyp2f1, polylog, sum_series

logger = logging.getLogger(__name__)

# equal-rates series weights are built this far past the exact table
SERIES_ORDER_CAP = 2000
THETA_ORDER_CAP = 512
THETA_BUCKET = 64
MIN_WORKING_DPS = 30


class TransientMethod(str, Enum):
    SERIES_EQUAL_RATES = "SeriesEqualRates"
    SERIES_ALPHA_EQ_LAMBDA = "SeriesAlphaEqLambda"
    THEOREM25 = "Theorem25"
    VOLTERRA = "Volterra"
    MONTE_CARLO = "MonteCarlo"


@dataclass
class SeriesResult:
    value: float
    terms: int
    tail: float


@dataclass
class TransientLaw:
    """
    Evaluated law on a time grid.

    Pk has shape (k_max, len(t_grid)); row k-1 holds P(k, t).
    diagnostics["trunc_order"] and diagnostics["tail_bound"] have shape
    (k_max + 1, len(t_grid)); row 0 refers to p(0,t).
    """

    params: ModelParams
    method: TransientMethod
    t_grid: np.ndarray
    p0: np.ndarray
    Pk: np.ndarray
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def p0_at(self, t: float) -> float:
        if t < 0 or t > self.t_grid[-1] * (1 + 1e-12):
            raise DomainError(f"t={t} outside the solved range [0, {self.t_grid[-1]}]")
        return float(np.interp(t, self.t_grid, self.p0))


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelH:
    """H(t) = h(t, z) and its time derivative."""

    params: ModelParams
    z: float

    def _pieces(self, t):
        p, z = self.params, self.z
        a = p.alpha / p.lam
        t = np.asarray(t, dtype=float)
        if p.lam == p.mu:
            base = 1.0 + p.lam * t * (1.0 - z)
            value = base ** (-a)
            return value, -p.alpha * (1.0 - z) * base ** (-a - 1.0)
        delta = p.mu - p.lam
        big_a, big_b = p.mu - p.lam * z, p.lam * (1.0 - z)
        if delta > 0:
            e = np.exp(-delta * t)
            denom = big_a - big_b * e
            ratio = delta / denom
            log_slope = big_b * delta * e / denom
        else:
            f = np.exp(delta * t)
            denom = big_a * f - big_b
            ratio = delta * f / denom
            log_slope = big_b * delta / denom
        value = ratio**a
        return value, -a * value * log_slope

    def __call__(self, t):
        return self._pieces(t)[0]

    def derivative(self, t):
        return self._pieces(t)[1]


def kernel_h(params: ModelParams, z: float, t: float) -> float:
    """h(t, z; lambda, mu), the d = 1 generating function."""
    if t < 0:
        raise DomainError(f"t must be nonnegative, got {t}")
    return float(KernelH(params, z)(t))


def kernel_h_prime(params: ModelParams, z: float, t: float) -> float:
    return float(KernelH(params, z).derivative(t))


def kernel_G(params: ModelParams, t):
    """G(t) = 1 - h(t, 0) and G'(t); accepts scalars or arrays."""
    h0, h0_prime = KernelH(params, 0.0)._pieces(t)
    if np.ndim(h0) == 0:
        return float(1.0 - h0), float(-h0_prime)
    return 1.0 - h0, -h0_prime


def cycle_mass(params: ModelParams) -> float:
    """G(inf): 1 when lambda >= mu, else 1 - (1 - lambda/mu)^(alpha/lambda)."""
    if params.lam >= params.mu:
        return 1.0
    return 1.0 - (1.0 - params.lam / params.mu) ** (params.alpha / params.lam)


def cycle_cdf(params: ModelParams, t):
    """Closed F_Y^(1)(t) for the three cases."""
    return kernel_G(params, t)[0] / cycle_mass(params)


def cycle_density(params: ModelParams, t):
    """Closed f_Y^(1)(t) for the three cases."""
    return kernel_G(params, t)[1] / cycle_mass(params)


def coefficient_kernel(params: ModelParams, k: int, t):
    """
    phi_k(t) = [z^k] H(t; z) and its time derivative.

    H factorises as A(t) (1 - z w(t))^(-alpha/lambda), so phi_k is a negative
    binomial term in w(t).
    """
    a = params.alpha / params.lam
    lam, mu, alpha = params.lam, params.mu, params.alpha
    t = np.asarray(t, dtype=float)
    coeff = math.exp(math.lgamma(a + k) - math.lgamma(a) - math.lgamma(k + 1))
    if lam == mu:
        base = 1.0 + lam * t
        amp = base ** (-a)
        amp_prime = -alpha * amp / base
        w = lam * t / base
        w_prime = lam / base**2
    else:
        delta = mu - lam
        if delta > 0:
            e = np.exp(-delta * t)
            denom = mu - lam * e
            amp = (delta / denom) ** a
            amp_prime = -amp * alpha * delta * e / denom
            w = lam * (1.0 - e) / denom
            w_prime = lam * delta**2 * e / denom**2
        else:
            f = np.exp(delta * t)
            denom = mu * f - lam
            amp = (delta * f / denom) ** a
            amp_prime = -amp * alpha * delta / denom
            w = lam * (f - 1.0) / denom
            w_prime = lam * delta**2 * f / denom**2
    if k == 0:
        return coeff * amp, coeff * amp_prime
    phi = coeff * amp * w**k
    phi_prime = coeff * (amp_prime * w**k + k * amp * w ** (k - 1) * w_prime)
    return phi, phi_prime


# ---------------------------------------------------------------------------
# Volterra route
# ---------------------------------------------------------------------------


def solve_volterra_p0(params: ModelParams, t_max: float, n_steps: Optional[int] = None) -> TransientLaw:
    """Product-trapezoid solution of the renewal equation for p(0,t)."""
    from bdi_config import get_settings

    n_steps = n_steps or get_settings().volterra_steps
    if n_steps < 2:
        raise DomainError(f"n_steps must be >= 2, got {n_steps}")
    if t_max <= 0:
        raise DomainError(f"t_max must be positive, got {t_max}")

    grid = np.linspace(0.0, t_max, n_steps + 1)
    dt = grid[1] - grid[0]
    G, G_prime = kernel_G(params, grid)
    if not (np.all(np.isfinite(G)) and np.all(np.isfinite(G_prime))):
        logger.error(f"Non-finite Volterra kernel for params={params.model_dump()}")
        raise SingularKernel("G or G' is not finite on the grid")

    logger.info(f"Solving Volterra equation - d={params.d}, t_max={t_max}, n_steps={n_steps}")
    p = np.empty(n_steps + 1)
    if params.d == 1:
        p[:] = 1.0 - G
    else:
        weight = params.d - 1
        diagonal = 1.0 + weight * dt * G_prime[0] / 2.0
        p[0] = 1.0
        for n in range(1, n_steps + 1):
            history = 0.5 * G_prime[n] * p[0]
            if n > 1:
                history += float(np.dot(G_prime[n - 1 : 0 : -1], p[1:n]))
            p[n] = (1.0 - G[n] - weight * dt * history) / diagonal

    return TransientLaw(
        params=params,
        method=TransientMethod.VOLTERRA,
        t_grid=grid,
        p0=p,
        Pk=np.zeros((0, grid.size)),
        diagnostics={"n_steps": n_steps, "dt": dt},
    )


def _history_convolution(history: TransientLaw, kernel_prime, t: float) -> float:
    """int_0^t K'(t - y) p(0, y) dy by trapezoid on the history grid."""
    if t > history.t_grid[-1] * (1 + 1e-12):
        raise DomainError(f"t={t} beyond the p(0,t) history (t_max={history.t_grid[-1]})")
    if t <= 0:
        return 0.0
    y = history.t_grid[history.t_grid < t]
    y = np.append(y, t)
    values = kernel_prime(t - y) * np.interp(y, history.t_grid, history.p0)
    return float(np.trapz(values, y))


def Pk_volterra(params: ModelParams, k: int, t: float, p0_history: TransientLaw) -> float:
    """P(k,t) = phi_k(t) + (d-1) int_0^t phi_k'(t-y) p(0,y) dy, any regime, k >= 1."""
    if k < 1:
        raise DomainError(f"level must be >= 1, got {k}")
    phi_t, _ = coefficient_kernel(params, k, t)
    value = float(phi_t)
    if params.d > 1:
        value += (params.d - 1) * _history_convolution(p0_history, lambda u: coefficient_kernel(params, k, u)[1], t)
    return value


# ---------------------------------------------------------------------------
# Cycle-convolution route
# ---------------------------------------------------------------------------


@dataclass
class CycleDistribution:
    """f_Y^(1) and F_Y^(j), j = 1..j_max, on a uniform grid; F_conv[j-1] = F_Y^(j)."""

    params: ModelParams
    grid: np.ndarray
    f1: np.ndarray
    F_conv: np.ndarray

    @property
    def dt(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @property
    def j_max(self) -> int:
        return int(self.F_conv.shape[0])


def build_cycle_distribution(
    params: ModelParams,
    t_max: float,
    n_grid: Optional[int] = None,
    j_max: Optional[int] = None,
) -> CycleDistribution:
    """Tabulate f_Y^(1), its distribution function and j-fold convolutions."""
    from bdi_config import get_settings

    settings = get_settings()
    n_grid = n_grid or settings.cycle_grid
    j_max = j_max or settings.cycle_j_max
    if n_grid < 16 or j_max < 1:
        raise DomainError(f"need n_grid >= 16 and j_max >= 1, got {n_grid}, {j_max}")

    grid = np.linspace(0.0, t_max, n_grid + 1)
    dt = grid[1] - grid[0]
    f1 = np.asarray(cycle_density(params, grid), dtype=float)
    F = np.empty((j_max, grid.size))
    F[0] = cumulative_trapezoid(f1, grid, initial=0.0)
    for j in range(1, j_max):
        prev = F[j - 1]
        # prev[0] = 0, so only the f1[0] * prev[n] endpoint needs halving
        F[j] = dt * (np.convolve(f1, prev)[: grid.size] - 0.5 * f1[0] * prev)
    logger.info(f"Built cycle distribution - case={params.case.value}, t_max={t_max}, n_grid={n_grid}, j_max={j_max}")
    return CycleDistribution(params=params, grid=grid, f1=f1, F_conv=F)


def _theorem25_terms(params: ModelParams, cycles: CycleDistribution, F_values: np.ndarray) -> np.ndarray:
    # |term_j| = d (d-1)^(j-1) c^j F_Y^(j)(t); sign from (1-d)^(j-1)
    d = params.d
    c = cycle_mass(params)
    j = np.arange(1, cycles.j_max + 1)
    weights = d * (1.0 - d) ** (j - 1) * c**j
    return weights[:, None] * F_values


def _theorem25_sum(terms: np.ndarray, ctl: SeriesControl, max_amplification: float) -> Tuple[float, int, float]:
    acc = 0.0
    previous = math.inf
    for j, term in enumerate(terms, start=1):
        acc += term
        if abs(term) > max_amplification:
            raise NonConvergence(f"cycle series term {j} reached {abs(term):.3e}; cancellation too severe", j, term)
        if abs(term) < ctl.rel_tol and abs(term) <= previous:
            return 1.0 - acc, j, abs(term)
        previous = abs(term)
    raise NonConvergence(f"cycle series did not settle within j_max={len(terms)}", len(terms), float(terms[-1]))


def p0_theorem25(
    params: ModelParams,
    cycles: CycleDistribution,
    t: float,
    ctl: Optional[SeriesControl] = None,
) -> float:
    """p(0,t) = 1 - d sum_j (1-d)^(j-1) c^j F_Y^(j)(t)."""
    from bdi_config import get_settings

    ctl = ctl or DEFAULT_CONTROL
    if t < 0 or t > cycles.grid[-1] * (1 + 1e-12):
        raise DomainError(f"t={t} outside the cycle grid [0, {cycles.grid[-1]}]")
    F_values = np.array([np.interp(t, cycles.grid, row) for row in cycles.F_conv])
    terms = _theorem25_terms(params, cycles, F_values[:, None])[:, 0]
    value, j, tail = _theorem25_sum(terms, ctl, get_settings().theorem25_max_amplification)
    logger.debug(f"Cycle series at t={t}: {j} terms, tail {tail:.2e}")
    return value


def theorem25_history(params: ModelParams, cycles: CycleDistribution, ctl: Optional[SeriesControl] = None) -> TransientLaw:
    """p(0,t) from the cycle series on every grid point of `cycles`."""
    from bdi_config import get_settings

    ctl = ctl or DEFAULT_CONTROL
    limit = get_settings().theorem25_max_amplification
    terms = _theorem25_terms(params, cycles, cycles.F_conv)
    p0 = np.empty(cycles.grid.size)
    orders = np.empty(cycles.grid.size, dtype=int)
    for i in range(cycles.grid.size):
        p0[i], orders[i], _ = _theorem25_sum(terms[:, i], ctl, limit)
    return TransientLaw(
        params=params,
        method=TransientMethod.THEOREM25,
        t_grid=cycles.grid,
        p0=p0,
        Pk=np.zeros((0, cycles.grid.size)),
        diagnostics={"dt": cycles.dt, "orders": orders},
    )


# ---------------------------------------------------------------------------
# Closed series: equal rates
# ---------------------------------------------------------------------------


def series_radius(params: ModelParams) -> Optional[float]:
    """Radius in t of the closed series, None outside the closed regimes."""
    if params.regime == Regime.EQUAL_RATES:
        return 1.0 / params.lam
    if params.regime == Regime.ALPHA_EQ_LAMBDA:
        return math.log(params.mu / params.lam) / (params.mu - params.lam)
    return None


def _series_order(ratio: float, ctl: SeriesControl, cap: int) -> int:
    # terms decay roughly like ratio^n
    if ratio <= 0:
        return 16
    n = int(math.ceil(math.log(ctl.rel_tol * 1e-3) / math.log(ratio))) + 64
    return max(16, min(n, cap, ctl.max_terms))


@lru_cache(maxsize=4)
def default_component_table(n_max: int = 30) -> PermutationComponentTable:
    return t_table_recursive(n_max)


def _require_equal_rates(params: ModelParams, t: float) -> float:
    if params.regime != Regime.EQUAL_RATES:
        raise DomainError(f"equal-rates series needs mu = alpha = lambda, got regime {params.regime.value}")
    x = params.lam * t
    if t < 0 or x >= 1.0:
        logger.error(f"Equal-rates series outside radius: lambda*t={x}")
        raise DomainError(f"equal-rates series needs 0 <= t < 1/lambda = {1 / params.lam}, got t={t}")
    return x


def _p0_equal_rates(params, t, table, ctl) -> SeriesResult:
    x = _require_equal_rates(params, t)
    if x == 0.0:
        return SeriesResult(1.0, 0, 0.0)
    n_terms = _series_order(x, ctl, SERIES_ORDER_CAP)
    s = table.series_weights(params.d, n_terms)

    def term(n: int) -> float:
        if n > n_terms:
            raise NonConvergence(f"equal-rates series needs more than {n_terms} terms", n_terms)
        return (-x) ** n * s[n]

    value, terms, last = sum_series(term, ctl, label="p0 equal rates")
    return SeriesResult(value, terms, abs(last))


def series_p0_equal_rates(
    params: ModelParams,
    t: float,
    table: Optional[PermutationComponentTable] = None,
    ctl: Optional[SeriesControl] = None,
) -> float:
    """p(0,t) = 1 + sum_n (-lambda t)^n / n! sum_j t_{n,j} d^j, for lambda t < 1."""
    return _p0_equal_rates(params, t, table or default_component_table(), ctl or DEFAULT_CONTROL).value


def inner_series_equal_rates(n: int, k: int, x: float, ctl: Optional[SeriesControl] = None) -> float:
    """sum_{r>=0} n/(n+r) q^r 2F1(-r,-k;1;-1/x) with q = x/(1+x), summed term by term."""
    q = x / (1.0 + x)
    value, _, _ = sum_series(
        lambda r: n / (n + r) * q**r * hyp2f1(-r, -k, 1.0, -1.0 / x, ctl), ctl, label="equal-rates r-series"
    )
    return value


def _inner_closed_equal_rates(n: int, k: int, q: float, ctl: SeriesControl) -> float:
    # closed form of the r-series: 2F1(n, k+1; n+k+1; q) / C(n+k, k)
    log_binom = math.lgamma(n + k + 1) - math.lgamma(k + 1) - math.lgamma(n + 1)
    return hyp2f1(n, k + 1, n + k + 1, q, ctl) * math.exp(-log_binom)


def _pk_equal_rates(params, k, t, table, ctl) -> SeriesResult:
    if k < 1:
        raise DomainError(f"level must be >= 1, got {k}")
    x = _require_equal_rates(params, t)
    if x == 0.0:
        return SeriesResult(0.0, 0, 0.0)
    d = params.d
    prefactor = math.exp(k * math.log(x) - (k + 1) * math.log1p(x))
    if d == 1:
        return SeriesResult(prefactor, 0, 0.0)
    q = x / (1.0 + x)
    n_terms = _series_order(x, ctl, SERIES_ORDER_CAP)
    s = table.series_weights(d, n_terms)

    def term(n: int) -> float:
        if n > n_terms:
            raise NonConvergence(f"equal-rates P(k,t) series needs more than {n_terms} terms", n_terms)
        return (-x) ** n * s[n] * _inner_closed_equal_rates(n, k, q, ctl)

    inner, terms, last = sum_series(term, ctl, start=1, label=f"P({k},t) equal rates")
    return SeriesResult(prefactor * (d + (d - 1) * inner), terms, prefactor * (d - 1) * abs(last))


def Pk_equal_rates(
    params: ModelParams,
    k: int,
    t: float,
    table: Optional[PermutationComponentTable] = None,
    ctl: Optional[SeriesControl] = None,
) -> float:
    """P(k,t) = (lambda t)^k/(lambda t + 1)^(k+1) {d + (d-1) sum_n ...}."""
    return _pk_equal_rates(params, k, t, table or default_component_table(), ctl or DEFAULT_CONTROL).value


# ---------------------------------------------------------------------------
# Closed series: alpha = lambda, mu != lambda
# ---------------------------------------------------------------------------


def _require_alpha_eq_lambda(params: ModelParams, t: float) -> float:
    if params.regime != Regime.ALPHA_EQ_LAMBDA:
        raise DomainError(f"alpha = lambda series needs alpha = lambda != mu, got regime {params.regime.value}")
    radius = series_radius(params)
    if t < 0 or t >= radius:
        logger.error(f"alpha = lambda series outside radius: t={t}, radius={radius}")
        raise DomainError(f"alpha = lambda series needs 0 <= t < {radius}, got t={t}")
    return radius


@lru_cache(maxsize=16)
def _cached_theta(params: ModelParams, n_max: int) -> ThetaCoefficients:
    return theta_coefficients(params, n_max)


def theta_for(params: ModelParams, t: float, ctl: Optional[SeriesControl] = None) -> ThetaCoefficients:
    """Theta table long enough for the series at time t."""
    ctl = ctl or DEFAULT_CONTROL
    radius = _require_alpha_eq_lambda(params, t)
    n_max = _series_order(t / radius, ctl, THETA_ORDER_CAP)
    # round up so nearby times share one cached table
    n_max = min(THETA_BUCKET * math.ceil(n_max / THETA_BUCKET), THETA_ORDER_CAP)
    return _cached_theta(params, n_max)


def _theta_terms_needed(theta: ThetaCoefficients, lam_t: float, ctl: SeriesControl) -> int:
    small = 0
    for n in range(2, theta.n_max + 1):
        magnitude = theta.scaled[n] * lam_t**n
        # the kernels scale like (lambda t)^n, so this bounds the dropped terms
        small = small + 1 if magnitude < ctl.rel_tol * 1e-3 else 0
        if small >= ctl.consecutive_small:
            return n
    raise NonConvergence(f"theta table (n_max={theta.n_max}) too short for lambda*t={lam_t}", theta.n_max)


def _p0_alpha_eq_lambda(params, t, theta, ctl) -> SeriesResult:
    _require_alpha_eq_lambda(params, t)
    if t == 0:
        return SeriesResult(1.0, 0, 0.0)
    lam, mu, d = params.lam, params.mu, params.d
    lam_t = lam * t
    closed = 1.0 - (mu - lam) / (mu - lam * math.exp(-(mu - lam) * t))
    y = lam_t * (d - 1)
    exponential_block = 0.0 if d == 1 else (math.expm1(-y) + y) / (d - 1)

    def term(n: int) -> float:
        if n > theta.n_max:
            raise NonConvergence(f"theta table (n_max={theta.n_max}) too short at t={t}", theta.n_max)
        return (-lam_t) ** n * theta.tail_scaled[n]

    if d == 1:
        tail, terms, last = 0.0, 0, 0.0
    else:
        tail, terms, last = sum_series(term, ctl, start=3, label="p0 alpha=lambda")
    value = 1.0 - d * (closed - exponential_block - tail)
    return SeriesResult(value, terms, d * abs(last))


def series_p0_alpha_eq_lambda(
    params: ModelParams,
    t: float,
    theta: Optional[ThetaCoefficients] = None,
    ctl: Optional[SeriesControl] = None,
) -> float:
    """p(0,t) for alpha = lambda != mu inside t < ln(mu/lambda)/(mu-lambda)."""
    ctl = ctl or DEFAULT_CONTROL
    theta = theta or theta_for(params, t, ctl)
    return _p0_alpha_eq_lambda(params, t, theta, ctl).value


def _working_dps(n_max: int, scale: float, extra: float = 0.0) -> int:
    """Decimal digits covering the n!/scale^n cancellation of the kernels."""
    lost = math.lgamma(n_max + 1) / math.log(10)
    if scale > 0:
        lost -= n_max * math.log10(scale)
    return int(MIN_WORKING_DPS + max(0.0, lost) + extra)


def _g_values(params: ModelParams, z: float, t: float, n_max: int) -> List[Any]:
    """g_1..g_{n_max} (index 0 unused) in the current mpmath precision."""
    lam, mu = mpmath.mpf(params.lam), mpmath.mpf(params.mu)
    z, t = mpmath.mpf(z), mpmath.mpf(t)
    if params.mu > params.lam:
        diff, lead, arg = lam - mu, lam * (1 - z), lam * (1 - z) / (mu - lam * z)
    else:
        diff, lead, arg = mu - lam, mu - lam * z, (mu - lam * z) / (lam * (1 - z))
    if not -1 < arg < 1:
        raise DomainError(f"polylog argument {float(arg):.6g} outside (-1, 1) for z={float(z)}")
    shifted = arg * mpmath.exp(diff * t)
    li = [mpmath.mpf(0)] + [mpmath.polylog(m, arg) for m in range(1, n_max + 1)]
    li_shifted = [mpmath.mpf(0)] + [mpmath.polylog(m, shifted) for m in range(1, n_max + 1)]
    values = [mpmath.mpf(0)]
    for n in range(1, n_max + 1):
        fact_n = mpmath.factorial(n)
        bracket = lead * diff ** (n - 1) * t**n + fact_n * (li_shifted[n] - li[n])
        for r in range(1, n):
            bracket -= fact_n / mpmath.factorial(r) * (diff * t) ** r * li[n - r]
        values.append(bracket / diff ** (n + 1))
    return values


def g_k_eval(params: ModelParams, k: int, z: float, t: float, ctl: Optional[SeriesControl] = None) -> float:
    """g_k(z) of the alpha = lambda generating function, both branches."""
    if k < 1:
        raise DomainError(f"g_k needs k >= 1, got {k}")
    if params.lam == params.mu:
        raise DomainError("g_k is defined for lambda != mu only")
    if t == 0:
        return 0.0
    with mpmath.workdps(_working_dps(k, abs(params.mu - params.lam) * t)):
        return float(_g_values(params, z, t, k)[k])


def _F_alpha_eq_lambda(params, z, t, theta, ctl) -> float:
    _require_alpha_eq_lambda(params, t)
    lam, mu, d = params.lam, params.mu, params.d
    if params.mu < params.lam and z >= mu / lam:
        raise DomainError(f"closed F needs z < mu/lambda = {mu / lam} when mu < lambda")
    if t == 0:
        return 1.0
    head = 1.0 - d + d * (mu - lam) / (mu - lam * z - lam * (1.0 - z) * math.exp(-(mu - lam) * t))
    if d == 1:
        return head
    n_max = _theta_terms_needed(theta, lam * t, ctl)
    with mpmath.workdps(_working_dps(n_max, abs(mu - lam) * t)):
        g = _g_values(params, z, t, n_max)
        scaled = [float((-mpmath.mpf(lam)) ** n * g[n]) for n in range(n_max + 1)]
        first = float(g[1])
    bracket = -lam * first + compensated_sum(theta.scaled[n] * scaled[n] for n in range(2, n_max + 1))
    return head - d * (d - 1) * (mu - lam) ** 2 / (mu - lam * z) * bracket


def _pfaff_coefficients(k: int, count: int, base: Any, offset: int) -> List[Any]:
    # 2F1(-m, k+1; 1; 1-base) with m = index - offset, via the terminating Pfaff form
    w = -(1 - base) / base
    out = [mpmath.mpf(0)]
    for index in range(1, count + 1):
        m = index - offset
        acc = mpmath.mpf(0)
        for i in range(0, min(m, k) + 1):
            acc += mpmath.binomial(m, i) * mpmath.binomial(k, i) * w**i
        out.append(base**m * acc)
    return out


def _l_terms(dps: int, k: int, base: float) -> int:
    # coefficients decay like base^l l^k
    return int(math.ceil((dps + 10 + k * 4) / math.log10(1.0 / base))) + k + 10


def _pk_alpha_eq_lambda(params, k, t, theta, ctl) -> SeriesResult:
    if k < 0:
        raise DomainError(f"level must be >= 0, got {k}")
    if k == 0:
        return _p0_alpha_eq_lambda(params, t, theta, ctl)
    _require_alpha_eq_lambda(params, t)
    if t == 0:
        return SeriesResult(0.0, 0, 0.0)
    lam, mu, d = params.lam, params.mu, params.d

    if mu > lam:
        e = math.exp(-(mu - lam) * t)
        lead = d * (mu - lam) * lam**k * (1.0 - e) ** k / (mu - lam * e) ** (k + 1)
    else:
        e = math.exp(-(lam - mu) * t)
        lead = d * (lam - mu) * e * (lam * (1.0 - e)) ** k / (lam - mu * e) ** (k + 1)
    if d == 1:
        return SeriesResult(lead, 0, 0.0)

    n_max = _theta_terms_needed(theta, lam * t, ctl)
    gap = abs(mu - lam)
    dps = _working_dps(n_max, gap * t, extra=gap * t / math.log(10))
    with mpmath.workdps(dps):
        m_lam, m_mu, m_t = mpmath.mpf(lam), mpmath.mpf(mu), mpmath.mpf(t)
        if mu > lam:
            base = m_lam / m_mu
            diff = m_lam - m_mu
            count = _l_terms(dps, k, lam / mu)
            coeffs = _pfaff_coefficients(k, count, base, offset=0)
            decay = [mpmath.mpf(0)] + [1 - mpmath.exp(-l * (m_mu - m_lam) * m_t) for l in range(1, count + 1)]
        else:
            base = m_mu / m_lam
            diff = m_mu - m_lam
            count = _l_terms(dps, k, mu / lam)
            coeffs = _pfaff_coefficients(k, count, base, offset=1)
            decay = [mpmath.mpf(0)] + [1 - mpmath.exp(-s * (m_lam - m_mu) * m_t) for s in range(1, count + 1)]

        inv_powers = [mpmath.mpf(1)] * (count + 1)
        sums = [mpmath.mpf(0)] * (n_max + 1)
        decayed = [mpmath.mpf(0)] * (n_max + 1)
        for m in range(1, n_max + 1):
            acc = mpmath.mpf(0)
            acc_decay = mpmath.mpf(0)
            for l in range(1, count + 1):
                inv_powers[l] /= l
                term = coeffs[l] * inv_powers[l]
                acc += term
                acc_decay += term * decay[l]
            sums[m] = acc
            decayed[m] = acc_decay

        kernels = [0.0] * (n_max + 1)
        for n in range(2, n_max + 1):
            bracket = decayed[n]
            for r in range(1, n):
                bracket += (diff * m_t) ** r / mpmath.factorial(r) * sums[n - r]
            kernels[n] = float(mpmath.factorial(n) * (-m_lam) ** n / diff ** (n - 1) * bracket)
        first_order = float(decayed[1])

    tail = compensated_sum(theta.scaled[n] * kernels[n] for n in range(2, n_max + 1))
    terms, last = n_max - 1, theta.scaled[n_max] * kernels[n_max]

    if mu > lam:
        theta_part = sum((-lam * t) ** n * theta.scaled[n] for n in range(2, n_max + 1))
        inner = (
            lead * mu ** (k + 1) / lam**k
            - d * (d - 1) * (lam - mu) * (-lam * t + theta_part)
            - lam * d * (d - 1) * first_order
            + d * (d - 1) * tail
        )
        value = lam**k / mu ** (k + 1) * inner
        bound = lam**k / mu ** (k + 1) * d * (d - 1) * abs(last)
    else:
        value = (
            lead
            - d * (d - 1) * first_order
            + d * (d - 1) / lam * tail
        )
        bound = d * (d - 1) / lam * abs(last)
    return SeriesResult(value, terms, bound)


def Pk_alpha_eq_lambda(
    params: ModelParams,
    k: int,
    t: float,
    theta: Optional[ThetaCoefficients] = None,
    ctl: Optional[SeriesControl] = None,
) -> float:
    """
    P(k,t) for alpha = lambda != mu; k = 0 returns p(0,t).

    The per-n brackets cancel like n!/|lambda-mu|^n and are evaluated in
    mpmath; theta stays in double precision.
    """
    ctl = ctl or DEFAULT_CONTROL
    theta = theta or theta_for(params, t, ctl)
    return _pk_alpha_eq_lambda(params, k, t, theta, ctl).value


def polylog_identity_check(k: int, x: float, ctl: Optional[SeriesControl] = None) -> float:
    """
    |x sum_s (1/s) 2F1(1-s, k+1; 1; 1-x) - x^(-k) (Li_1(x) - sum_{m<=k} x^m / m)|.

    This is the t -> 0 limit of the mu < lambda level probabilities. The
    right-hand side equals Li_{k+1}(x) only for k = 0.
    """
    if not 0 < x < 1:
        raise DomainError(f"identity check needs 0 < x < 1, got {x}")
    ctl = ctl or DEFAULT_CONTROL
    series, terms, _ = sum_series(
        lambda s: hyp2f1(1 - s, k + 1, 1.0, 1.0 - x, ctl) / s, ctl, start=1, label="polylog identity"
    )
    log_tail = (polylog(1, x, ctl) - math.fsum(x**m / m for m in range(1, k + 1))) / x**k
    residual = abs(x * series - log_tail)
    logger.debug(f"Polylog identity k={k}, x={x}: residual {residual:.2e} after {terms} terms")
    return residual


# ---------------------------------------------------------------------------
# Generating function
# ---------------------------------------------------------------------------


def _F_equal_rates(params, z, t, table, ctl) -> float:
    x_full = _require_equal_rates(params, t)
    if t == 0:
        return 1.0
    d, lam = params.d, params.lam
    x = x_full * (1.0 - z)
    head = 1.0 / (1.0 + x)
    if d == 1:
        return head
    p0 = _p0_equal_rates(params, t, table, ctl).value
    zeta = x / (1.0 + x)
    n_terms = _series_order(x_full, ctl, SERIES_ORDER_CAP)
    s = table.series_weights(d, n_terms)

    def term(n: int) -> float:
        if n > n_terms:
            raise NonConvergence(f"generating-function series needs more than {n_terms} terms", n_terms)
        return n * (-x_full) ** (n + 1) / (n + 1) * s[n] * hyp2f1(1.0, n + 1, n + 2, zeta, ctl)

    series, _, _ = sum_series(term, ctl, start=1, label="F equal rates")
    return head - x_full * (d - 1) * (1.0 - z) / (1.0 + x) * p0 - (d - 1) * (1.0 - z) / (1.0 + x) ** 2 * series


def _F_quadrature(params, z, t, p0_history) -> float:
    if p0_history is None:
        raise DomainError("quadrature route for F(z,t) needs a p(0,t) history")
    kernel = KernelH(params, z)
    value = float(kernel(t))
    if params.d > 1:
        value += (params.d - 1) * _history_convolution(p0_history, kernel.derivative, t)
    return value


def eval_F(
    params: ModelParams,
    z: float,
    t: float,
    p0_history: Optional[TransientLaw] = None,
    ctl: Optional[SeriesControl] = None,
    route: str = "auto",
    theta: Optional[ThetaCoefficients] = None,
) -> float:
    """
    F(z,t) = sum_k p(k,t) z^k.

    route: "closed" (regime formula), "quadrature" (history integral) or
    "auto" (closed where valid, quadrature otherwise).
    """
    ctl = ctl or DEFAULT_CONTROL
    if not 0 <= z < 1:
        raise DomainError(f"z must lie in [0, 1), got {z}")
    if t < 0:
        raise DomainError(f"t must be nonnegative, got {t}")
    if route not in ("auto", "closed", "quadrature"):
        raise DomainError(f"unknown route {route!r}")

    if route != "quadrature":
        radius = series_radius(params)
        closed_ok = radius is not None and t < radius
        if params.regime == Regime.ALPHA_EQ_LAMBDA and params.mu < params.lam and z >= params.mu / params.lam:
            closed_ok = False
        if closed_ok:
            if params.regime == Regime.EQUAL_RATES:
                return _F_equal_rates(params, z, t, default_component_table(), ctl)
            return _F_alpha_eq_lambda(params, z, t, theta or theta_for(params, t, ctl), ctl)
        if route == "closed":
            raise DomainError(f"closed F(z,t) not available for regime {params.regime.value} at z={z}, t={t}")
        logger.warning(f"F(z={z}, t={t}): closed route unavailable, using quadrature")
    return _F_quadrature(params, z, t, p0_history)


# ---------------------------------------------------------------------------
# Laplace transform (lambda = mu)
# ---------------------------------------------------------------------------


def laplace_p0(params: ModelParams, s: float) -> float:
    """
    Laplace transform of p(0,t) when lambda = mu.

    With a = alpha/lambda the cycle density transforms to
    a e^(s/lambda) E(a+1, s/lambda), and p0 = (1 - g)/(s (1 + (d-1) g)).
    """
    if params.lam != params.mu:
        raise DomainError("Laplace transform is implemented for lambda = mu")
    if s <= 0:
        raise DomainError(f"s must be positive, got {s}")
    a = params.alpha / params.lam
    w = s / params.lam
    g_hat = a * math.exp(w) * gen_exp_integral(a + 1.0, w)
    return (1.0 - g_hat) / (s * (1.0 + (params.d - 1) * g_hat))


# ---------------------------------------------------------------------------
# Dispatcher and output
# ---------------------------------------------------------------------------


def transient_law(
    params: ModelParams,
    t_grid: Sequence[float],
    method: str = "auto",
    k_max: int = 1,
    ctl: Optional[SeriesControl] = None,
    n_paths: int = 100_000,
    seed: int = 0,
    n_steps: Optional[int] = None,
) -> TransientLaw:
    """Evaluate p(0,t) and P(k,t), k = 1..k_max, on t_grid with one method."""
    from bdi_config import get_method

    ctl = ctl or DEFAULT_CONTROL
    entry = get_method(method)
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size == 0 or np.any(t_grid < 0):
        raise DomainError("t_grid must be nonempty and nonnegative")
    t_max = float(t_grid.max())
    radius = series_radius(params)

    if method == "auto":
        method = "series" if radius is not None and t_max < radius else "volterra"
        entry = get_method(method)
        logger.info(f"Method auto resolved to {method} (regime={params.regime.value}, t_max={t_max})")
    if params.regime.value not in entry["regimes"]:
        logger.error(f"Method {method} does not cover regime {params.regime.value}")
        raise DomainError(
            f"{entry['name']} supports regimes {', '.join(entry['regimes'])}, got {params.regime.value}"
        )
    if entry["needs_radius"] and (radius is None or t_max >= radius):
        logger.error(f"{method} outside radius: t={t_max}, radius={radius}")
        raise DomainError(
            f"{method} method needs t < radius (regime={params.regime.value}, radius={radius}, t_max={t_max})"
        )

    shape = (k_max + 1, t_grid.size)
    p0 = np.empty(t_grid.size)
    Pk = np.zeros((k_max, t_grid.size))
    orders = np.zeros(shape, dtype=int)
    tails = np.zeros(shape)

    if entry["law_method"] is None:
        if params.regime == Regime.EQUAL_RATES:
            law_method = TransientMethod.SERIES_EQUAL_RATES
            table = default_component_table()
            p0_fn = lambda t: _p0_equal_rates(params, t, table, ctl)
            pk_fn = lambda k, t: _pk_equal_rates(params, k, t, table, ctl)
        else:
            law_method = TransientMethod.SERIES_ALPHA_EQ_LAMBDA
            theta = theta_for(params, t_max, ctl)
            p0_fn = lambda t: _p0_alpha_eq_lambda(params, t, theta, ctl)
            pk_fn = lambda k, t: _pk_alpha_eq_lambda(params, k, t, theta, ctl)
        for i, t in enumerate(t_grid):
            result = p0_fn(t)
            p0[i], orders[0, i], tails[0, i] = result.value, result.terms, result.tail
            for k in range(1, k_max + 1):
                result = pk_fn(k, t)
                Pk[k - 1, i], orders[k, i], tails[k, i] = result.value, result.terms, result.tail

    elif entry["law_method"] in (TransientMethod.VOLTERRA.value, TransientMethod.THEOREM25.value):
        if entry["law_method"] == TransientMethod.VOLTERRA.value:
            history = solve_volterra_p0(params, max(t_max, 1e-12), n_steps)
            grid_error = history.diagnostics["dt"] ** 2
        else:
            history = theorem25_history(params, build_cycle_distribution(params, max(t_max, 1e-12)), ctl)
            grid_error = history.diagnostics["dt"] ** 2
        law_method = history.method
        for i, t in enumerate(t_grid):
            p0[i] = history.p0_at(t)
            for k in range(1, k_max + 1):
                Pk[k - 1, i] = Pk_volterra(params, k, t, history)
        orders[:] = history.t_grid.size - 1
        tails[:] = grid_error

    else:
        law_method = TransientMethod(entry["law_method"])
        for i, t in enumerate(t_grid):
            if t == 0:
                p0[i] = 1.0
                continue
            marginal = empirical_marginal(params, t, n_paths, seed + i, k_max=k_max)
            p0[i] = marginal.p0_hat
            tails[0, i] = marginal.stderr(0)
            for k in range(1, k_max + 1):
                Pk[k - 1, i] = marginal.probability(k)
                tails[k, i] = marginal.stderr(k)
        orders[:] = n_paths

    logger.info(f"Transient law ready - method={law_method.value}, points={t_grid.size}, k_max={k_max}")
    return TransientLaw(
        params=params,
        method=law_method,
        t_grid=t_grid,
        p0=p0,
        Pk=Pk,
        diagnostics={"trunc_order": orders, "tail_bound": tails},
    )


def write_transient_csv(law: TransientLaw, path: str) -> None:
    orders = law.diagnostics.get("trunc_order")
    tails = law.diagnostics.get("tail_bound")
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["method", "t", "k", "value", "trunc_order", "tail_bound"])
        for i, t in enumerate(law.t_grid):
            rows = [(-1, law.p0[i], 0)] + [(k, law.Pk[k - 1, i], k) for k in range(1, law.Pk.shape[0] + 1)]
            for k, value, row in rows:
                order = int(orders[row, i]) if orders is not None else 0
                tail = float(tails[row, i]) if tails is not None else 0.0
                writer.writerow([law.method.value, f"{t:.17g}", k, f"{value:.17g}", order, f"{tail:.17g}"])
