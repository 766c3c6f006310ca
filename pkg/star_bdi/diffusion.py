"""
Diffusion approximation of the space-scaled star-graph process.

Under alpha = gamma mu/eps, lambda = mu/eps + beta, mu = mu/eps (tilde
quantities written without tildes here), eps N(t) converges to a diffusion
with drift beta x + gamma mu and infinitesimal variance 2 mu x, whose
transient density is gamma with shape gamma and rate psi(t).
"""

import csv
import math
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import stats

from .errors import DomainError
from .model import ModelParams, sample_levels

logger = logging.getLogger(__name__)

# |beta t| below this uses the series form of psi
PSI_SERIES_SWITCH = 1e-8
KS_BAND_COEFF = 1.358


class DiffusionParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    gamma_t: float = Field(gt=0)
    mu_t: float = Field(gt=0)
    beta_t: float
    epsilon: float = Field(gt=0)


@dataclass(frozen=True)
class GammaDensity:
    """Gamma law with the given shape and rate, backed by scipy.stats.gamma."""

    shape: float
    rate: float

    def __post_init__(self) -> None:
        if self.shape <= 0 or self.rate <= 0:
            raise DomainError(f"gamma density needs positive shape and rate, got {self.shape}, {self.rate}")

    @property
    def frozen(self):
        return stats.gamma(a=self.shape, scale=1.0 / self.rate)

    def pdf(self, x):
        return self.frozen.pdf(x)

    def cdf(self, x):
        return self.frozen.cdf(x)

    def pdf_derivative(self, x):
        x = np.asarray(x, dtype=float)
        return self.pdf(x) * ((self.shape - 1.0) / x - self.rate)

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    @property
    def variance(self) -> float:
        return self.shape / self.rate**2

    @property
    def mode(self) -> float:
        return max(self.shape - 1.0, 0.0) / self.rate


def induced_ctmc_params(dp: DiffusionParams, d: int) -> ModelParams:
    """alpha = gamma mu/eps, lambda = mu/eps + beta, mu = mu/eps."""
    alpha = dp.gamma_t * dp.mu_t / dp.epsilon
    lam = dp.mu_t / dp.epsilon + dp.beta_t
    mu = dp.mu_t / dp.epsilon
    if min(alpha, lam, mu) <= 0:
        logger.error(f"Induced rates not positive: alpha={alpha}, lambda={lam}, mu={mu}")
        raise DomainError(
            f"induced rates must be positive (alpha={alpha}, lambda={lam}, mu={mu}); "
            f"need epsilon < mu_t/(-beta_t) when beta_t < 0"
        )
    return ModelParams(alpha=alpha, lam=lam, mu=mu, d=d)


def from_ctmc_params(params: ModelParams, epsilon: float) -> DiffusionParams:
    """Inverse map: mu_t = eps mu, beta_t = lambda - mu, gamma_t = alpha/mu."""
    return DiffusionParams(
        gamma_t=params.alpha / params.mu,
        mu_t=epsilon * params.mu,
        beta_t=params.lam - params.mu,
        epsilon=epsilon,
    )


def psi(dp: DiffusionParams, t: float) -> float:
    """Rate (beta/mu)/(e^(beta t) - 1) of the transient gamma density."""
    if t <= 0:
        raise DomainError(f"psi needs t > 0, got {t}")
    bt = dp.beta_t * t
    if abs(bt) < PSI_SERIES_SWITCH:
        return (1.0 - bt / 2.0) / (dp.mu_t * t)
    return dp.beta_t / (dp.mu_t * math.expm1(bt))


def transient_density(dp: DiffusionParams, t: float) -> GammaDensity:
    return GammaDensity(shape=dp.gamma_t, rate=psi(dp, t))


def stationary_density(dp: DiffusionParams) -> GammaDensity:
    if dp.beta_t >= 0:
        raise DomainError(f"stationary density needs beta_t < 0, got {dp.beta_t}")
    return GammaDensity(shape=dp.gamma_t, rate=abs(dp.beta_t) / dp.mu_t)


def _central_first(f, x: float, step: float) -> float:
    return (-f(x + 2 * step) + 8 * f(x + step) - 8 * f(x - step) + f(x - 2 * step)) / (12 * step)


def _central_second(f, x: float, step: float) -> float:
    return (-f(x + 2 * step) + 16 * f(x + step) - 30 * f(x) + 16 * f(x - step) - f(x - 2 * step)) / (12 * step**2)


def fokker_planck_residual(dp: DiffusionParams, x: float, t: float, step: float = 1e-4) -> float:
    """
    Relative residual of dh/dt = -d/dx[(beta x + gamma mu) h] + d2/dx2[mu x h].

    Derivatives are five-point central differences with the given step; the
    residual is scaled by the largest of the three terms.
    """
    if x - 2 * step <= 0 or t - 2 * step <= 0:
        raise DomainError(f"residual stencil leaves the domain at x={x}, t={t}")

    def h(xx: float, tt: float) -> float:
        return float(transient_density(dp, tt).pdf(xx))

    dh_dt = _central_first(lambda tt: h(x, tt), t, step)
    drift = _central_first(lambda xx: (dp.beta_t * xx + dp.gamma_t * dp.mu_t) * h(xx, t), x, step)
    diffusion = _central_second(lambda xx: dp.mu_t * xx * h(xx, t), x, step)
    scale = max(abs(dh_dt), abs(drift), abs(diffusion), 1e-300)
    return abs(dh_dt + drift - diffusion) / scale


def boundary_flux(dp: DiffusionParams, x: float, t: float) -> float:
    """(beta x + gamma mu) h - d/dx(mu x h), vanishing as x -> 0 for gamma >= 1."""
    density = transient_density(dp, t)
    h = float(density.pdf(x))
    dh = float(density.pdf_derivative(x))
    return (dp.beta_t * x + dp.gamma_t * dp.mu_t) * h - dp.mu_t * (h + x * dh)


def lattice_ks_distance(level_cdf: np.ndarray, density: GammaDensity, epsilon: float) -> float:
    """
    sup_k |P(N <= k) - G((k+1) eps)| over the lattice bins.

    The origin atom falls in the leftmost bin [0, eps).
    """
    edges = (np.arange(level_cdf.size) + 1) * epsilon
    return float(np.max(np.abs(level_cdf - density.cdf(edges))))


def convergence_probe(
    dp: DiffusionParams,
    d: int,
    t: float,
    n_paths: int,
    seed: int,
) -> Tuple[float, float]:
    """KS distance between eps N(t) and the gamma transient density, with its 95% band."""
    if t <= 0:
        raise DomainError(f"t must be positive, got {t}")
    if n_paths < 100:
        raise DomainError(f"convergence probe needs at least 100 paths, got {n_paths}")
    params = induced_ctmc_params(dp, d)
    levels, _ = sample_levels(params, t, n_paths, seed)
    level_cdf = np.cumsum(np.bincount(levels)) / n_paths
    ks = lattice_ks_distance(level_cdf, transient_density(dp, t), dp.epsilon)
    band = KS_BAND_COEFF / math.sqrt(n_paths)
    logger.info(f"Convergence probe - epsilon={dp.epsilon}, t={t}, n_paths={n_paths}: ks={ks:.4f}, band={band:.4f}")
    return ks, band


def stationary_ks_distance(dp: DiffusionParams, d: int, k_max: Optional[int] = None) -> float:
    """KS distance between the scaled limit law of the induced chain and the stationary gamma density."""
    from .asymptotics import limit_law

    params = induced_ctmc_params(dp, d)
    if k_max is None:
        # cover the gamma bulk well past its mean
        k_max = int(math.ceil(stationary_density(dp).frozen.ppf(1 - 1e-12) / dp.epsilon))
    law = limit_law(params, k_max)
    pmf = np.array([law.pmf(k) for k in range(k_max + 1)])
    return lattice_ks_distance(np.cumsum(pmf), stationary_density(dp), dp.epsilon)


@dataclass
class RayHistograms:
    """Per-ray densities of eps N(t) on the given bins, with h/d at the bin centres."""

    edges: np.ndarray
    per_ray: np.ndarray
    target: np.ndarray
    n_paths: int

    @property
    def centres(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])


def per_ray_histograms(
    dp: DiffusionParams,
    d: int,
    t: float,
    n_paths: int,
    seed: int,
    bins: Sequence[float],
) -> RayHistograms:
    """Histogram eps N(t) separately on each ray; each should follow h/d."""
    params = induced_ctmc_params(dp, d)
    levels, rays = sample_levels(params, t, n_paths, seed)
    edges = np.asarray(bins, dtype=float)
    widths = np.diff(edges)
    per_ray = np.empty((d, widths.size))
    for j in range(d):
        counts, _ = np.histogram(dp.epsilon * levels[rays == j], bins=edges)
        per_ray[j] = counts / (n_paths * widths)
    centres = 0.5 * (edges[1:] + edges[:-1])
    target = transient_density(dp, t).pdf(centres) / d
    return RayHistograms(edges=edges, per_ray=per_ray, target=target, n_paths=n_paths)


def write_density_csv(dp: DiffusionParams, x_grid: Sequence[float], t_grid: Sequence[float], path: str) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["x", "t", "h_density"])
        for t in t_grid:
            density = transient_density(dp, t)
            for x in x_grid:
                writer.writerow([f"{x:.17g}", f"{t:.17g}", f"{float(density.pdf(x)):.17g}"])
