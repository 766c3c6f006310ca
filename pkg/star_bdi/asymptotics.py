"""
Long-time behaviour of the star-graph process.

For lambda < mu the law of N(t) converges to a zero-modified negative
binomial law: P(N = k) = theta_d pi(k) + (1 - theta_d) 1{k = 0}, where pi is
negative binomial with shape alpha/lambda and success ratio lambda/mu. For
lambda >= mu every level probability tends to zero.
"""

import csv
import math
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

from .errors import DomainError, StarBDIError
from .model import ModelParams

logger = logging.getLogger(__name__)

MIXTURE_TOLERANCE = 1e-12


@dataclass
class AsymptoticLaw:
    """
    Limit law truncated at k_max.

    `degenerate` is True when lambda >= mu; all probabilities are then zero
    and theta_d, mean and variance are NaN.
    """

    params: ModelParams
    p0_limit: float
    pk_limit: Dict[int, float] = field(default_factory=dict)
    theta_d: float = math.nan
    nb_pi: Dict[int, float] = field(default_factory=dict)
    mean: float = math.nan
    variance: float = math.nan
    degenerate: bool = False
    tail: float = 0.0

    def pmf(self, k: int) -> float:
        return self.p0_limit if k == 0 else self.pk_limit.get(k, 0.0)


def _zero_mass(params: ModelParams) -> float:
    # (1 - lambda/mu)^(alpha/lambda), the negative binomial mass at zero
    return math.exp(params.alpha / params.lam * math.log1p(-params.lam / params.mu))


def theta_d(params: ModelParams, d: Optional[float] = None) -> float:
    """Mixing weight 1/(1 - (1 - 1/d)(1 - lambda/mu)^(alpha/lambda))."""
    if params.lam >= params.mu:
        raise DomainError(f"theta_d needs lambda < mu, got lambda={params.lam}, mu={params.mu}")
    d = params.d if d is None else d
    return 1.0 / (1.0 - (1.0 - 1.0 / d) * _zero_mass(params))


def negative_binomial_pi(params: ModelParams, k: int) -> float:
    """pi(k) = (1-lambda/mu)^a (a)_k/k! (lambda/mu)^k with a = alpha/lambda, in log space."""
    a = params.alpha / params.lam
    q = params.lam / params.mu
    log_pi = (
        a * math.log1p(-q)
        + math.lgamma(a + k)
        - math.lgamma(a)
        - math.lgamma(k + 1)
        + k * math.log(q)
    )
    return math.exp(log_pi)


def limit_law(params: ModelParams, k_max: int) -> AsymptoticLaw:
    """lim_{t->inf} p(0,t) and P(k,t), 1 <= k <= k_max."""
    if k_max < 0:
        raise DomainError(f"k_max must be nonnegative, got {k_max}")
    if params.lam >= params.mu:
        logger.info(f"Degenerate limit law: lambda={params.lam} >= mu={params.mu}, all probabilities vanish")
        return AsymptoticLaw(
            params=params,
            p0_limit=0.0,
            pk_limit={k: 0.0 for k in range(1, k_max + 1)},
            degenerate=True,
        )

    c = _zero_mass(params)
    weight = theta_d(params)
    scale = c / (1.0 - (1.0 - 1.0 / params.d) * c)
    nb_pi = {k: negative_binomial_pi(params, k) for k in range(k_max + 1)}
    p0_limit = weight * c / params.d
    pk_limit = {k: scale / c * nb_pi[k] for k in range(1, k_max + 1)}

    for k in range(k_max + 1):
        direct = p0_limit if k == 0 else pk_limit[k]
        mixture = weight * nb_pi[k] + (1.0 - weight) * (k == 0)
        if abs(direct - mixture) > MIXTURE_TOLERANCE:
            logger.error(f"Mixture identity failed at k={k}: {direct} vs {mixture}")
            raise StarBDIError(f"limit pmf and mixture disagree at k={k}: {direct} vs {mixture}")

    mean, variance = limit_moments(params)
    law = AsymptoticLaw(
        params=params,
        p0_limit=p0_limit,
        pk_limit=pk_limit,
        theta_d=weight,
        nb_pi=nb_pi,
        mean=mean,
        variance=variance,
        tail=max(0.0, 1.0 - p0_limit - math.fsum(pk_limit.values())),
    )
    logger.info(
        f"Limit law - d={params.d}, theta_d={weight:.6f}, p0={p0_limit:.6f}, "
        f"mean={mean:.6f}, variance={variance:.6f}, tail={law.tail:.2e}"
    )
    return law


def _moments(params: ModelParams, weight: float, one_minus_inv_d: float) -> Tuple[float, float]:
    lam, mu, alpha = params.lam, params.mu, params.alpha
    c = _zero_mass(params)
    mean = weight * alpha / (mu - lam)
    variance = weight**2 * alpha * mu / (mu - lam) ** 2 * (1.0 - one_minus_inv_d * (alpha / mu + 1.0) * c)
    return mean, variance


def limit_moments(params: ModelParams) -> Tuple[float, float]:
    """E[N] = theta_d alpha/(mu - lambda) and the closed Var[N]."""
    if params.lam >= params.mu:
        logger.error(f"limit_moments called with lambda={params.lam} >= mu={params.mu}")
        raise DomainError("limit moments exist only for lambda < mu")
    return _moments(params, theta_d(params), 1.0 - 1.0 / params.d)


def limit_moments_infinite_d(params: ModelParams) -> Tuple[float, float]:
    """d -> infinity limit of (E[N], Var[N]), i.e. (1 - 1/d) -> 1."""
    if params.lam >= params.mu:
        raise DomainError("limit moments exist only for lambda < mu")
    weight = 1.0 / (1.0 - _zero_mass(params))
    return _moments(params, weight, 1.0)


def limit_generating_function(params: ModelParams, z: float) -> float:
    """theta_d ((1 - lambda/mu)/(1 - lambda z/mu))^(alpha/lambda) + 1 - theta_d; 0 when lambda >= mu."""
    if not 0.0 <= z <= 1.0:
        raise DomainError(f"z must lie in [0, 1], got {z}")
    if params.lam >= params.mu:
        return 0.0
    q = params.lam / params.mu
    weight = theta_d(params)
    return weight * ((1.0 - q) / (1.0 - q * z)) ** (params.alpha / params.lam) + 1.0 - weight


def write_limit_csv(law: AsymptoticLaw, path: str) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["k", "limit_probability", "nb_pi"])
        k_max = max(law.pk_limit) if law.pk_limit else 0
        for k in range(k_max + 1):
            writer.writerow([k, f"{law.pmf(k):.17g}", f"{law.nb_pi.get(k, 0.0):.17g}"])
        writer.writerow([])
        writer.writerow(["theta_d", "mean", "variance"])
        writer.writerow([f"{law.theta_d:.17g}", f"{law.mean:.17g}", f"{law.variance:.17g}"])
