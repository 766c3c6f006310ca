"""
Star-graph state space, rate law and exact Monte Carlo simulation.

The particle starts at the origin; from the origin it jumps to level 1 of a
uniformly chosen ray at total rate d*alpha; from level k on a ray it moves up
at rate alpha + lambda*k and down at rate mu*k.
"""

import bisect
import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from .errors import DomainError, SimulationOverflow

logger = logging.getLogger(__name__)


class Regime(str, Enum):
    EQUAL_RATES = "EqualRates"
    ALPHA_EQ_LAMBDA = "AlphaEqLambda"
    SUBCRITICAL = "Subcritical"
    CRITICAL = "Critical"
    SUPERCRITICAL = "Supercritical"


class ModelParams(BaseModel):
    """Rate triple (alpha, lambda, mu) and ray count d."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    alpha: float = Field(gt=0)
    lam: float = Field(gt=0, alias="lambda")
    mu: float = Field(gt=0)
    d: int = Field(ge=1)

    @property
    def regime(self) -> Regime:
        """Classification driving the closed-series formulas."""
        if self.alpha == self.lam == self.mu:
            return Regime.EQUAL_RATES
        if self.alpha == self.lam:
            return Regime.ALPHA_EQ_LAMBDA
        return self.case

    @property
    def case(self) -> Regime:
        """Classification driving the cycle-convolution representation."""
        if self.lam < self.mu:
            return Regime.SUBCRITICAL
        if self.lam == self.mu:
            return Regime.CRITICAL
        return Regime.SUPERCRITICAL

    def with_d(self, d: int) -> "ModelParams":
        return self.model_copy(update={"d": d})

    def up_rate(self, level: int) -> float:
        return self.d * self.alpha if level == 0 else self.alpha + self.lam * level

    def down_rate(self, level: int) -> float:
        return self.mu * level


@dataclass(frozen=True)
class StarState:
    """Origin when ray is None, otherwise (ray in 1..d, level >= 1)."""

    ray: Optional[int] = None
    level: int = 0

    def __post_init__(self) -> None:
        if self.ray is None and self.level != 0:
            raise DomainError(f"origin state cannot carry level {self.level}")
        if self.ray is not None and self.level < 1:
            raise DomainError(f"ray state needs level >= 1, got {self.level}")

    @property
    def is_origin(self) -> bool:
        return self.ray is None


ORIGIN = StarState()


@dataclass
class Trajectory:
    seed: int
    events: List[Tuple[float, StarState]] = field(default_factory=list)

    def state_at(self, t: float) -> StarState:
        """State occupied at time t (right-continuous path)."""
        times = [event[0] for event in self.events]
        index = bisect.bisect_right(times, t) - 1
        return self.events[max(index, 0)][1]


@dataclass
class EmpiricalMarginal:
    """
    Monte Carlo marginal at time t.

    pk_hat covers levels 1..k_max; tail_hat is the mass above k_max, so
    p0_hat + sum(pk_hat) + tail_hat == 1.
    """

    t: float
    n_paths: int
    p0_hat: float
    pk_hat: Dict[int, float]
    per_ray_counts: np.ndarray
    tail_hat: float = 0.0

    def probability(self, level: int) -> float:
        if level <= 0:
            return self.p0_hat
        return self.pk_hat.get(level, 0.0)

    def stderr(self, level: int) -> float:
        p = self.probability(level)
        return float(np.sqrt(p * (1.0 - p) / self.n_paths))


def path_generator(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based Philox stream for (seed, stream...)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(stream))))


def _overflow_level() -> int:
    from bdi_config import get_settings

    return get_settings().overflow_level


def simulate_path(params: ModelParams, t_end: float, seed: int, overflow_level: Optional[int] = None) -> Trajectory:
    """Exact event-driven path on [0, t_end]."""
    if t_end <= 0:
        raise DomainError(f"t_end must be positive, got {t_end}")
    guard = overflow_level or _overflow_level()
    rng = path_generator(seed)
    trajectory = Trajectory(seed=seed, events=[(0.0, ORIGIN)])
    time, state = 0.0, ORIGIN
    while True:
        level = state.level
        rate = params.d * params.alpha if state.is_origin else params.alpha + (params.lam + params.mu) * level
        time += rng.exponential(1.0) / rate
        if time > t_end:
            return trajectory
        if state.is_origin:
            state = StarState(ray=int(rng.integers(1, params.d + 1)), level=1)
        elif rng.random() * rate < params.alpha + params.lam * level:
            state = StarState(ray=state.ray, level=level + 1)
        elif level == 1:
            state = ORIGIN
        else:
            state = StarState(ray=state.ray, level=level - 1)
        if state.level > guard:
            logger.error(f"Path level {state.level} exceeded overflow guard {guard} (seed={seed}, t={time:.4g})")
            raise SimulationOverflow(f"simulated level exceeded {guard} at t={time:.6g}")
        trajectory.events.append((time, state))


def validate_trajectory(trajectory: Trajectory, params: ModelParams) -> None:
    """Raise DomainError at the first invalid event."""
    if not trajectory.events or trajectory.events[0] != (0.0, ORIGIN):
        raise DomainError("trajectory must start at (0, Origin)")
    for (t0, s0), (t1, s1) in zip(trajectory.events, trajectory.events[1:]):
        if not t1 > t0:
            raise DomainError(f"event times not strictly increasing at t={t1}")
        if s0.is_origin:
            ok = s1.level == 1 and s1.ray is not None and 1 <= s1.ray <= params.d
        elif s1.is_origin:
            ok = s0.level == 1
        else:
            ok = s1.ray == s0.ray and abs(s1.level - s0.level) == 1
        if not ok:
            raise DomainError(f"invalid transition {s0} -> {s1} at t={t1}")


def simulate_levels(
    params: ModelParams,
    t: float,
    n_paths: int,
    rng: np.random.Generator,
    overflow_level: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorised exact simulation of n_paths independent paths to time t.

    Returns (levels, rays) with ray = -1 at the origin and 0..d-1 otherwise.
    """
    guard = overflow_level or _overflow_level()
    a, lam, mu, d = params.alpha, params.lam, params.mu, params.d
    level = np.zeros(n_paths, dtype=np.int64)
    ray = np.full(n_paths, -1, dtype=np.int64)
    time = np.zeros(n_paths)
    active = np.ones(n_paths, dtype=bool)

    while active.any():
        idx = np.flatnonzero(active)
        k = level[idx]
        rate = np.where(k == 0, d * a, a + (lam + mu) * k)
        new_time = time[idx] + rng.exponential(1.0, size=idx.size) / rate
        done = new_time > t
        active[idx[done]] = False

        moving = idx[~done]
        k_moving = k[~done]
        time[moving] = new_time[~done]
        u = rng.random(moving.size)

        from_origin = k_moving == 0
        entering = moving[from_origin]
        level[entering] = 1
        ray[entering] = rng.integers(0, d, size=entering.size)

        on_ray = moving[~from_origin]
        k_ray = k_moving[~from_origin]
        birth = u[~from_origin] * (a + (lam + mu) * k_ray) < a + lam * k_ray
        level[on_ray] = k_ray + np.where(birth, 1, -1)
        ray[on_ray[level[on_ray] == 0]] = -1

        if on_ray.size and level[on_ray].max() > guard:
            logger.error(f"Simulated level exceeded overflow guard {guard}")
            raise SimulationOverflow(f"simulated level exceeded {guard} before t={t}")

    return level, ray


def sample_levels(
    params: ModelParams,
    t: float,
    n_paths: int,
    seed: int,
    chunk_size: Optional[int] = None,
    workers: Optional[int] = None,
    progress: bool = False,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Levels and rays of n_paths paths at time t.

    Paths are generated in chunks; chunk i draws from the Philox stream
    (seed, i), so results do not depend on the number of workers.
    """
    from bdi_config import get_settings

    if t <= 0:
        raise DomainError(f"t must be positive, got {t}")
    if n_paths < 1:
        raise DomainError(f"n_paths must be >= 1, got {n_paths}")
    settings = get_settings()
    chunk_size = chunk_size or settings.mc_chunk_size
    workers = workers or settings.mc_workers

    sizes = [min(chunk_size, n_paths - start) for start in range(0, n_paths, chunk_size)]
    logger.info(f"Simulating {n_paths} paths to t={t} in {len(sizes)} chunks - params={params.model_dump()}")

    def run_chunk(index: int) -> Tuple[np.ndarray, np.ndarray]:
        return simulate_levels(params, t, sizes[index], path_generator(seed, index))

    indices = range(len(sizes))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(tqdm(pool.map(run_chunk, indices), total=len(sizes), disable=not progress, desc="paths"))
    else:
        results = [run_chunk(i) for i in tqdm(indices, disable=not progress, desc="paths")]

    return np.concatenate([r[0] for r in results]), np.concatenate([r[1] for r in results])


def empirical_marginal(
    params: ModelParams,
    t: float,
    n_paths: int,
    seed: int,
    k_max: Optional[int] = None,
    chunk_size: Optional[int] = None,
    workers: Optional[int] = None,
    progress: bool = False,
) -> EmpiricalMarginal:
    """Tabulate the law of N(t) from n_paths simulated paths."""
    from bdi_config import get_settings

    k_max = k_max or get_settings().k_max
    levels, rays = sample_levels(params, t, n_paths, seed, chunk_size, workers, progress)
    counts = np.bincount(np.minimum(levels, k_max + 1), minlength=k_max + 2)
    per_ray = np.bincount(rays[rays >= 0], minlength=params.d)

    marginal = EmpiricalMarginal(
        t=t,
        n_paths=n_paths,
        p0_hat=counts[0] / n_paths,
        pk_hat={k: counts[k] / n_paths for k in range(1, k_max + 1)},
        per_ray_counts=per_ray,
        tail_hat=counts[k_max + 1] / n_paths,
    )
    logger.info(f"Empirical marginal at t={t}: p0_hat={marginal.p0_hat:.6f}, tail={marginal.tail_hat:.2e}")
    return marginal


def sample_cycle_times(params: ModelParams, size: int, rng: np.random.Generator) -> np.ndarray:
    """
    Sample excursion lengths Y through Lomax variables.

    Z is Lomax with shape alpha/lambda; Y = log(1+Z)/(lambda-mu) for
    lambda > mu, Y = Z for lambda = mu, and Y = -log(1-Z)/(mu-lambda)
    conditioned on Z < 1 for lambda < mu.
    """
    shape = params.alpha / params.lam
    lam, mu = params.lam, params.mu
    if lam > mu:
        z = (lam - mu) / lam * rng.pareto(shape, size)
        return np.log1p(z) / (lam - mu)
    if lam == mu:
        return rng.pareto(shape, size) / lam
    scale = (mu - lam) / lam
    out = np.empty(size)
    filled = 0
    while filled < size:
        z = scale * rng.pareto(shape, 2 * (size - filled))
        z = z[z < 1.0][: size - filled]
        out[filled : filled + z.size] = -np.log1p(-z) / (mu - lam)
        filled += z.size
    return out


def write_marginal_csv(marginal: EmpiricalMarginal, path: str) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["t", "level", "probability", "stderr"])
        writer.writerow([f"{marginal.t:.17g}", -1, f"{marginal.p0_hat:.17g}", f"{marginal.stderr(0):.17g}"])
        for level in sorted(marginal.pk_hat):
            writer.writerow(
                [f"{marginal.t:.17g}", level, f"{marginal.pk_hat[level]:.17g}", f"{marginal.stderr(level):.17g}"]
            )
        # mass above k_max, so the probability column sums to one
        tail_se = np.sqrt(marginal.tail_hat * (1.0 - marginal.tail_hat) / marginal.n_paths)
        writer.writerow([f"{marginal.t:.17g}", "tail", f"{marginal.tail_hat:.17g}", f"{tail_se:.17g}"])
