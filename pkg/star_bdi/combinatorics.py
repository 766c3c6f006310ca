"""
Exact combinatorics behind the closed transient series.

t_{n,k}: number of permutations of {1..n} with k components (three
independent routes), Q_{j,m}: composition sums of Eulerian values, and the
theta_n coefficients of the alpha = lambda series.
"""

import csv
import math
import logging
import itertools
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Any, Dict, Tuple, Union

import numpy as np
from scipy.special import gammaln

from .errors import DomainError, IntegralityError
from .specfun import eulerian_polynomial

logger = logging.getLogger(__name__)

BRUTEFORCE_MAX_N = 9


@dataclass(frozen=True)
class PermutationComponentTable:
    """Triangular table; entries[n-1][k-1] = t_{n,k} for 1 <= k <= n <= n_max."""

    n_max: int
    entries: Tuple[Tuple[int, ...], ...]

    def t(self, n: int, k: int) -> int:
        if n < 1 or n > self.n_max:
            raise DomainError(f"n={n} outside table range 1..{self.n_max}")
        if k < 1 or k > n:
            return 0
        return self.entries[n - 1][k - 1]

    def row_weight(self, n: int, d: int) -> int:
        """S_n(d) = sum_k t_{n,k} d^k."""
        return sum(t_nk * d ** (k + 1) for k, t_nk in enumerate(self.entries[n - 1]))

    def series_weights(self, d: int, n_terms: int) -> np.ndarray:
        """S_n(d)/n! for n = 0..n_terms; exact rows where the table reaches, extended beyond."""
        weights = np.array(component_series_weights(d, n_terms))
        for n in range(1, min(self.n_max, n_terms) + 1):
            weights[n] = float(Fraction(self.row_weight(n, d), math.factorial(n)))
        return weights


@lru_cache(maxsize=8)
def indecomposable_counts(n_max: int) -> Tuple[int, ...]:
    """t_{n,1} for n = 0..n_max (index 0 unused, set to 0)."""
    counts = [0] * (n_max + 1)
    factorials = [math.factorial(i) for i in range(n_max + 1)]
    for n in range(1, n_max + 1):
        counts[n] = factorials[n] - sum(factorials[n - j] * counts[j] for j in range(1, n))
    return tuple(counts)


def t_table_recursive(n_max: int = 30) -> PermutationComponentTable:
    """Build t_{n,k} from the indecomposable recursion and its convolution powers."""
    if n_max < 1:
        raise DomainError(f"n_max must be >= 1, got {n_max}")
    ind = indecomposable_counts(n_max)
    # col[k][n] = t_{n,k}
    cols = {1: list(ind)}
    for k in range(2, n_max + 1):
        prev = cols[k - 1]
        col = [0] * (n_max + 1)
        for n in range(k, n_max + 1):
            col[n] = sum(ind[j] * prev[n - j] for j in range(1, n - k + 2))
        cols[k] = col
    entries = tuple(tuple(cols[k][n] for k in range(1, n + 1)) for n in range(1, n_max + 1))
    logger.debug(f"Built permutation component table up to n={n_max}")
    return PermutationComponentTable(n_max=n_max, entries=entries)


def _composition_factorial_sums(total: int) -> Dict[Tuple[int, int], int]:
    """W[j, M] = sum over compositions of M into j parts >= 2 of prod s_i!."""
    fact = [math.factorial(i) for i in range(total + 1)]
    w: Dict[Tuple[int, int], int] = {(0, 0): 1}
    for j in range(1, total // 2 + 1):
        for m in range(2 * j, total + 1):
            w[(j, m)] = sum(fact[s] * w.get((j - 1, m - s), 0) for s in range(2, m - 2 * (j - 1) + 1))
    return w


def _inverse_multinomial_sum(w: Dict[Tuple[int, int], int], j: int, m: int) -> Fraction:
    # sum over compositions of 1/multinomial(m; s_1..s_j)
    return Fraction(w.get((j, m), 0), math.factorial(m))


def t_closed_form(n: int, k: int) -> int:
    """t_{n,k} from the explicit multinomial triple sums, exact rationals."""
    if n < 2 or not 1 <= k <= n:
        raise DomainError(f"closed form needs n >= 2 and 1 <= k <= n, got n={n}, k={k}")
    if k == n:
        return 1
    w = _composition_factorial_sums(n)

    def inner(r: int) -> Fraction:
        acc = Fraction(0)
        for j in range(1, n - r):
            m = n - r - 1 + j
            acc += math.comb(r + 1, j) * math.factorial(m) * _inverse_multinomial_sum(w, j, m)
        return acc

    if k == 1:
        value = Fraction(math.factorial(n) + (-1) ** (n - 1))
        for r in range(1, n - 1):
            value += (-1) ** r * inner(r)
    else:
        value = Fraction(math.comb(n - 1, k - 1) * (-1) ** (n - k))
        for r in range(k - 1, n - 1):
            value += math.comb(r, k - 1) * (-1) ** (r - k + 1) * inner(r)

    if value.denominator != 1:
        logger.error(f"Closed form for t_({n},{k}) is not integral: {value}")
        raise IntegralityError(f"t_({n},{k}) closed form gave non-integer {value}")
    return int(value)


def count_components(perm: Tuple[int, ...]) -> int:
    """Number of prefixes {1..j} occupying the first j positions."""
    components = 0
    running_max = 0
    for position, value in enumerate(perm, start=1):
        running_max = max(running_max, value)
        if running_max == position:
            components += 1
    return components


def t_bruteforce(n: int, k: int) -> int:
    """Count permutations of {1..n} with exactly k components by enumeration."""
    if n < 1 or n > BRUTEFORCE_MAX_N:
        raise DomainError(f"brute force limited to 1 <= n <= {BRUTEFORCE_MAX_N}, got {n}")
    return sum(1 for perm in itertools.permutations(range(1, n + 1)) if count_components(perm) == k)


@lru_cache(maxsize=4)
def indecomposable_fractions(n_max: int) -> np.ndarray:
    """t_{n,1}/n! for n = 0..n_max in floating point (index 0 is 0)."""
    tau = np.zeros(n_max + 1)
    for n in range(1, n_max + 1):
        j = np.arange(1, n)
        inv_binom = np.exp(gammaln(j + 1) + gammaln(n - j + 1) - gammaln(n + 1))
        # t_{n,1}/n! = 1 - sum_j (t_{j,1}/j!) / C(n, j), the subtracted part is O(1/n)
        tau[n] = 1.0 - float(np.sum(tau[j] * inv_binom))
    return tau


@lru_cache(maxsize=32)
def _component_series_weights(d: int, n_max: int) -> Tuple[float, ...]:
    tau = indecomposable_fractions(n_max)
    s = np.zeros(n_max + 1)
    s[0] = 1.0
    for n in range(1, n_max + 1):
        j = np.arange(1, n + 1)
        inv_binom = np.exp(gammaln(j + 1) + gammaln(n - j + 1) - gammaln(n + 1))
        s[n] = d * float(np.sum(tau[j] * s[n - j] * inv_binom))
    return tuple(s)


def component_series_weights(d: int, n_max: int) -> Tuple[float, ...]:
    """
    S_n(d)/n! for n = 0..n_max, where S_n(d) = sum_k t_{n,k} d^k.

    Uses S_0 = 1, S_n = d sum_j t_{j,1} S_{n-j}; the scaled recursion has
    only positive terms.
    """
    if d < 1:
        raise DomainError(f"ray count must be >= 1, got {d}")
    return _component_series_weights(int(d), int(n_max))


def exact_ratio(numerator: float, denominator: float) -> Fraction:
    """Rational ratio built from the shortest decimal forms of two floats."""
    return Fraction(repr(float(numerator))) / Fraction(repr(float(denominator)))


def scaled_eulerian_values(ratio: Union[float, Fraction], s_max: int) -> np.ndarray:
    """A_s(ratio)/s! for s = 0..s_max, exact until the final rounding."""
    r = ratio if isinstance(ratio, Fraction) else Fraction(repr(float(ratio)))
    values = np.empty(s_max + 1)
    for s in range(s_max + 1):
        values[s] = float(eulerian_polynomial(s).evaluate_rational(r) / math.factorial(s))
    return values


@dataclass(frozen=True)
class QTable:
    """Q_{j,m} stored scaled by 1/m!; `value` undoes the scaling."""

    ratio: float
    j_max: int
    m_max: int
    scaled: np.ndarray

    def value(self, j: int, m: int) -> float:
        if j < 1 or j > self.j_max or m < 0 or m > self.m_max:
            raise DomainError(f"Q_({j},{m}) outside table range")
        q = self.scaled[j, m]
        if q == 0.0:
            return 0.0
        return math.exp(math.log(q) + math.lgamma(m + 1))


def q_table(ratio: Union[float, Fraction], j_max: int, m_max: int) -> QTable:
    """Q_{j,m} by convolution of Eulerian values over parts >= 2."""
    if j_max < 1 or m_max < 2:
        raise DomainError(f"q_table needs j_max >= 1 and m_max >= 2, got {j_max}, {m_max}")
    a = scaled_eulerian_values(ratio, m_max)
    m_grid, s_grid = np.meshgrid(np.arange(m_max + 1), np.arange(m_max + 1), indexing="ij")
    with np.errstate(invalid="ignore"):
        inv_binom = np.where(
            s_grid <= m_grid,
            np.exp(gammaln(s_grid + 1) + gammaln(np.abs(m_grid - s_grid) + 1) - gammaln(m_grid + 1)),
            0.0,
        )
    scaled = np.zeros((j_max + 1, m_max + 1))
    scaled[1, 2:] = a[2:]
    for j in range(2, j_max + 1):
        prev = scaled[j - 1]
        for m in range(2 * j, m_max + 1):
            s = np.arange(2, m - 2 * (j - 1) + 1)
            scaled[j, m] = float(np.sum(a[s] * prev[m - s] * inv_binom[m, s]))
    logger.debug(f"Built Q-table ratio={float(ratio)}, j_max={j_max}, m_max={m_max}")
    return QTable(ratio=float(ratio), j_max=j_max, m_max=m_max, scaled=scaled)


@dataclass(frozen=True)
class ThetaCoefficients:
    """
    theta_n for 2 <= n <= n_max, stored scaled by 1/n!.

    `tail_scaled[n]` is the (d-1)-weighted Q double sum alone and
    `eulerian_scaled[n]` is A_n(mu/lambda)/n!.
    """

    params: Any
    n_max: int
    scaled: np.ndarray
    tail_scaled: np.ndarray
    eulerian_scaled: np.ndarray

    def value(self, n: int) -> float:
        if n < 2 or n > self.n_max:
            raise DomainError(f"theta_{n} outside 2..{self.n_max}")
        return math.exp(math.log(self.scaled[n]) + math.lgamma(n + 1))


def theta_coefficients(params, n_max: int) -> ThetaCoefficients:
    """theta_n = sum_i (d-1)^i sum_j C(i+1,j) Q_{j,j+n-i-1} + A_n(mu/lambda) + (d-1)^(n-1)."""
    if n_max < 2:
        raise DomainError(f"n_max must be >= 2, got {n_max}")
    if params.lam == params.mu:
        raise DomainError("theta coefficients need lambda != mu; use the t_{n,k} route for equal rates")

    ratio = exact_ratio(params.mu, params.lam)
    d = params.d
    table = q_table(ratio, j_max=max(1, n_max // 2 + 1), m_max=n_max)
    a = scaled_eulerian_values(ratio, n_max)

    tail = np.zeros(n_max + 1)
    powers = np.zeros(n_max + 1)
    if d > 1:
        log_dm1 = math.log(d - 1)
        with np.errstate(divide="ignore"):
            log_q = np.log(table.scaled)
        for n in range(2, n_max + 1):
            powers[n] = math.exp((n - 1) * log_dm1 - math.lgamma(n + 1))
            if n < 3:
                continue
            i, j = np.meshgrid(np.arange(1, n - 1), np.arange(1, n - 1), indexing="ij")
            mask = (j <= n - i - 1) & (j <= i + 1) & (j <= table.j_max)
            i, j = i[mask], j[mask]
            m = j + n - i - 1
            log_terms = (
                i * log_dm1
                + gammaln(i + 2) - gammaln(j + 1) - gammaln(i - j + 2)
                + log_q[j, m]
                + gammaln(m + 1) - gammaln(n + 1)
            )
            tail[n] = float(np.sum(np.exp(log_terms)))

    scaled = np.full(n_max + 1, np.nan)
    scaled[2:] = a[2:] + powers[2:] + tail[2:]
    logger.debug(f"theta coefficients ready: ratio={float(ratio)}, d={d}, n_max={n_max}")
    return ThetaCoefficients(params=params, n_max=n_max, scaled=scaled, tail_scaled=tail, eulerian_scaled=a)


def write_table_csv(table: PermutationComponentTable, path: str) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["n", "k", "t_nk"])
        for n in range(1, table.n_max + 1):
            for k in range(1, n + 1):
                writer.writerow([n, k, table.t(n, k)])


def check_routes(n_max: int) -> Dict[str, Any]:
    """Three-way equality of recursion, closed form and enumeration."""
    n_max = min(n_max, BRUTEFORCE_MAX_N)
    table = t_table_recursive(n_max)
    mismatches = []
    for n in range(1, n_max + 1):
        if sum(table.entries[n - 1]) != math.factorial(n):
            mismatches.append((n, 0, "row sum"))
        for k in range(1, n + 1):
            recursive = table.t(n, k)
            brute = t_bruteforce(n, k)
            closed = t_closed_form(n, k) if n >= 2 else recursive
            if not recursive == brute == closed:
                mismatches.append((n, k, f"recursive={recursive}, closed={closed}, brute={brute}"))
    if mismatches:
        logger.error(f"t_(n,k) route mismatches: {mismatches}")
    return {"success": not mismatches, "n_max": n_max, "mismatches": mismatches}
