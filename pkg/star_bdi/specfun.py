"""
Scalar special functions used by the transient-law formulas.

Pochhammer symbols, the Gauss hypergeometric function 2F1 on its terminating
and |z| < 1 cases, polylogarithms, Eulerian polynomials and the generalized
exponential integral. Every infinite series goes through `sum_series`, which
applies the single truncation policy described by `SeriesControl`.
"""

import math
import logging
import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field
from scipy import integrate

from .errors import DomainError, NonConvergence

logger = logging.getLogger(__name__)

Number = Union[int, float, Fraction]


class SeriesControl(BaseModel):
    """Truncation policy shared by all infinite series."""

    model_config = ConfigDict(frozen=True)

    rel_tol: float = Field(default=1e-12, gt=0)
    max_terms: int = Field(default=10_000, ge=1)
    consecutive_small: int = Field(default=3, ge=1)

    @classmethod
    def from_settings(cls) -> "SeriesControl":
        from bdi_config import get_settings

        settings = get_settings()
        return cls(
            rel_tol=settings.rel_tol,
            max_terms=settings.max_terms,
            consecutive_small=settings.consecutive_small,
        )


DEFAULT_CONTROL = SeriesControl()


class CompensatedSum:
    """Neumaier summation; `value` is the compensated total."""

    __slots__ = ("_sum", "_comp")

    def __init__(self) -> None:
        self._sum = 0.0
        self._comp = 0.0

    def add(self, term: float) -> None:
        s = self._sum
        t = s + term
        if abs(s) >= abs(term):
            self._comp += (s - t) + term
        else:
            self._comp += (term - t) + s
        self._sum = t

    @property
    def value(self) -> float:
        return self._sum + self._comp


def compensated_sum(terms) -> float:
    acc = CompensatedSum()
    for term in terms:
        acc.add(float(term))
    return acc.value


def sum_series(
    term: Callable[[int], float],
    ctl: Optional[SeriesControl] = None,
    start: int = 0,
    label: str = "series",
) -> Tuple[float, int, float]:
    """
    Sum term(start), term(start+1), ... under the truncation policy.

    Stops once `consecutive_small` successive terms satisfy
    |term| <= rel_tol * |partial sum|.

    Returns:
        (value, number of terms used, last term)
    """
    ctl = ctl or DEFAULT_CONTROL
    acc = CompensatedSum()
    small = 0
    last = 0.0
    for i in range(ctl.max_terms):
        last = float(term(start + i))
        acc.add(last)
        if abs(last) <= ctl.rel_tol * abs(acc.value):
            small += 1
            if small >= ctl.consecutive_small:
                return acc.value, i + 1, last
        else:
            small = 0
    logger.error(f"{label}: no convergence after {ctl.max_terms} terms (last term {last:.3e})")
    raise NonConvergence(
        f"{label} did not converge within {ctl.max_terms} terms (last term {last:.3e})",
        terms=ctl.max_terms,
        last_term=last,
    )


def pochhammer(x: float, n: int) -> float:
    """Rising factorial (x)_n = x(x+1)...(x+n-1); (x)_0 = 1."""
    if n < 0:
        raise DomainError(f"pochhammer order must be nonnegative, got {n}")
    result = 1.0
    for i in range(n):
        result *= x + i
    return result


def _nonpositive_integer(x: float) -> Optional[int]:
    """Return m if x == -m for an integer m >= 0, else None."""
    if x <= 0 and float(x).is_integer():
        return int(-x)
    return None


def _terminating_2f1(m: int, b: float, c: float, z: float) -> float:
    # 2F1(-m, b; c; z) as a finite sum of m+1 terms
    acc = CompensatedSum()
    term = 1.0
    acc.add(term)
    a = -m
    for i in range(m):
        term *= (a + i) * (b + i) / ((c + i) * (i + 1)) * z
        acc.add(term)
    return acc.value


def hyp2f1(a: float, b: float, c: float, z: float, ctl: Optional[SeriesControl] = None) -> float:
    """
    Gauss hypergeometric function 2F1(a, b; c; z).

    Terminating cases (a or b a nonpositive integer) return the exact finite
    sum; when c - b (or c - a) is also a nonpositive integer of smaller
    magnitude, the Pfaff transformation
    2F1(-m, b; c; z) = (1 - z)^m 2F1(-m, c - b; c; z / (z - 1))
    is used to shorten the alternating sum. Nonterminating cases require
    |z| < 1.
    """
    ma = _nonpositive_integer(a)
    mb = _nonpositive_integer(b)
    mc = _nonpositive_integer(c)

    if ma is not None or mb is not None:
        if ma is None or (mb is not None and mb < ma):
            a, b, ma = b, a, mb
        m = ma
        if mc is not None and mc < m:
            raise DomainError(f"2F1 undefined: c={c} is a nonpositive integer above the termination order {m}")
        m_pfaff = _nonpositive_integer(c - b)
        if m_pfaff is not None and m_pfaff < m and z != 1.0:
            return (1.0 - z) ** m * _terminating_2f1(m_pfaff, b=-m, c=c, z=z / (z - 1.0))
        return _terminating_2f1(m, b, c, z)

    if mc is not None:
        raise DomainError(f"2F1 undefined: c={c} is a nonpositive integer")
    if abs(z) >= 1.0:
        raise DomainError(f"2F1 series requires |z| < 1 without termination, got z={z}")

    coeff = [1.0]

    def term(i: int) -> float:
        if i > 0:
            coeff[0] *= (a + i - 1) * (b + i - 1) / ((c + i - 1) * i) * z
        return coeff[0]

    value, _, _ = sum_series(term, ctl, label="hyp2f1")
    return value


def polylog_series(k: int, z: float, ctl: Optional[SeriesControl] = None) -> float:
    """Direct series sum_{j>=1} z^j / j^k."""
    if abs(z) >= 1.0:
        raise DomainError(f"polylog series requires |z| < 1, got z={z}")
    value, _, _ = sum_series(lambda j: z**j / j**k, ctl, start=1, label=f"Li_{k}")
    return value


def polylog(k: int, z: float, ctl: Optional[SeriesControl] = None) -> float:
    """Polylogarithm Li_k(z) for integer k >= 0 and |z| < 1."""
    if k < 0:
        raise DomainError(f"polylog order must be nonnegative, got {k}")
    if k == 1 and z < 1.0:
        return -math.log1p(-z)
    if abs(z) >= 1.0:
        raise DomainError(f"polylog requires |z| < 1, got z={z}")
    if k == 0:
        return z / (1.0 - z)
    if z == 0.0:
        return 0.0
    return polylog_series(k, z, ctl)


@dataclass(frozen=True)
class Polynomial:
    """Exact polynomial, coefficients lowest degree first."""

    coefficients: Tuple[Number, ...]

    def __post_init__(self) -> None:
        coeffs = list(self.coefficients)
        while len(coeffs) > 1 and coeffs[-1] == 0:
            coeffs.pop()
        object.__setattr__(self, "coefficients", tuple(coeffs))

    @property
    def degree(self) -> int:
        if len(self.coefficients) == 1 and self.coefficients[0] == 0:
            return -1
        return len(self.coefficients) - 1

    def __call__(self, x: Number) -> Number:
        result: Number = 0
        for c in reversed(self.coefficients):
            result = result * x + c
        return result

    def evaluate_rational(self, x: Fraction) -> Fraction:
        """Exact value at a rational point, Horner in integers."""
        p, q = x.numerator, x.denominator
        deg = max(self.degree, 0)
        # homogeneous Horner: sum c_i p^i q^(deg - i)
        numerator = 0
        q_power = 1
        for c in reversed(self.coefficients):
            numerator = numerator * p + c * q_power
            q_power *= q
        return Fraction(numerator, q**deg)


_EULERIAN_ROWS: List[Tuple[int, ...]] = [(1,)]
_EULERIAN_LOCK = threading.Lock()


def eulerian_rows(n_max: int) -> Sequence[Tuple[int, ...]]:
    """Eulerian-number rows A(n, k), 0 <= n <= n_max, cached under a lock."""
    with _EULERIAN_LOCK:
        while len(_EULERIAN_ROWS) <= n_max:
            n = len(_EULERIAN_ROWS)
            prev = _EULERIAN_ROWS[-1]
            row = []
            for k in range(n):
                left = prev[k] if k < len(prev) else 0
                right = prev[k - 1] if 0 <= k - 1 < len(prev) else 0
                row.append((k + 1) * left + (n - k) * right)
            _EULERIAN_ROWS.append(tuple(row))
        return _EULERIAN_ROWS[: n_max + 1]


def eulerian_polynomial(n: int) -> Polynomial:
    """A_n(t) = sum_k A(n, k) t^k with A_0 = A_1 = 1 and A_n(1) = n!."""
    if n < 0:
        raise DomainError(f"Eulerian polynomial index must be nonnegative, got {n}")
    return Polynomial(eulerian_rows(n)[n])


def gen_exp_integral(nu: float, z: float) -> float:
    """
    E(nu, z) = int_1^inf exp(-z t) t^(-nu) dt.

    The substitution u = 1/t maps the integral onto (0, 1]:
    int_0^1 exp(-z/u) u^(nu-2) du, evaluated by adaptive quadrature.
    """
    if z <= 0:
        raise DomainError(f"gen_exp_integral requires z > 0, got z={z}")

    def integrand(u: float) -> float:
        if u <= 0.0:
            return 0.0
        return math.exp(-z / u) * u ** (nu - 2.0)

    value, abserr = integrate.quad(integrand, 0.0, 1.0, epsabs=0.0, epsrel=1e-12, limit=200)
    logger.debug(f"E({nu}, {z}) = {value:.16g} (quad error {abserr:.2e})")
    return value
