"""Identically piled cookie environments with finite total drift.

An environment is the strength sequence ``p_1, p_2, ...`` placed at every
site; the ``j``-th visit to a site steps right with probability ``p_j``.
Strengths live in double precision and every environment reports a
monotone bound on the absolute drift left in its tail, which is what the
classifier relies on.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, ClassVar, Optional

import numpy as np

from .errors import (
    ConsistencyError,
    ConvergenceError,
    DomainError,
    UnsupportedCapability,
)

# δ_N search never sums more terms than this.
MAX_DRIFT_TERMS = 1 << 26
_CHUNK = 1 << 20
# Rounding floor for |A_n - 1/4| when b_n itself is tiny.
_STATS_ABS_FLOOR = 1e-15


class Kind(str, enum.Enum):
    FINITE = "finite"
    TRANSIENT_EXAMPLE = "transient-example"
    GEOMETRIC_TAIL = "geometric-tail"
    CUSTOM = "custom"


class DecayCondition(str, enum.Enum):
    """Status of ``|sum_{j>=n} (2p_j - 1)| = o(1/log n)``."""

    HOLDS = "holds"
    FAILS = "fails"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class DriftEstimate:
    value: float
    error: float
    terms: int


@dataclass(frozen=True)
class DriftProfile:
    """Prefix drifts ``delta_0..delta_m`` with the total and tail bounds.

    ``tail_bounds[i]`` bounds ``|sum_{j >= i+1} (2p_j - 1)|``, so
    ``|total - prefix[i]| <= tail_bounds[i]``.
    """

    prefix: np.ndarray
    total: float
    total_error: float
    tail_bounds: np.ndarray


@dataclass(frozen=True)
class EnvStats:
    n: int
    mean_strength: float
    variance_avg: float
    bessel_gap: float


def _neumaier_cumsum(x):
    out = np.empty(x.size + 1)
    out[0] = 0.0
    s = 0.0
    c = 0.0
    for i, v in enumerate(x.tolist()):
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
        out[i + 1] = s + c
    return out


def _check_index(j):
    if j < 1:
        raise DomainError(f"cookie index must be >= 1, got {j}")


@dataclass(frozen=True)
class CookieEnvironment:
    """Base class; concrete kinds implement the unreflected rule.

    ``reflected=True`` turns the stack ``p`` into ``1 - p``.
    """

    kind: ClassVar[Kind]
    reflected: bool = field(default=False, kw_only=True)

    # -- hooks for subclasses (unreflected stack) -------------------------
    def _raw(self, j: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _raw_scalar(self, j: int) -> float:
        return float(self._raw(np.array([j], dtype=np.int64))[0])

    def _abs_tail(self, n: int) -> float:
        """``sum_{j>=n} |2p_j - 1|``; non-increasing in ``n``."""
        raise NotImplementedError

    def _closed_total(self) -> Optional[float]:
        return None

    def _count_below_half(self, x: int, upper: bool) -> int:
        """Count ``j <= x`` with raw ``p_j < 1/2`` (or ``> 1/2`` if upper)."""
        count = 0
        for lo in range(1, x + 1, _CHUNK):
            p = self._raw(np.arange(lo, min(x, lo + _CHUNK - 1) + 1, dtype=np.int64))
            count += int(np.count_nonzero(p > 0.5 if upper else p < 0.5))
        return count

    def _decay_closed_form(self) -> Optional[DecayCondition]:
        return None

    # -- public operations -------------------------------------------------
    def strength(self, j: int) -> float:
        _check_index(j)
        p = self._raw_scalar(int(j))
        return 1.0 - p if self.reflected else p

    def strengths(self, start: int, stop: int) -> np.ndarray:
        """Vector of ``p_j`` for ``start <= j < stop``."""
        _check_index(start)
        p = self._raw(np.arange(start, stop, dtype=np.int64))
        return 1.0 - p if self.reflected else p

    def drift_prefix(self, m: int) -> float:
        if m < 0:
            raise DomainError(f"prefix length must be >= 0, got {m}")
        parts = []
        for lo in range(1, m + 1, _CHUNK):
            p = self.strengths(lo, min(m, lo + _CHUNK - 1) + 1)
            parts.append(math.fsum((2.0 * p - 1.0).tolist()))
        return math.fsum(parts)

    def drift_prefixes(self, m: int) -> np.ndarray:
        """``delta_0, ..., delta_m`` by compensated running summation."""
        if m < 0:
            raise DomainError(f"prefix length must be >= 0, got {m}")
        if m == 0:
            return np.zeros(1)
        return _neumaier_cumsum(2.0 * self.strengths(1, m + 1) - 1.0)

    def tail_bound(self, n: int) -> float:
        """Upper bound on ``|sum_{j>=n} (2p_j - 1)|``, non-increasing in n."""
        if n < 1:
            raise DomainError(f"tail index must be >= 1, got {n}")
        return self._abs_tail(int(n))

    def total_drift(self, tol: float = 1e-12) -> DriftEstimate:
        if not tol > 0:
            raise DomainError("tol must be positive")
        closed = self._closed_total()
        if closed is not None:
            value = -closed if self.reflected else closed
            return DriftEstimate(value, 0.0, 0)
        # smallest N with tail_bound(N + 1) <= tol
        hi = 1
        while self.tail_bound(hi + 1) > tol:
            if hi >= MAX_DRIFT_TERMS:
                raise ConvergenceError(
                    f"tail bound did not reach {tol:g} within {MAX_DRIFT_TERMS} terms",
                    best=self.tail_bound(hi + 1),
                )
            hi *= 2
        lo = hi // 2
        while lo + 1 < hi:
            mid = (lo + hi) // 2
            if self.tail_bound(mid + 1) <= tol:
                hi = mid
            else:
                lo = mid
        n_terms = 0 if self.tail_bound(1) <= tol else hi
        return DriftEstimate(
            self.drift_prefix(n_terms), self.tail_bound(n_terms + 1), n_terms
        )

    def drift_profile(self, m: int, tol: float = 1e-12) -> DriftProfile:
        total = self.total_drift(tol)
        bounds = np.array([self.tail_bound(i + 1) for i in range(m + 1)])
        return DriftProfile(self.drift_prefixes(m), total.value, total.error, bounds)

    def env_stats(self, n: int) -> EnvStats:
        if n < 1:
            raise DomainError(f"n must be >= 1, got {n}")
        p_parts, a_parts, w_parts = [], [], []
        for lo in range(1, n + 1, _CHUNK):
            p = self.strengths(lo, min(n, lo + _CHUNK - 1) + 1)
            p_parts.append(math.fsum(p.tolist()))
            a_parts.append(math.fsum((p * (1.0 - p)).tolist()))
            w_parts.append(math.fsum(((2.0 * p - 1.0) ** 2).tolist()))
        mean = math.fsum(p_parts) / n
        var_avg = math.fsum(a_parts) / n
        gap_direct = math.fsum(w_parts) / (4.0 * n)
        gap = abs(var_avg - 0.25)
        if not math.isclose(gap, gap_direct, rel_tol=1e-12, abs_tol=_STATS_ABS_FLOOR):
            raise ConsistencyError(
                f"b_n mismatch at n={n}: |A_n - 1/4| = {gap!r}, "
                f"sum form = {gap_direct!r}"
            )
        return EnvStats(n, mean, var_avg, gap_direct)

    def neg_cookie_count(self, x: int) -> int:
        """Number of ``j <= x`` with ``p_j < 1/2``."""
        if x < 0:
            raise DomainError(f"x must be >= 0, got {x}")
        return self._count_below_half(int(x), upper=self.reflected)

    def decay_condition(self) -> Optional[DecayCondition]:
        """Closed-form answer about the o(1/log n) tail condition, if known."""
        return self._decay_closed_form()

    def reflect(self) -> "CookieEnvironment":
        return replace(self, reflected=not self.reflected)

    def describe(self) -> str:
        text = self._describe()
        return f"reflect({text})" if self.reflected else text

    def _describe(self) -> str:
        return self.kind.value


@dataclass(frozen=True)
class FiniteEnvironment(CookieEnvironment):
    """Finitely many cookies followed by placebos."""

    kind: ClassVar[Kind] = Kind.FINITE
    strengths_list: tuple = ()

    def __post_init__(self):
        values = tuple(float(p) for p in self.strengths_list)
        for i, p in enumerate(values, start=1):
            if not 0.0 < p < 1.0:
                raise DomainError(f"strength {i} = {p!r} is not in (0, 1)")
        object.__setattr__(self, "strengths_list", values)
        object.__setattr__(self, "_table", np.array(values + (0.5,)))

    def _raw(self, j):
        idx = np.minimum(j, len(self.strengths_list) + 1) - 1
        return self._table[idx]

    def _raw_scalar(self, j):
        return self.strengths_list[j - 1] if j <= len(self.strengths_list) else 0.5

    def _abs_tail(self, n):
        return math.fsum(abs(2.0 * p - 1.0) for p in self.strengths_list[n - 1:])

    def _closed_total(self):
        return math.fsum(2.0 * p - 1.0 for p in self.strengths_list)

    def _count_below_half(self, x, upper):
        head = self.strengths_list[:x]
        return sum(1 for p in head if (p > 0.5 if upper else p < 0.5))

    def _describe(self):
        if not self.strengths_list:
            return "finite:"
        return "finite:" + ",".join(repr(p) for p in self.strengths_list)


def placebo() -> FiniteEnvironment:
    """The all-placebo stack, i.e. simple symmetric random walk."""
    return FiniteEnvironment(())


def _is_example_site(j: int) -> int:
    """Return m >= 1 if ``j == 4**(4**m)``, else 0 (exact integer test)."""
    if j < 256 or j & (j - 1):
        return 0
    e = j.bit_length() - 1  # j = 2**e = 4**(e/2)
    if e % 2:
        return 0
    half = e // 2
    m = 0
    while half % 4 == 0:
        half //= 4
        m += 1
    return m if half == 1 and m >= 1 else 0


def _first_example_site_at_or_after(n: int) -> int:
    m = 1
    while 4 ** (4**m) < n:
        m += 1
    return m


@dataclass(frozen=True)
class TransientExample(CookieEnvironment):
    """Three cookies of strength 5/6, then weak negative cookies.

    The cookie at ``4**(4**m)`` has strength ``1/2 - 2**-(m+1)``; every other
    cookie is a placebo.  Total drift is exactly 1.
    """

    kind: ClassVar[Kind] = Kind.TRANSIENT_EXAMPLE

    def _raw(self, j):
        p = np.full(j.shape, 0.5)
        p[j <= 3] = 5.0 / 6.0
        # 4**(4**m) fits in int64 only for m = 1, 2
        p[j == 256] = 0.25
        p[j == 4**16] = 0.5 - 0.125
        return p

    def _raw_scalar(self, j):
        if j <= 3:
            return 5.0 / 6.0
        m = _is_example_site(j)
        return 0.5 - 0.5 ** (m + 1) if m else 0.5

    def _abs_tail(self, n):
        if n <= 3:
            return (4 - n) * (2.0 * (5.0 / 6.0) - 1.0) + 1.0
        return 0.5 ** (_first_example_site_at_or_after(n) - 1)

    def _closed_total(self):
        return 1.0

    def _count_below_half(self, x, upper):
        if upper:
            return min(x, 3)
        m = 0
        while 4 ** (4 ** (m + 1)) <= x:
            m += 1
        return m

    def _decay_closed_form(self):
        # at n = 4**(4**m): tail * log n = 2**(1-m) * 4**m * log 4, unbounded
        return DecayCondition.FAILS


@dataclass(frozen=True)
class GeometricTail(CookieEnvironment):
    """Head strengths, then ``2 p_j - 1 = scale * ratio**j`` for j > len(head)."""

    kind: ClassVar[Kind] = Kind.GEOMETRIC_TAIL
    head: tuple = ()
    ratio: float = 0.5
    scale: float = 0.0

    def __post_init__(self):
        head = tuple(float(p) for p in self.head)
        for i, p in enumerate(head, start=1):
            if not 0.0 < p < 1.0:
                raise DomainError(f"head strength {i} = {p!r} is not in (0, 1)")
        if not 0.0 < self.ratio < 1.0:
            raise DomainError(f"ratio must lie in (0, 1), got {self.ratio!r}")
        if abs(self.scale) * self.ratio ** (len(head) + 1) >= 1.0:
            raise DomainError("first tail cookie violates ellipticity")
        object.__setattr__(self, "head", head)
        object.__setattr__(self, "ratio", float(self.ratio))
        object.__setattr__(self, "scale", float(self.scale))

    def _raw(self, j):
        h = len(self.head)
        with np.errstate(under="ignore"):
            p = 0.5 * (1.0 + self.scale * self.ratio ** j.astype(float))
        if h:
            inside = j <= h
            p[inside] = np.array(self.head)[j[inside] - 1]
        return p

    def _raw_scalar(self, j):
        if j <= len(self.head):
            return self.head[j - 1]
        return 0.5 * (1.0 + self.scale * self.ratio ** float(j))

    def _geometric_from(self, n):
        return abs(self.scale) * self.ratio ** float(n) / (1.0 - self.ratio)

    def _abs_tail(self, n):
        h = len(self.head)
        if n > h:
            return self._geometric_from(n)
        head_part = math.fsum(abs(2.0 * p - 1.0) for p in self.head[n - 1:])
        return head_part + self._geometric_from(h + 1)

    def _count_below_half(self, x, upper):
        head = self.head[:x]
        count = sum(1 for p in head if (p > 0.5 if upper else p < 0.5))
        tail_len = max(0, x - len(self.head))
        if (self.scale > 0) if upper else (self.scale < 0):
            # stop counting once the weight underflows to an exact placebo
            last = len(self.head) + tail_len
            count += max(0, min(last, self._last_nonplacebo()) - len(self.head))
        return count

    def _last_nonplacebo(self):
        j = len(self.head) + 1
        while self._raw_scalar(j) != 0.5:
            j *= 2
        lo, hi = j // 2, j
        while lo + 1 < hi:
            mid = (lo + hi) // 2
            if self._raw_scalar(mid) != 0.5:
                lo = mid
            else:
                hi = mid
        return lo

    def _describe(self):
        head = " ".join(repr(p) for p in self.head)
        return f"geometric-tail:ratio={self.ratio!r},scale={self.scale!r},head={head}"


@dataclass(frozen=True)
class StrengthRule:
    """A user-registered strength rule.

    ``strengths`` maps an int64 index array to strengths.  ``tail_bound``
    must return a non-increasing upper bound on ``|sum_{j>=n} (2p_j - 1)|``;
    ``total`` is an optional closed-form total drift.
    """

    name: str
    strengths: Callable[[np.ndarray], np.ndarray]
    tail_bound: Optional[Callable[[int], float]] = None
    total: Optional[float] = None
    description: str = ""


_RULES: dict = {}


def register_rule(rule: StrengthRule, *, replace_existing: bool = False) -> None:
    if rule.name in _RULES and not replace_existing:
        raise ValueError(f"rule {rule.name!r} is already registered")
    _RULES[rule.name] = rule


def registered_rules() -> dict:
    return dict(_RULES)


@dataclass(frozen=True)
class CustomEnvironment(CookieEnvironment):
    kind: ClassVar[Kind] = Kind.CUSTOM
    rule: str = ""

    def __post_init__(self):
        if self.rule not in _RULES:
            raise DomainError(f"unknown strength rule {self.rule!r}")

    @property
    def _rule(self) -> StrengthRule:
        return _RULES[self.rule]

    def _raw(self, j):
        p = np.asarray(self._rule.strengths(j), dtype=float)
        if p.size and not (np.all(p > 0.0) and np.all(p < 1.0)):
            raise DomainError(f"rule {self.rule!r} produced a strength outside (0, 1)")
        return p

    def _abs_tail(self, n):
        if self._rule.tail_bound is None:
            raise UnsupportedCapability(
                f"rule {self.rule!r} declares no tail bound; tails are never estimated"
            )
        return float(self._rule.tail_bound(n))

    def _closed_total(self):
        return self._rule.total

    def _describe(self):
        return f"custom:{self.rule}"


def _inverse_square(j):
    return 0.5 + 0.25 / j.astype(float) ** 2


def _inverse_square_tail(n):
    return math.pi**2 / 12.0 if n == 1 else 0.5 / (n - 1)


_CRIT_FIRST = 0.5 * (1.0 + (1.5 - math.pi**2 / 12.0))


def _critical_inverse_square(j):
    p = _inverse_square(j)
    p[j == 1] = _CRIT_FIRST
    return p


def _critical_tail(n):
    return 1.0 if n == 1 else 0.5 / (n - 1)


register_rule(
    StrengthRule(
        "inverse-square",
        _inverse_square,
        _inverse_square_tail,
        total=math.pi**2 / 12.0,
        description="2p_j - 1 = 1/(2 j^2)",
    )
)
register_rule(
    StrengthRule(
        "critical-inverse-square",
        _critical_inverse_square,
        _critical_tail,
        total=1.0,
        description="2p_j - 1 = 1/(2 j^2) for j >= 2, first cookie tops delta up to 1",
    )
)
register_rule(
    StrengthRule(
        "untailed-inverse-square",
        _inverse_square,
        None,
        description="inverse-square strengths without a declared tail bound",
    )
)


def parse_strength(text: str) -> float:
    """Parse ``0.75`` or ``3/4`` into a float."""
    text = text.strip()
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"not a number: {text!r}") from exc
