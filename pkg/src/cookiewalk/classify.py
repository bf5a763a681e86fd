"""Recurrence/transience verdicts and numeric survival/extinction certificates."""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .blp import DEFAULT_EPS, params_exact
from .env import CookieEnvironment, DecayCondition
from .errors import DomainError

# Rounding allowance on top of the reported tail error of delta.
_ROUNDING = 64 * 2.0**-52
# n-grid for the o(1/log n) tail test.
DECAY_GRID = tuple(10**k for k in range(1, 10))
DECAY_TARGET = 1e-3

EVIDENCE_LABEL = "numerical evidence over a finite grid, not a proof"


class Verdict(str, enum.Enum):
    TRANSIENT_RIGHT = "TransientRight"
    TRANSIENT_LEFT = "TransientLeft"
    RECURRENT = "Recurrent"
    CRITICAL_RECURRENT = "CriticalRecurrent"
    UNDETERMINED = "Undetermined"


@dataclass(frozen=True)
class CertificateRow:
    n: int
    theta: float
    threshold: float
    margin: float


@dataclass(frozen=True)
class CertificateReport:
    """Margins over a grid; ``all_positive`` means the certificate passed there.

    For survival the margin is ``theta(n) - (1 + 2/log n)``; for extinction
    it is ``(1 + 1/log n) - theta(n)``.
    """

    kind: str
    rows: list
    label: str = EVIDENCE_LABEL

    @property
    def all_positive(self) -> bool:
        return bool(self.rows) and all(r.margin > 0 for r in self.rows)


@dataclass(frozen=True)
class ClassificationResult:
    verdict: Verdict
    delta: float
    error: float
    tail_condition: DecayCondition
    evidence: list = field(default_factory=list)
    certificate: Optional[CertificateReport] = None


def decay_condition_on_grid(env: CookieEnvironment, grid=DECAY_GRID) -> DecayCondition:
    """Closed-form answer if the environment has one, else a grid test.

    The grid test accepts when ``tail_bound(n) * log n`` never increases
    along ``grid`` and ends below ``DECAY_TARGET``.
    """
    closed = env.decay_condition()
    if closed is not None:
        return closed
    values = [env.tail_bound(n) * math.log(n) for n in grid]
    non_increasing = all(b <= a for a, b in zip(values, values[1:]))
    if non_increasing and values[-1] < DECAY_TARGET:
        return DecayCondition.HOLDS
    return DecayCondition.UNKNOWN


def classify(env: CookieEnvironment, tol: float = 1e-12) -> ClassificationResult:
    est = env.total_drift(tol)
    delta = est.value
    err = est.error + _ROUNDING * max(1.0, abs(delta))
    if delta - err > 1.0:
        return ClassificationResult(Verdict.TRANSIENT_RIGHT, delta, err, DecayCondition.UNKNOWN)
    if delta + err < -1.0:
        return ClassificationResult(Verdict.TRANSIENT_LEFT, delta, err, DecayCondition.UNKNOWN)
    if abs(delta) + err < 1.0:
        return ClassificationResult(Verdict.RECURRENT, delta, err, DecayCondition.UNKNOWN)
    # |delta| = 1 within the error
    cond = decay_condition_on_grid(env)
    verdict = (
        Verdict.CRITICAL_RECURRENT if cond is DecayCondition.HOLDS else Verdict.UNDETERMINED
    )
    return ClassificationResult(verdict, delta, err, cond)


def _check_grid(n_grid):
    grid = [int(n) for n in n_grid]
    if not grid:
        raise DomainError("certificate grid is empty")
    if any(n < 3 for n in grid):
        raise DomainError("certificate grid needs n >= 3")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise DomainError("certificate grid must be strictly increasing")
    return grid


def theta_grid(env, n_grid, eps=DEFAULT_EPS, threads=1):
    """``theta(n)`` from the exact law for every grid point, in grid order."""
    grid = list(n_grid)
    if threads <= 1 or len(grid) <= 1:
        return [params_exact(env, n, eps).theta_n for n in grid]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return [p.theta_n for p in pool.map(lambda n: params_exact(env, n, eps), grid)]


def certify_survival(env, n_grid, eps=DEFAULT_EPS, threads=1) -> CertificateReport:
    grid = _check_grid(n_grid)
    rows = []
    for n, theta in zip(grid, theta_grid(env, grid, eps, threads)):
        thr = 1.0 + 2.0 / math.log(n)
        rows.append(CertificateRow(n, theta, thr, theta - thr))
    return CertificateReport("survival", rows)


def certify_extinction(env, n_grid, eps=DEFAULT_EPS, threads=1) -> CertificateReport:
    grid = _check_grid(n_grid)
    rows = []
    for n, theta in zip(grid, theta_grid(env, grid, eps, threads)):
        thr = 1.0 + 1.0 / math.log(n)
        rows.append(CertificateRow(n, theta, thr, thr - theta))
    return CertificateReport("extinction", rows)


def classify_with_certificate(
    env, tol=1e-12, n_grid=None, kind="survival", eps=DEFAULT_EPS, threads=1
) -> ClassificationResult:
    """``classify`` plus an optional certificate whose rows become the evidence."""
    result = classify(env, tol)
    if n_grid is None:
        return result
    certify = {"survival": certify_survival, "extinction": certify_extinction}.get(kind)
    if certify is None:
        raise DomainError(f"unknown certificate kind {kind!r}")
    report = certify(env, n_grid, eps, threads)
    evidence = [(r.n, r.theta, r.threshold) for r in report.rows]
    return ClassificationResult(
        result.verdict, result.delta, result.error, result.tail_condition, evidence, report
    )
