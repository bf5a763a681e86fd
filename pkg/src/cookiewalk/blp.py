"""Forward branching-like process: exact one-step law, parameters, sampling.

Given ``Z_0 = n``, ``Z_1`` is the number of successes in independent
``Ber(p_1), Ber(p_2), ...`` trials before the ``n``-th failure, and the trial
of that failure is ``T_n = Z_1 + n``.  The exact law comes from a dynamic
program over the failure count, kept to the band of counts that still carry
non-negligible mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numba as nb
import numpy as np

from .env import CookieEnvironment
from .errors import (
    ConvergenceError,
    DegenerateVarianceError,
    DomainError,
    ResourceLimitError,
)
from .rng import _philox, _unit, run_chunks, split_key, uniforms

DEFAULT_EPS = 1e-12
NU_FLOOR = 1e-9
DEFAULT_SIZE_CAP = 10**7
_Z95 = 1.959963984540054
_CHUNK_REPS = 64


def trial_cap_for(n: int) -> int:
    return 64 * n + 10_000


# ---------------------------------------------------------------------------
# exact law


@nb.njit(cache=True, nogil=True)
def _dp_advance(p, k_start, n, v, band, acc, absorbed, eps, floor):
    """Advance the failure-count DP over trials ``k_start .. k_start+len(p)-1``.

    ``v[f]`` is the probability of ``f < n`` failures so far, non-zero only
    on ``band[0] <= f < band[1]``.  ``absorbed[i]`` receives the probability
    that the ``n``-th failure happens on trial ``k_start + i``.  ``acc`` holds
    the live mass and the mass trimmed below ``floor``.  Returns the number of
    trials consumed; stops early once live plus trimmed mass is ``<= eps``.
    """
    lo = band[0]
    hi = band[1]
    remaining = acc[0]
    dropped = acc[1]
    for i in range(p.size):
        k = k_start + i
        pk = p[i]
        qk = 1.0 - pk
        if hi == n:
            a = v[n - 1] * qk
            absorbed[i] = a
            remaining -= a
        new_hi = hi + 1 if hi < n else n
        for f in range(new_hi - 1, lo, -1):
            v[f] = v[f] * pk + v[f - 1] * qk
        v[lo] = v[lo] * pk
        hi = new_hi
        while hi - lo > 1 and v[lo] < floor:
            dropped += v[lo]
            remaining -= v[lo]
            v[lo] = 0.0
            lo += 1
        while hi - lo > 1 and v[hi - 1] < floor:
            dropped += v[hi - 1]
            remaining -= v[hi - 1]
            v[hi - 1] = 0.0
            hi -= 1
        if (k & 255) == 0:
            remaining = 0.0
            for f in range(lo, hi):
                remaining += v[f]
        if k >= n and remaining + dropped <= eps:
            remaining = 0.0
            for f in range(lo, hi):
                remaining += v[f]
            if remaining + dropped <= eps:
                band[0] = lo
                band[1] = hi
                acc[0] = remaining
                acc[1] = dropped
                return i + 1
    band[0] = lo
    band[1] = hi
    acc[0] = remaining
    acc[1] = dropped
    return p.size


@dataclass(frozen=True)
class TransitionDistribution:
    """Law of ``Z_1`` given ``Z_0 = n``; ``masses[m] = P_n(Z_1 = m)``."""

    n: int
    masses: np.ndarray
    tail_mass: float
    eps: float

    @property
    def support_max(self) -> int:
        nz = np.flatnonzero(self.masses)
        return int(nz[-1]) if nz.size else 0

    @property
    def total_mass(self) -> float:
        return math.fsum(self.masses.tolist())

    def pmf(self, m: int) -> float:
        return float(self.masses[m]) if 0 <= m < self.masses.size else 0.0

    def absorption_times(self) -> np.ndarray:
        """Trial indices ``k = m + n`` aligned with ``masses``."""
        return np.arange(self.masses.size) + self.n

    def mean(self) -> float:
        """Mean conditional on the computed support."""
        m = np.arange(self.masses.size, dtype=float)
        return math.fsum((m * self.masses).tolist()) / self.total_mass

    def variance(self) -> float:
        m = np.arange(self.masses.size, dtype=float)
        d = m - self.mean()
        return math.fsum((d * d * self.masses).tolist()) / self.total_mass

    def moment_errors(self) -> tuple[float, float]:
        """Bounds from placing ``tail_mass`` just past the support edge."""
        gap = self.support_max + 1 - self.mean()
        return self.tail_mass * gap, self.tail_mass * gap * gap

    def deviation_tail(self, eps: float) -> float:
        """``P_n(|Z_1/n - 1| > eps)`` over the computed support."""
        m = np.arange(self.masses.size)
        far = np.abs(m - self.n) > eps * self.n
        return math.fsum(self.masses[far].tolist())


def exact_transition(
    env: CookieEnvironment,
    n: int,
    eps: float = DEFAULT_EPS,
    trial_cap: Optional[int] = None,
) -> TransitionDistribution:
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if not 0.0 < eps < 1.0:
        raise DomainError(f"eps must lie in (0, 1), got {eps}")
    cap = trial_cap_for(n) if trial_cap is None else trial_cap
    floor = eps * 1e-18
    v = np.zeros(n)
    v[0] = 1.0
    band = np.array([0, 1], dtype=np.int64)
    acc = np.array([1.0, 0.0])
    pieces = []
    k = 1
    chunk = 2 * n + 64 * int(math.isqrt(n)) + 256
    while True:
        stop = min(k + chunk, cap + 1)
        if stop <= k:
            raise ConvergenceError(
                f"remaining mass {acc.sum():.3g} > eps={eps:g} after {cap} trials",
                best=float(acc.sum()),
            )
        p = env.strengths(k, stop)
        absorbed = np.zeros(p.size)
        used = _dp_advance(p, k, n, v, band, acc, absorbed, eps, floor)
        pieces.append(absorbed[:used])
        k += used
        if acc[0] + acc[1] <= eps and k > n:
            break
        chunk *= 2
    by_trial = np.concatenate(pieces)
    masses = by_trial[n - 1:].copy()
    tail = float(acc[0] + acc[1])
    return TransitionDistribution(n, masses, tail, eps)


@dataclass(frozen=True)
class BlpParams:
    n: int
    mu_n: float
    rho_n: float
    nu_n: float
    theta_n: float
    truncation_eps: float
    tail_mass: float = 0.0
    mean_error: float = 0.0
    var_error: float = 0.0


def params_from(dist: TransitionDistribution) -> BlpParams:
    n = dist.n
    rho = dist.mean() - n
    nu = dist.variance() / n
    if nu < NU_FLOOR:
        raise DegenerateVarianceError(f"nu({n}) = {nu:.3g} is below {NU_FLOOR:g}")
    mean_err, var_err = dist.moment_errors()
    return BlpParams(
        n=n,
        mu_n=1.0 + rho / n,
        rho_n=rho,
        nu_n=nu,
        theta_n=2.0 * rho / nu,
        truncation_eps=dist.eps,
        tail_mass=dist.tail_mass,
        mean_error=mean_err,
        var_error=var_err,
    )


def params_exact(env: CookieEnvironment, n: int, eps: float = DEFAULT_EPS) -> BlpParams:
    return params_from(exact_transition(env, n, eps))


def expected_drift_at_absorption(env, dist: TransitionDistribution) -> float:
    """``E[delta_{T_n}]`` from the absorption-time law of ``dist``."""
    times = dist.absorption_times()
    prefix = env.drift_prefixes(int(times[-1]))
    return math.fsum((prefix[times] * dist.masses).tolist()) / dist.total_mass


def rho_via_wald(env: CookieEnvironment, n: int, eps: float = DEFAULT_EPS) -> float:
    return expected_drift_at_absorption(env, exact_transition(env, n, eps))


def expected_half_power_neg_count(env, dist: TransitionDistribution) -> float:
    """``E[(1/2)**C_p(T_n)]`` over the absorption-time law."""
    counts = {}
    total = []
    for k, w in zip(dist.absorption_times().tolist(), dist.masses.tolist()):
        if w == 0.0:
            continue
        c = counts.get(k)
        if c is None:
            c = counts[k] = env.neg_cookie_count(k)
        total.append(w * 0.5**c)
    return math.fsum(total) / dist.total_mass


# ---------------------------------------------------------------------------
# Monte Carlo


@nb.njit(inline="always")
def _stream_words(stream):
    return stream & np.uint64(0xFFFFFFFF), stream >> np.uint64(32)


@nb.njit(inline="always")
def _is_failure(u, pv, mirror):
    return u < 1.0 - pv if mirror else u >= pv


@nb.njit(cache=True, nogil=True)
def _successes_before(p, n, k0, k1, s0, s1, site, mirror, cap):
    """Successes at ``site`` before the ``n``-th failure.

    Returns -1 if more than ``cap`` trials are needed and -2 if the strength
    table ``p`` is too short.  Coins are consumed a Philox block (two
    trials) at a time.
    """
    c0 = np.uint64(np.uint32(-site if mirror else site))
    lim = min(cap, p.size)
    failures = 0
    v = 0
    blk = np.uint64(0)
    while v + 2 <= lim:
        w0, w1, w2, w3 = _philox(c0, blk, s0, s1, k0, k1)
        blk += np.uint64(1)
        failures += _is_failure(_unit(w0, w1), p[v], mirror)
        if failures == n:
            return v + 1 - n
        failures += _is_failure(_unit(w2, w3), p[v + 1], mirror)
        v += 2
        if failures == n:
            return v - n
    if v < lim:
        w0, w1, _, _ = _philox(c0, blk, s0, s1, k0, k1)
        if failures + _is_failure(_unit(w0, w1), p[v], mirror) == n:
            return v + 1 - n
        v += 1
    return -1 if v >= cap else -2


@nb.njit(cache=True, nogil=True)
def _sample_batch(p, n, k0, k1, stream_lo, count, site, mirror, cap, out):
    for r in range(count):
        s0, s1 = _stream_words(np.uint64(stream_lo + r))
        z = _successes_before(p, n, k0, k1, s0, s1, site, mirror, cap)
        if z < 0:
            return r, z
        out[r] = z
    return count, 0


@nb.njit(cache=True, nogil=True)
def _blp_batch(
    p, z0, k0, k1, stream_lo, count, max_gen, mirror, size_cap, extinct_at, last, path
):
    """Run ``count`` replications; generation ``g`` uses the coins at site ``g``.

    Status codes: 0 ok, -1 trial cap, -2 strength table too short,
    -3 generation size cap.  ``path`` (if non-empty) records replication 0.
    """
    for r in range(count):
        s0, s1 = _stream_words(np.uint64(stream_lo + r))
        z = z0
        g = 0
        if path.size:
            path[0] = z
        while z > 0 and g < max_gen:
            g += 1
            z = _successes_before(p, z, k0, k1, s0, s1, g, mirror, 64 * z + 10000)
            if z < 0:
                return r, z
            if z > size_cap:
                return r, -3
            if path.size and r == 0:
                path[g] = z
        extinct_at[r] = g if z == 0 else -1
        last[r] = z
    return count, 0


def _strength_table(env, length):
    return env.strengths(1, length + 1)


def _raise_status(code, what, cap=None):
    if code == -1:
        raise ResourceLimitError(f"{what}: trial cap exceeded", cap=cap)
    if code == -3:
        raise ResourceLimitError(f"{what}: generation size cap {cap} exceeded", cap=cap)
    raise RuntimeError(f"unexpected kernel status {code}")


@dataclass(frozen=True)
class CoinStream:
    """Address of a coin family: Philox key ``(seed, stream)``.

    ``mirror`` reads the coin at site ``-x`` and complements it, which turns a
    run in ``env`` into the mirror image of a run in ``reflect(env)``.
    """

    seed: int
    stream: int = 0
    mirror: bool = False

    @property
    def key(self):
        return split_key(self.seed, self.stream)

    def uniform(self, site: int, visit: int) -> float:
        s = -site if self.mirror else site
        return float(uniforms(self.seed, self.stream, s, visit, 1)[0])

    def coin(self, site: int, visit: int, p: float) -> bool:
        u = self.uniform(site, visit)
        return u >= 1.0 - p if self.mirror else u < p


def sample_transition(
    env: CookieEnvironment, n: int, rng: CoinStream, site: int = 1
) -> int:
    """One draw of ``Z_1`` given ``Z_0 = n``, using the coins at ``site``."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    cap = trial_cap_for(n)
    length = min(cap, 4 * n + 64)
    while True:
        z = _successes_before(
            _strength_table(env, length), n, *rng.key, site, rng.mirror, cap
        )
        if z != -2:
            break
        length = min(cap, 2 * length)
    if z == -1:
        _raise_status(-1, f"sample_transition(n={n})", cap)
    return int(z)


def sample_transitions(
    env: CookieEnvironment,
    n: int,
    reps: int,
    seed: int,
    stream0: int = 0,
    site: int = 1,
    mirror: bool = False,
    threads: int = 1,
) -> np.ndarray:
    """``reps`` independent draws of ``Z_1``; draw ``r`` uses stream ``stream0 + r``."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    cap = trial_cap_for(n)
    out = np.empty(reps, dtype=np.int64)
    k0, k1, _, _ = split_key(seed, 0)
    base = _strength_table(env, min(cap, 4 * n + 64))

    def work(lo, hi):
        table = base
        while lo < hi:
            done, status = _sample_batch(
                table, n, k0, k1, stream0 + lo, hi - lo, site, mirror, cap, out[lo:hi]
            )
            lo += done
            if status == -2:
                table = _strength_table(env, min(cap, 2 * table.size))
            elif status:
                _raise_status(status, f"sample_transitions(n={n})", cap)

    run_chunks(work, reps, 1 << 14, threads)
    return out


@dataclass(frozen=True)
class BlpRunRecord:
    generations: list
    extinct_at: Optional[int]
    cap_hit: bool

    def __post_init__(self):
        if (self.extinct_at is not None) != (self.generations[-1] == 0):
            raise ValueError("extinct_at must be set exactly when the last size is 0")


def blp_run(
    env: CookieEnvironment,
    z0: int,
    rng: CoinStream,
    max_gen: int,
    size_cap: int = DEFAULT_SIZE_CAP,
) -> BlpRunRecord:
    """One trajectory ``Z_0 = z0, Z_1, ...`` until extinction or ``max_gen``.

    ``cap_hit`` marks a run censored at ``max_gen``.
    """
    if z0 < 0 or max_gen < 1:
        raise DomainError("need z0 >= 0 and max_gen >= 1")
    if z0 == 0:
        return BlpRunRecord([0], 0, False)
    k0, k1, _, _ = rng.key
    path = np.full(max_gen + 1, -1, dtype=np.int64)
    extinct = np.empty(1, dtype=np.int64)
    last = np.empty(1, dtype=np.int64)
    table = _strength_table(env, 4 * z0 + 1024)
    while True:
        _, status = _blp_batch(
            table, z0, k0, k1, rng.stream, 1, max_gen, rng.mirror, size_cap,
            extinct, last, path,
        )
        if status != -2:
            break
        table = _strength_table(env, 2 * table.size)
    if status:
        _raise_status(status, "blp_run", size_cap)
    gens = [int(z) for z in path if z >= 0]
    ext = int(extinct[0])
    return BlpRunRecord(gens, ext if ext >= 0 else None, ext < 0)


@dataclass(frozen=True)
class ExtinctionEstimate:
    fraction: float
    half_width: float
    extinct: int
    censored: int
    reps: int
    extinct_at: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def survival(self) -> float:
        return self.censored / self.reps


def binomial_half_width(k: int, n: int) -> float:
    f = k / n
    return _Z95 * math.sqrt(f * (1.0 - f) / n)


def extinction_runs(
    env: CookieEnvironment,
    z0: int,
    reps: int,
    max_gen: int,
    seed: int,
    stream0: int = 0,
    mirror: bool = False,
    size_cap: int = DEFAULT_SIZE_CAP,
    threads: int = 1,
) -> np.ndarray:
    """Extinction generation per replication (-1 when censored)."""
    if z0 < 1 or reps < 1 or max_gen < 1:
        raise DomainError("need z0 >= 1, reps >= 1, max_gen >= 1")
    k0, k1, _, _ = split_key(seed, 0)
    extinct = np.empty(reps, dtype=np.int64)
    last = np.empty(reps, dtype=np.int64)
    # tables only ever grow, so sharing the longest one across chunks changes
    # how often a replication is rerun, never its outcome
    tables = [_strength_table(env, 4 * z0 + 4096)]
    empty = np.empty(0, dtype=np.int64)

    def work(lo, hi):
        while lo < hi:
            table = tables[-1]
            done, status = _blp_batch(
                table, z0, k0, k1, stream0 + lo, hi - lo, max_gen, mirror, size_cap,
                extinct[lo:hi], last[lo:hi], empty,
            )
            lo += done
            if status == -2 and tables[-1].size == table.size:
                tables.append(_strength_table(env, 2 * table.size))
            elif status:
                _raise_status(status, "extinction_estimate", size_cap)

    run_chunks(work, reps, _CHUNK_REPS, threads)
    return extinct


def extinction_estimate(
    env: CookieEnvironment,
    z0: int,
    reps: int,
    max_gen: int,
    seed: int,
    stream0: int = 0,
    mirror: bool = False,
    threads: int = 1,
) -> ExtinctionEstimate:
    """Fraction of runs extinct by ``max_gen``; censored runs count as survivors."""
    ext = extinction_runs(env, z0, reps, max_gen, seed, stream0, mirror, threads=threads)
    k = int(np.count_nonzero(ext >= 0))
    return ExtinctionEstimate(k / reps, binomial_half_width(k, reps), k, reps - k, reps, ext)


# ---------------------------------------------------------------------------
# concentration


def concentration_envelope(n: int, eps: float, c: float) -> float:
    return 2.0 * math.exp(-c * eps * eps * n / (2.0 + eps))


def max_constant(tail: float, n: int, eps: float) -> float:
    """Largest C with ``tail <= 2 exp(-C eps^2 n / (2 + eps))``."""
    if tail <= 0.0:
        return math.inf
    if tail >= 2.0:
        return 0.0
    return -math.log(tail / 2.0) * (2.0 + eps) / (eps * eps * n)


@dataclass(frozen=True)
class ConcentrationRow:
    n: int
    eps: float
    tail: float
    tail_mass: float
    envelope: float
    c_max: float
    method: str

    @property
    def holds(self) -> bool:
        return self.tail <= self.envelope


@dataclass(frozen=True)
class ConcentrationTable:
    rows: list
    c_test: float
    c_fit: float


def concentration_check(
    env: CookieEnvironment,
    n_list,
    eps_list,
    reps: int = 0,
    seed: int = 0,
    c_test: float = 1.0 / 16.0,
    dp_eps: float = DEFAULT_EPS,
    threads: int = 1,
) -> ConcentrationTable:
    """Tail frequencies of ``|Z_1/n - 1|`` against the exponential envelope.

    Tails come from the exact law unless ``reps > 0``, in which case they are
    Monte Carlo frequencies.  ``c_fit`` is the largest constant for which the
    envelope holds over the whole grid.
    """
    if any(e <= 0 for e in eps_list):
        raise DomainError("all eps must be positive")
    rows = []
    for n in n_list:
        if reps > 0:
            z = sample_transitions(env, n, reps, seed, stream0=n * reps, threads=threads)
            dev = np.abs(z - n)
            tails = [(float(np.count_nonzero(dev > e * n)) / reps, 0.0) for e in eps_list]
            method = "mc"
        else:
            dist = exact_transition(env, n, dp_eps)
            tails = [(dist.deviation_tail(e), dist.tail_mass) for e in eps_list]
            method = "exact"
        for e, (tail, tmass) in zip(eps_list, tails):
            rows.append(
                ConcentrationRow(
                    n, e, tail, tmass, concentration_envelope(n, e, c_test),
                    max_constant(tail, n, e), method,
                )
            )
    fit = min((r.c_max for r in rows), default=math.inf)
    return ConcentrationTable(rows, c_test, fit)
