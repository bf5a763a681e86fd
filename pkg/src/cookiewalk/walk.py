"""Excited random walk on Z via lazily realised coin stacks.

The coin consumed on the ``j``-th visit to site ``x`` is the Philox coin at
address ``(seed, stream, x, j)``, so the walk is exactly the "toss every coin
first, then release the walker" construction without storing any stack.
Replication ``r`` of a batch uses stream ``stream0 + r``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numba as nb
import numpy as np

from .blp import CoinStream, binomial_half_width
from .env import CookieEnvironment
from .errors import DomainError, ResourceLimitError
from .rng import coin_uniform, run_chunks, split_key

DEFAULT_SITE_CAP = 10**7
_CHUNK_REPS = 32


@dataclass
class WalkState:
    position: int = 0
    time: int = 0
    visit_counts: dict = field(default_factory=dict)

    def check(self):
        assert abs(self.position) <= self.time
        assert (self.position - self.time) % 2 == 0


def step(state: WalkState, env: CookieEnvironment, rng: CoinStream) -> WalkState:
    """Consume the next cookie at the current site and move one step."""
    x = state.position
    j = state.visit_counts.get(x, 0) + 1
    state.visit_counts[x] = j
    right = rng.coin(x, j, env.strength(j))
    state.position = x + 1 if right else x - 1
    state.time += 1
    return state


@dataclass(frozen=True)
class WalkSummary:
    horizon: int
    returns_to_origin: int
    first_return_time: Optional[int]
    max_position: int
    min_position: int
    final_position: int
    trace: Optional[np.ndarray] = field(default=None, repr=False, compare=False)


@nb.njit(cache=True, nogil=True)
def _walk_batch(
    p, k0, k1, stream_lo, count, horizon, mirror, site_cap, visits, off,
    returns, first_ret, maxp, minp, final, first_step, trace, tally_n, tally_s,
):
    """Simulate ``count`` walks.  Returns ``(done, status)``.

    Status 0 ok, -2 strength table too short (replication ``done`` must be
    rerun with a longer table), -4 site cap exceeded.
    """
    n_tally = tally_n.size
    for r in range(count):
        stream = np.uint64(stream_lo + r)
        s0 = stream & np.uint64(0xFFFFFFFF)
        s1 = stream >> np.uint64(32)
        x = 0
        mx = 0
        mn = 0
        nret = 0
        fr = -1
        fs = 0
        status = 0
        if trace.size and r == 0:
            trace[0] = 0
        for t in range(horizon):
            idx = x + off
            j = visits[idx] + 1
            if j > p.size:
                status = -2
                break
            visits[idx] = j
            if mirror:
                u = coin_uniform(k0, k1, s0, s1, -x, j)
                right = u >= 1.0 - p[j - 1]
            else:
                u = coin_uniform(k0, k1, s0, s1, x, j)
                right = u < p[j - 1]
            if j <= n_tally:
                tally_n[j - 1] += 1
                if right:
                    tally_s[j - 1] += 1
            if right:
                x += 1
                if x > mx:
                    mx = x
            else:
                x -= 1
                if x < mn:
                    mn = x
            if mx - mn + 1 > site_cap:
                status = -4
                break
            if t == 0:
                fs = x
            if x == 0:
                nret += 1
                if fr < 0:
                    fr = t + 1
            if trace.size and r == 0:
                trace[t + 1] = x
        for i in range(mn + off, mx + off + 1):
            visits[i] = 0
        if status:
            return r, status
        returns[r] = nret
        first_ret[r] = fr
        maxp[r] = mx
        minp[r] = mn
        final[r] = x
        first_step[r] = fs
    return count, 0


@dataclass(frozen=True)
class WalkBatch:
    """Per-replication statistics as arrays; ``first_return`` is -1 if none."""

    horizon: int
    returns: np.ndarray
    first_return: np.ndarray
    max_position: np.ndarray
    min_position: np.ndarray
    final_position: np.ndarray
    first_step: np.ndarray
    trace: Optional[np.ndarray] = field(default=None, repr=False)
    tally_visits: Optional[np.ndarray] = field(default=None, repr=False)
    tally_right: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def reps(self) -> int:
        return self.returns.size

    def summary(self, r: int) -> WalkSummary:
        fr = int(self.first_return[r])
        return WalkSummary(
            self.horizon,
            int(self.returns[r]),
            fr if fr >= 0 else None,
            int(self.max_position[r]),
            int(self.min_position[r]),
            int(self.final_position[r]),
            self.trace if r == 0 else None,
        )


def simulate(
    env: CookieEnvironment,
    seed: int,
    reps: int,
    horizon: int,
    stream0: int = 0,
    mirror: bool = False,
    threads: int = 1,
    trace: bool = False,
    tally: int = 0,
    site_cap: int = DEFAULT_SITE_CAP,
) -> WalkBatch:
    """Run ``reps`` independent walks of ``horizon`` steps from 0.

    ``trace`` records the path of replication 0; ``tally > 0`` counts visits
    and right steps by visit index ``1..tally`` (forces one thread so the
    counters are shared safely).
    """
    if horizon < 1 or reps < 1:
        raise DomainError("need horizon >= 1 and reps >= 1")
    k0, k1, _, _ = split_key(seed, 0)
    returns = np.empty(reps, dtype=np.int64)
    first_ret = np.empty(reps, dtype=np.int64)
    maxp = np.empty(reps, dtype=np.int64)
    minp = np.empty(reps, dtype=np.int64)
    final = np.empty(reps, dtype=np.int64)
    first_step = np.empty(reps, dtype=np.int64)
    trace_arr = np.zeros(horizon + 1 if trace else 0, dtype=np.int64)
    tally_n = np.zeros(tally, dtype=np.int64)
    tally_s = np.zeros(tally, dtype=np.int64)
    off = min(horizon, site_cap)
    base = env.strengths(1, min(horizon, 1 << 12) + 1)

    def work(lo, hi):
        table = base
        visits = np.zeros(2 * off + 1, dtype=np.int64)
        while lo < hi:
            done, status = _walk_batch(
                table, k0, k1, stream0 + lo, hi - lo, horizon, mirror, site_cap,
                visits, off, returns[lo:hi], first_ret[lo:hi], maxp[lo:hi],
                minp[lo:hi], final[lo:hi], first_step[lo:hi],
                trace_arr if lo == 0 else trace_arr[:0], tally_n, tally_s,
            )
            if status == -4:
                raise ResourceLimitError(
                    f"walk visited more than site_cap={site_cap} distinct sites",
                    cap=site_cap,
                )
            if status == -2:
                # tallies of the aborted replication must not be double counted
                if tally:
                    raise RuntimeError("strength table overflow while tallying")
                table = env.strengths(1, min(horizon, 2 * table.size) + 1)
            lo += done

    if tally:
        table_len = min(horizon, 1 << 22)
        base = env.strengths(1, table_len + 1)
        threads = 1
    run_chunks(work, reps, _CHUNK_REPS, threads)
    return WalkBatch(
        horizon, returns, first_ret, maxp, minp, final, first_step,
        trace_arr if trace else None,
        tally_n if tally else None, tally_s if tally else None,
    )


def run(
    env: CookieEnvironment,
    seed: int,
    stream: int,
    horizon: int,
    trace: bool = False,
    mirror: bool = False,
    site_cap: int = DEFAULT_SITE_CAP,
) -> WalkSummary:
    batch = simulate(
        env, seed, 1, horizon, stream0=stream, mirror=mirror, trace=trace,
        site_cap=site_cap,
    )
    return batch.summary(0)


@dataclass(frozen=True)
class ReturnCurve:
    horizons: list
    probability: list
    half_width: list
    reps: int


def return_curve_from(batch: WalkBatch, horizons) -> ReturnCurve:
    fr = batch.first_return
    probs, hws = [], []
    for t in horizons:
        k = int(np.count_nonzero((fr >= 0) & (fr <= t)))
        probs.append(k / batch.reps)
        hws.append(binomial_half_width(k, batch.reps))
    return ReturnCurve(list(horizons), probs, hws, batch.reps)


def return_probability_curve(
    env: CookieEnvironment,
    seed: int,
    horizons,
    reps: int,
    stream0: int = 0,
    threads: int = 1,
) -> ReturnCurve:
    """Empirical ``P(return to 0 by T)`` for each ``T`` from one batch of walks."""
    if reps < 1:
        raise DomainError("reps must be >= 1")
    horizons = sorted(horizons)
    batch = simulate(env, seed, reps, horizons[-1], stream0=stream0, threads=threads)
    return return_curve_from(batch, horizons)


@dataclass(frozen=True)
class DirectionStats:
    right: float
    left: float
    zero: float
    reps: int
    right_half_width: float
    left_half_width: float


def direction_stats_from(batch: WalkBatch) -> DirectionStats:
    f = batch.final_position
    nr = int(np.count_nonzero(f > 0))
    nl = int(np.count_nonzero(f < 0))
    n = batch.reps
    return DirectionStats(
        nr / n, nl / n, (n - nr - nl) / n, n,
        binomial_half_width(nr, n), binomial_half_width(nl, n),
    )


def direction_stats(
    env: CookieEnvironment,
    seed: int,
    horizon: int,
    reps: int,
    stream0: int = 0,
    mirror: bool = False,
    threads: int = 1,
) -> DirectionStats:
    batch = simulate(env, seed, reps, horizon, stream0=stream0, mirror=mirror, threads=threads)
    return direction_stats_from(batch)


def right_escape_fraction(batch: WalkBatch) -> tuple[float, int]:
    """Among walks whose first step is +1, the fraction never back at 0.

    On that event the walk escapes exactly when the branching-like process
    started from one individual survives, so this is the walk-side estimate
    of the FBLP survival probability.
    """
    right_first = batch.first_step > 0
    k = int(np.count_nonzero(right_first))
    if k == 0:
        return float("nan"), 0
    escaped = int(np.count_nonzero(right_first & (batch.first_return < 0)))
    return escaped / k, k
