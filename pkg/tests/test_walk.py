import math

import numpy as np
import pytest
from scipy import stats

from cookiewalk.blp import CoinStream, blp_run
from cookiewalk.env import FiniteEnvironment
from cookiewalk.errors import DomainError, ResourceLimitError
from cookiewalk.walk import (
    WalkState,
    direction_stats,
    direction_stats_from,
    return_curve_from,
    return_probability_curve,
    right_escape_fraction,
    run,
    simulate,
    step,
)


def python_walk(env, rng, horizon):
    state = WalkState()
    path = [0]
    for _ in range(horizon):
        step(state, env, rng)
        state.check()
        assert state.visit_counts[path[-1]] >= 1
        path.append(state.position)
    return path


def test_kernel_matches_reference_stepper(te):
    for stream in (0, 3):
        s = run(te, 9, stream, 500, trace=True)
        assert s.trace.tolist() == python_walk(te, CoinStream(9, stream), 500)


def test_parity_and_summary_invariants(te):
    batch = simulate(te, 1, 40, 2000, trace=True)
    t = np.arange(batch.trace.size)
    assert np.all((batch.trace - t) % 2 == 0)
    assert np.all(np.abs(batch.trace) <= t)
    for r in range(batch.reps):
        s = batch.summary(r)
        assert (s.returns_to_origin >= 1) == (s.first_return_time is not None)
        assert s.min_position <= 0 <= s.max_position
        assert s.min_position <= s.final_position <= s.max_position


def test_single_step():
    s = run(FiniteEnvironment(()), 0, 0, 1)
    assert s.final_position in (-1, 1) and s.returns_to_origin == 0 and s.first_return_time is None


def test_nearly_sure_first_step():
    batch = simulate(FiniteEnvironment((1 - 1e-9,)), 5, 2000, 1)
    assert np.all(batch.final_position == 1)


def test_replay_and_threads(te):
    a = simulate(te, 3, 100, 3000, threads=1)
    b = simulate(te, 3, 100, 3000, threads=4)
    for f in ("returns", "first_return", "max_position", "min_position", "final_position"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    # replication r is stream r
    s = run(te, 3, 57, 3000)
    assert s.final_position == a.final_position[57] and s.returns_to_origin == a.returns[57]


def test_mirror_equivariance(te):
    env = FiniteEnvironment((0.9, 0.2, 0.7))
    for e in (env, te):
        a = run(e, 4, 2, 5000, trace=True)
        b = run(e.reflect(), 4, 2, 5000, trace=True, mirror=True)
        assert np.array_equal(a.trace, -b.trace)
        assert a.returns_to_origin == b.returns_to_origin


def test_coin_bookkeeping_and_chi_square():
    strengths = (0.9, 0.2, 0.7, 0.6)
    env = FiniteEnvironment(strengths)
    horizon, reps = 1000, 1000
    batch = simulate(env, 12, reps, horizon, tally=horizon)
    n, s = batch.tally_visits, batch.tally_right
    # every step consumes exactly one coin
    assert n.sum() == reps * horizon
    k = 8
    p = np.array([env.strength(j) for j in range(1, k + 1)])
    chi2 = np.sum((s[:k] - n[:k] * p) ** 2 / (n[:k] * p * (1 - p)))
    assert stats.chi2(k).sf(chi2) > 0.01


def test_site_cap():
    with pytest.raises(ResourceLimitError):
        simulate(FiniteEnvironment((0.99,) * 5), 0, 1, 10_000, site_cap=20)


def test_domain_errors(te):
    with pytest.raises(DomainError):
        simulate(te, 0, 1, 0)
    with pytest.raises(DomainError):
        return_probability_curve(te, 0, [10], 0)


def test_placebo_symmetry(flat):
    batch = simulate(flat, 2, 10_000, 10_000)
    f = batch.final_position
    assert abs(f.mean()) < 3 * f.std() / math.sqrt(f.size)
    d = direction_stats_from(batch)
    assert d.right + d.left + d.zero == pytest.approx(1.0)
    assert abs(d.right - d.left) < 3 * math.hypot(d.right_half_width, d.left_half_width) / 1.96


def test_return_curves(flat, delta2):
    flat_curve = return_probability_curve(flat, 1, [10, 100, 1000, 10_000], 2000)
    assert all(b >= a for a, b in zip(flat_curve.probability, flat_curve.probability[1:]))
    assert flat_curve.probability[-1] > 0.98
    curve = return_probability_curve(delta2, 1, [1000, 10_000, 30_000], 2000)
    assert all(b >= a for a, b in zip(curve.probability, curve.probability[1:]))
    assert curve.probability[-1] < 0.5
    # plateau: the last decade adds almost nothing
    assert curve.probability[-1] - curve.probability[0] < 0.02


def test_reflected_curve_and_direction(delta2):
    a = simulate(delta2, 8, 3000, 5000)
    b = simulate(delta2.reflect(), 9, 3000, 5000)
    ca, cb = return_curve_from(a, [5000]), return_curve_from(b, [5000])
    assert abs(ca.probability[0] - cb.probability[0]) < 3 * math.hypot(ca.half_width[0], cb.half_width[0]) / 1.96
    da = direction_stats(delta2, 8, 5000, 3000)
    dm = direction_stats(delta2.reflect(), 8, 5000, 3000, mirror=True)
    assert da.right == dm.left and da.left == dm.right
    assert da.right > 0.99


def test_pathwise_coupling_with_branching_process(delta2, te):
    # on first step +1 the excursion lasts 2 * (1 + sum of generations) steps
    for env in (delta2, te, FiniteEnvironment((0.6,))):
        batch = simulate(env, 5, 300, 20_000)
        for r in range(batch.reps):
            if batch.first_step[r] < 0:
                continue
            t = int(batch.first_return[r])
            if t >= 0:
                # a returning walk bounds the number of generations by t / 2
                rec = blp_run(env, 1, CoinStream(5, r), t // 2)
                assert rec.extinct_at is not None and 2 * sum(rec.generations) == t
            else:
                rec = blp_run(env, 1, CoinStream(5, r), 200)
                if rec.extinct_at is not None:
                    assert 2 * sum(rec.generations) > batch.horizon


def test_right_escape_fraction(delta2):
    batch = simulate(delta2, 1, 400, 20_000)
    frac, k = right_escape_fraction(batch)
    assert k == int((batch.first_step > 0).sum())
    assert 0.6 < frac < 0.95
