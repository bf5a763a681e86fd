import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cookiewalk.classify import (
    Verdict,
    certify_extinction,
    certify_survival,
    classify,
    classify_with_certificate,
    decay_condition_on_grid,
)
from cookiewalk.env import (
    CustomEnvironment,
    DecayCondition,
    FiniteEnvironment,
    GeometricTail,
    StrengthRule,
    register_rule,
)
from cookiewalk.errors import DomainError, UnsupportedCapability

SWAP = {
    Verdict.TRANSIENT_RIGHT: Verdict.TRANSIENT_LEFT,
    Verdict.TRANSIENT_LEFT: Verdict.TRANSIENT_RIGHT,
    Verdict.RECURRENT: Verdict.RECURRENT,
    Verdict.CRITICAL_RECURRENT: Verdict.CRITICAL_RECURRENT,
    Verdict.UNDETERMINED: Verdict.UNDETERMINED,
}


@pytest.mark.parametrize(
    "env, verdict",
    [
        (FiniteEnvironment((5 / 6,) * 3), Verdict.TRANSIENT_RIGHT),
        (FiniteEnvironment((1 / 6,) * 3), Verdict.TRANSIENT_LEFT),
        (FiniteEnvironment(()), Verdict.RECURRENT),
        (FiniteEnvironment((0.75,)), Verdict.RECURRENT),
        (FiniteEnvironment((0.75, 0.75)), Verdict.CRITICAL_RECURRENT),
        (CustomEnvironment(rule="critical-inverse-square"), Verdict.CRITICAL_RECURRENT),
        (CustomEnvironment(rule="inverse-square"), Verdict.RECURRENT),
        (GeometricTail((0.9,), 0.5, 1.0), Verdict.TRANSIENT_RIGHT),
    ],
)
def test_suite(env, verdict):
    res = classify(env)
    assert res.verdict is verdict
    assert classify(env.reflect()).verdict is SWAP[verdict]


def test_transient_example_is_undetermined(te):
    res = classify(te)
    assert res.verdict is Verdict.UNDETERMINED
    assert res.tail_condition is DecayCondition.FAILS
    assert classify(te.reflect()).verdict is Verdict.UNDETERMINED


def test_critical_tail_condition_holds():
    res = classify(FiniteEnvironment((0.75, 0.75)))
    assert res.tail_condition is DecayCondition.HOLDS and res.delta == 1.0


def test_slow_tail_is_unknown():
    # delta = 1 with a tail ~ 1/log n: the grid test cannot confirm o(1/log n)
    register_rule(
        StrengthRule(
            "log-tail-test", lambda j: 0.5 + 0 * j, lambda n: 0.5 / math.log(n + 1), total=1.0
        ),
        replace_existing=True,
    )
    env = CustomEnvironment(rule="log-tail-test")
    assert decay_condition_on_grid(env) is DecayCondition.UNKNOWN
    assert classify(env).verdict is Verdict.UNDETERMINED


def test_capability_errors_propagate():
    with pytest.raises(UnsupportedCapability):
        classify(CustomEnvironment(rule="untailed-inverse-square"))


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(0.02, 0.98), max_size=10))
def test_soundness_and_reflection(strengths):
    env = FiniteEnvironment(tuple(strengths))
    res = classify(env)
    if res.verdict is Verdict.TRANSIENT_RIGHT:
        assert res.delta - res.error > 1
    if res.verdict is Verdict.TRANSIENT_LEFT:
        assert res.delta + res.error < -1
    if res.verdict is Verdict.RECURRENT:
        assert abs(res.delta) + res.error < 1
    if abs(res.delta) + res.error <= 1:
        assert res.verdict not in (Verdict.TRANSIENT_LEFT, Verdict.TRANSIENT_RIGHT)
    assert classify(env.reflect()).verdict is SWAP[res.verdict]


class TestCertificates:
    def test_transient_example_survival(self, te):
        rep = certify_survival(te, [100, 1000, 10_000])
        assert rep.all_positive
        assert "not a proof" in rep.label
        for r in rep.rows:
            assert r.threshold == pytest.approx(1 + 2 / math.log(r.n))

    def test_placebo(self, flat):
        rep = certify_survival(flat, [10, 100])
        assert all(r.margin < 0 for r in rep.rows)
        assert certify_extinction(flat, [10, 100, 1000]).all_positive

    def test_delta_two(self, delta2):
        rep = certify_survival(delta2, [1000, 10_000])
        assert rep.all_positive

    def test_reflected_transient_example(self, te):
        rep = certify_extinction(te.reflect(), [100, 1000])
        assert rep.all_positive
        assert all(r.theta < -0.9 for r in rep.rows)

    def test_transient_example_extinction_fails(self, te):
        assert not certify_extinction(te, [100, 1000]).all_positive

    def test_at_most_one_passes(self, te, flat, delta2):
        for env in (te, flat, delta2, te.reflect()):
            grid = [128, 1024]
            s = certify_survival(env, grid).all_positive
            e = certify_extinction(env, grid).all_positive
            assert not (s and e)

    @pytest.mark.parametrize("grid", [[], [2, 10], [100, 10]])
    def test_bad_grid(self, te, grid):
        with pytest.raises(DomainError):
            certify_survival(te, grid)

    def test_threads_same_result(self, te):
        a = certify_survival(te, [64, 256, 1024], threads=1)
        b = certify_survival(te, [64, 256, 1024], threads=3)
        assert a == b

    def test_evidence_attached(self, te):
        res = classify_with_certificate(te, n_grid=[100, 1000])
        assert [e[0] for e in res.evidence] == [100, 1000]
        assert res.certificate.kind == "survival"
        with pytest.raises(DomainError):
            classify_with_certificate(te, n_grid=[100], kind="other")
