from __future__ import annotations

import itertools

import pytest
from hypothesis import given, settings, strategies as st

from iiab.adversaries import EquivocatorSplit, RandomInjector, RandomShapes, ScriptedInjections
from iiab.checker import shape_count, shape_space
from iiab.engine import EngineAbort
from iiab.model import LAMBDA, ParticipationSchedule, SignedMessage
from iiab.noeq import (
    INVALID,
    FixedBroadcast,
    LambdaOnly,
    NoEqAdversary,
    NoEqEngine,
    Silent,
    Split,
    Uniform,
    classify_delivery_profile,
    shape_delivery,
    shape_from_json,
    shape_to_json,
    simulate_noeq_round,
    validate_shape,
)


def run_native(sched, payloads, adversary=None, seed=0):
    procs = {p: FixedBroadcast(payloads.get(p, b"")) for p in sorted(sched.universe())}
    NoEqEngine(sched, procs, adversary, seed).run()
    return {p: pr.delivered[1] for p, pr in procs.items()}


def test_honest_round_everyone_sees_everything():
    views = run_native(ParticipationSchedule.constant({1, 2}, (), 1), {1: b"a", 2: b"b"})
    assert all(v.message(1) == b"a" and v.message(2) == b"b" for v in views.values())


def test_split_and_lambda_only_deliveries():
    assert shape_delivery(Split(b"m", frozenset({1})), 1) == b"m"
    assert shape_delivery(Split(b"m", frozenset({1})), 2) is LAMBDA
    assert shape_delivery(LambdaOnly(frozenset({1})), 1) is LAMBDA
    assert shape_delivery(LambdaOnly(frozenset({1})), 2) is None
    assert shape_delivery(Silent(), 1) is None
    assert shape_delivery(Uniform(b"m"), 3) == b"m"


def test_shape_validation():
    recv = {1, 2, 3}
    assert validate_shape(Split(b"m", frozenset()), recv)
    assert validate_shape(Split(b"m", frozenset(recv)), recv)
    assert validate_shape(Uniform(LAMBDA), recv)
    assert validate_shape(LambdaOnly(frozenset({9})), recv)
    assert validate_shape(Split(b"m", frozenset({1})), recv) is None


@pytest.mark.parametrize("shape", [Silent(), Uniform(b"m"), Split(b"m", frozenset({1, 3})), LambdaOnly(frozenset({2}))])
def test_shape_json_roundtrip(shape):
    assert shape_from_json(shape_to_json(shape)) == shape


def _brute_force_profiles(k, messages):
    """Every receiver -> {m, λ, nothing} map that one no-eq sender can produce."""
    outcomes = list(messages) + [LAMBDA, None]
    out = set()
    for prof in itertools.product(outcomes, repeat=k):
        msgs = {m for m in prof if m is not None and m is not LAMBDA}
        if len(msgs) > 1 or (msgs and None in prof):
            continue
        out.add(prof)
    return out


@pytest.mark.parametrize("k,m", [(1, 1), (2, 1), (2, 2), (3, 1), (3, 2), (4, 3)])
def test_shape_space_matches_brute_force(k, m):
    msgs = [bytes([65 + i]) for i in range(m)]
    recv = list(range(1, k + 1))
    space = shape_space(recv, msgs)
    profiles = {tuple(shape_delivery(s, q) for q in recv) for s in space}
    assert len(space) == len(profiles) == shape_count(k, m)
    assert profiles == _brute_force_profiles(k, msgs)


def test_two_receiver_single_message_count():
    # Silent, Uniform, two Splits, three nonempty λ-sets
    assert shape_count(2, 1) == 7


def test_missing_shape_defaults_to_silent():
    class Quiet(NoEqAdversary):
        def decide(self, ctx):
            return {}

    views = run_native(ParticipationSchedule.constant({1, 2, 3}, {3}, 1), {1: b"a", 2: b"b", 3: b"c"}, Quiet())
    assert all(3 not in v.heard_of for v in views.values())


def test_shapes_for_well_behaved_processor_abort():
    class Rogue(NoEqAdversary):
        def decide(self, ctx):
            return {1: Uniform(b"x")}

    with pytest.raises(EngineAbort):
        run_native(ParticipationSchedule.constant({1, 2, 3}, {3}, 1), {1: b"a", 2: b"b"}, Rogue())


def test_malformed_shape_aborts():
    class Bad(NoEqAdversary):
        def decide(self, ctx):
            return {3: Split(b"x", frozenset({1, 2, 3}))}

    with pytest.raises(EngineAbort):
        run_native(ParticipationSchedule.constant({1, 2, 3}, {3}, 1), {1: b"a", 2: b"b"}, Bad())


def test_relay_honest_pair_delivers_both():
    views = simulate_noeq_round(ParticipationSchedule.constant({1, 2}, (), 2), {1: b"a", 2: b"b"})
    assert {classify_delivery_profile(views, s) for s in (1, 2)} == {2}
    assert views[1].message(2) == b"b"


def test_round_a_equivocation_becomes_lambda():
    sched = ParticipationSchedule.from_sets([({1, 2, 3}, {1}), ({1, 2, 3}, ())])
    adv = ScriptedInjections([{1: {2: {SignedMessage(1, 1, b"v")}, 3: {SignedMessage(1, 1, b"v'")}}}])
    views = simulate_noeq_round(sched, {1: b"v", 2: b"v", 3: b"v'"}, adv)
    assert views[2].message(1) is LAMBDA and views[3].message(1) is LAMBDA


def test_equivocating_split_behind_relay_has_no_double_majority():
    from iiab.model import majority_value

    sched = ParticipationSchedule.constant({1, 2, 3}, {1}, 2)
    views = simulate_noeq_round(sched, {1: b"v", 2: b"v", 3: b"v'"}, EquivocatorSplit())
    winners = {majority_value(views[p]) for p in (2, 3)} - {None}
    assert len(winners) <= 1


def test_classifier():
    from iiab.model import ReceiveView

    def prof(*ms):
        return {q: ReceiveView.noeq(1, q, {} if m is None else {9: m}) for q, m in enumerate(ms, 1)}

    assert classify_delivery_profile(prof(None, None), 9) == 1
    assert classify_delivery_profile(prof(b"m", b"m"), 9) == 2
    assert classify_delivery_profile(prof(b"m", LAMBDA), 9) == 3
    assert classify_delivery_profile(prof(LAMBDA, None), 9) == 4
    assert classify_delivery_profile(prof(b"m", b"n"), 9) == INVALID
    assert classify_delivery_profile(prof(b"m", None), 9) == INVALID


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([3, 4, 5]), st.integers(0, 2))
def test_relay_under_random_injections_is_a_noeq_round(seed, n, nf):
    nf = min(nf, (n - 1) // 2)
    imp = set(range(n - nf + 1, n + 1))
    sched = ParticipationSchedule.constant(set(range(1, n + 1)), imp, 2)
    payloads = {p: bytes([96 + p % 2]) for p in range(1, n + 1)}
    views = simulate_noeq_round(sched, payloads, RandomInjector((b"a", b"b", b"z"), 0.8), seed)
    for s in range(1, n + 1):
        case = classify_delivery_profile(views, s)
        assert case != INVALID
        if s not in imp:
            assert case == 2 and all(v.message(s) == payloads[s] for v in views.values())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_native_random_shapes_never_double_majority(seed):
    from iiab.checker import check_thm2

    sched = ParticipationSchedule.constant({1, 2, 3, 4, 5}, {4, 5}, 1)
    views = run_native(sched, {1: b"a", 2: b"b", 3: b"a"}, RandomShapes((b"a", b"b")), seed)
    assert check_thm2(views.values())
