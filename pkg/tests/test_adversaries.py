from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from iiab.adversaries import (
    IIAB_STRATEGIES,
    NOEQ_STRATEGIES,
    LeaderSplitter,
    LeaderWithholder,
    LowestLeader,
    RandomInjector,
    ScriptedInjections,
    ScriptedShapes,
    ShapeRealizer,
    StrategyDescriptor,
    build_adversary,
    churn,
    constant,
    growing_adversary,
    schedule_generators,
    stabilizing_at,
    strategy_names,
)
from iiab.checker import shape_space
from iiab.engine import IIABEngine, Ledger, RoundContext
from iiab.model import ParticipationSchedule, SignedMessage, is_growing, validate_schedule
from iiab.noeq import LambdaOnly, Silent, Split, Uniform, shape_delivery, simulate_noeq_round

PAYLOADS = {1: b"a", 2: b"b", 3: b"c"}


def test_registry_lists_every_strategy():
    assert set(strategy_names()) == set(IIAB_STRATEGIES) | set(NOEQ_STRATEGIES)
    for name in ("silent", "equivocator_split", "random_injector", "ds_equivocator", "noeq_silent",
                 "random_shapes", "vote_splitter"):
        assert build_adversary(StrategyDescriptor(name)) is not None


def test_unknown_strategy_is_rejected():
    with pytest.raises(ValueError, match="unknown strategy"):
        build_adversary(StrategyDescriptor("nope"))


def test_raw_strategy_cannot_drive_noeq_backend():
    with pytest.raises(ValueError):
        build_adversary(StrategyDescriptor("equivocator_split"), "noeq")


def test_noeq_strategy_on_iiab_is_realized():
    assert isinstance(build_adversary(StrategyDescriptor("vote_splitter"), "iiab"), ShapeRealizer)


def test_descriptor_json():
    d = StrategyDescriptor("random_injector", {"rate": 0.3})
    assert StrategyDescriptor.from_json(d.to_json()) == d


@pytest.mark.parametrize("shape", shape_space([1, 2, 3], [b"m"]))
def test_realizer_delivers_every_shape(shape):
    sched = ParticipationSchedule.constant({1, 2, 3}, {3}, 2)
    adv = ShapeRealizer(ScriptedShapes([{3: shape}]))
    views = simulate_noeq_round(sched, PAYLOADS, adv)
    for q, v in views.items():
        assert v.message(3) == shape_delivery(shape, q)
        assert v.message(1) == b"a" and v.message(2) == b"b"


@pytest.mark.parametrize("shape,expected", [
    (Split(b"m", frozenset({1})), Uniform(b"m")),
    (LambdaOnly(frozenset({1})), Silent()),
    (Uniform(b"m"), Uniform(b"m")),
])
def test_realizer_degrades_without_round_b_impersonation(shape, expected):
    sched = ParticipationSchedule.from_sets([({1, 2, 3}, {3}), ({1, 2, 3}, ())])
    views = simulate_noeq_round(sched, PAYLOADS, ShapeRealizer(ScriptedShapes([{3: shape}])))
    assert all(v.message(3) == shape_delivery(expected, q) for q, v in views.items())


def test_scripted_shapes_json_roundtrip():
    s = ScriptedShapes([{3: Split(b"m", frozenset({1}))}, {3: LambdaOnly(frozenset())}])
    assert ScriptedShapes.from_json(s.to_json()).script == s.script


def test_scripted_shapes_validates():
    with pytest.raises(ValueError):
        ScriptedShapes([{3: Split(b"m", frozenset({1, 2, 3}))}], receivers=[1, 2, 3])


def test_scripted_injections_json_roundtrip():
    s = ScriptedInjections([{1: {2: [SignedMessage(1, 1, b"x")]}}, {}])
    assert ScriptedInjections.from_json(s.to_json()).script == s.script


def _ctx(online, imp, procs=None, honest=None):
    sched = ParticipationSchedule.constant(online, imp, 1)
    return RoundContext(1, sched[1], tuple(procs or sorted(online)), sched, honest, [], Ledger(), None)


def test_leader_policies():
    ctx = _ctx({1, 2, 3}, {1})
    assert LowestLeader().choose(ctx) == 2
    assert set(LowestLeader().assign(ctx).values()) == {2}
    wh = LeaderWithholder().assign(ctx)
    assert len(set(wh.values())) == 3
    ctx = _ctx({1, 2, 3}, {1}, honest={2: frozenset({b"v"}), 3: frozenset({b"w"})})
    assert set(LeaderSplitter().assign(ctx).values()) == {2, 3}


def test_constant_schedule():
    s = constant({1, 2, 3}, {1}, 4)
    assert validate_schedule(s) == [] and is_growing(s)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_churn_is_valid(seed):
    s = churn(12, 3, pool=range(1, 7), seed=seed)
    assert validate_schedule(s) == []
    assert all(len(s.online(r)) == 3 for r in range(1, 13))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 5))
def test_fresh_churn_never_reuses_a_processor(seed, window):
    s = churn(10, window, fresh=True, impersonated=2, seed=seed)
    seen = set()
    for r in range(1, 11):
        assert not (s.online(r) & seen)
        seen |= s.online(r)


def test_churn_is_not_growing_in_general():
    assert not all(is_growing(churn(20, 3, pool=range(1, 7), seed=s)) for s in range(20))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 12), st.integers(0, 2))
def test_stabilizing_schedule(seed, R, k):
    online = {1, 2, 3, 4, 5}
    s = stabilizing_at(R, online, [5, 4][:k], horizon=R + 10, seed=seed)
    assert validate_schedule(s) == [] and is_growing(s)
    assert all(s.online(r) == online for r in range(R, R + 11))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_growing_adversary_schedule(seed):
    s = growing_adversary({1, 2, 3, 4, 5}, [4, 5], 8, seed=seed)
    assert validate_schedule(s) == [] and is_growing(s)


def test_schedule_generator_dispatch():
    with pytest.raises(ValueError):
        schedule_generators("sometimes", horizon=3)
    assert schedule_generators("constant", online=[1, 2], horizon=2).horizon == 2


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_random_injector_is_seed_deterministic(seed):
    class Echo:
        def __init__(self, me):
            self.me = me

        def send(self, r):
            return {SignedMessage(self.me, r, b"x")}

        def receive(self, r, view, leader):
            return None

    def run():
        sched = ParticipationSchedule.constant({1, 2, 3, 4, 5}, {4, 5}, 3)
        eng = IIABEngine(sched, {p: Echo(p) for p in range(1, 6)}, RandomInjector((b"a", b"b")), seed)
        eng.run()
        return [sorted(map(repr, h.injected.items())) for h in eng.state.history]

    assert run() == run()
