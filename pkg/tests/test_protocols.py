from __future__ import annotations

import random

import pytest
from hypothesis import given, settings, strategies as st

from iiab.adversaries import (
    RandomShapes,
    ScriptedShapes,
    VoteSplitter,
    build_adversary,
    StrategyDescriptor,
    growing_adversary,
    stabilizing_at,
)
from iiab.model import ParticipationSchedule
from iiab.noeq import Split, Uniform
from iiab.protocols import (
    ADOPT,
    COMMIT,
    CommitAdopt,
    CommitAdoptOutput,
    PhasePlan,
    ProbaConciliator,
    commit_adopt,
    det_conciliator,
    det_consensus,
    generic_consensus,
    proba_conciliator,
    run_noeq_task,
)

V, W = b"v", b"w"


def test_commit_adopt_single_processor_commits():
    assert commit_adopt({1: V}) == {1: CommitAdoptOutput(COMMIT, V)}


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["noeq", "iiab"]))
def test_commit_adopt_unanimous_commits(seed, backend):
    n = 5
    sched = ParticipationSchedule.constant(range(1, n + 1), {4, 5}, 2 if backend == "noeq" else 4)
    adv = RandomShapes((V, W))
    if backend == "iiab":
        adv = build_adversary(StrategyDescriptor("random_shapes", {"alphabet": ["v", "w"]}), "iiab")
    outs = commit_adopt({p: V for p in range(1, n + 1)}, sched, adv, backend=backend, seed=seed)
    assert {outs[p] for p in (1, 2, 3)} == {CommitAdoptOutput(COMMIT, V)}


def test_commit_adopt_rejects_bad_kind():
    with pytest.raises(ValueError):
        CommitAdoptOutput("maybe", V)


def test_adopt_follows_second_round_plurality():
    # p2 proposes v after a split first round; p1 sees the proposal and commits,
    # so p3 must adopt v rather than its own w
    sched = ParticipationSchedule.constant({1, 2, 3}, {1}, 2)
    from iiab.protocols import PROPOSE
    from iiab.model import Tagged

    script = [{1: Split(V, frozenset({2}))}, {1: Split(Tagged(PROPOSE, V), frozenset({1}))}]
    outs = commit_adopt({1: V, 2: V, 3: W}, sched, ScriptedShapes(script))
    assert outs[1] == CommitAdoptOutput(COMMIT, V)
    assert outs[3] == CommitAdoptOutput(ADOPT, V)


def test_proba_conciliator_unanimous():
    sched = ParticipationSchedule.constant({1, 2, 3}, {3}, 3)
    outs = proba_conciliator({1: V, 2: V, 3: W}, sched, ScriptedShapes([{3: Uniform(W)}] * 3))
    assert outs[1] == outs[2] == V


def _success_seed(round_count=1):
    for seed in range(1000):
        rng = random.Random(f"{seed}:oracle")
        if all(rng.random() < 0.5 for _ in range(round_count)):
            return seed
    raise AssertionError


def test_proba_conciliator_success_agrees():
    seed = _success_seed()
    cores, _ = run_noeq_task(ProbaConciliator, {1: V, 2: W, 3: W, 4: V, 5: V},
                             ParticipationSchedule.constant(range(1, 6), {5}, 3), VoteSplitter(),
                             seed=seed, oracle_rounds=lambda r: r == 3)
    assert len({c.output for p, c in cores.items() if p != 5}) == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_proba_conciliator_rules(seed):
    cores, _ = run_noeq_task(ProbaConciliator, {1: V, 2: W, 3: W, 4: V, 5: V},
                             ParticipationSchedule.constant(range(1, 6), {4, 5}, 3), VoteSplitter(),
                             seed=seed, oracle_rounds=lambda r: r == 3)
    for c in cores.values():
        assert c.rule in (1, 2, 3)
        if c.rule == 3:
            assert c.output == c.input


def test_det_conciliator_unanimous_pair():
    procs = det_conciliator(2, {1: b"5", 2: b"5"})
    assert {d.output for d in procs.values()} == {b"5"}


def test_det_conciliator_majority_candidate():
    procs = det_conciliator(2, {1: V, 2: V, 3: W})
    assert {d.output for d in procs.values()} == {V}


def test_det_conciliator_fork_is_independent():
    procs = det_conciliator(2, {1: V, 2: V, 3: W})
    d = procs[1].fork()
    d.e.add((9, b"z"))
    assert (9, b"z") not in procs[1].e


def test_phase_plan_boundaries():
    p = PhasePlan("probabilistic", "iiab")
    assert (p.phase("conciliator", 1).start, p.phase("conciliator", 1).end) == (1, 6)
    assert (p.phase("commit_adopt", 1).start, p.phase("commit_adopt", 1).end) == (7, 10)
    assert p.phase("conciliator", 2).start == 11
    assert [r for r in range(1, 21) if p.is_oracle_round(r)] == [5, 15]
    q = PhasePlan("probabilistic", "noeq")
    assert q.commit_adopt_end(1) == 5 and q.is_oracle_round(3)
    d = PhasePlan("deterministic", "iiab")
    assert [(d.phase(k, n).start, d.phase(k, n).end) for n in (1, 2) for k in ("conciliator", "commit_adopt")] == [
        (1, 3), (4, 7), (8, 12), (13, 16)]


def test_phase_plan_rejects_det_on_noeq():
    with pytest.raises(ValueError):
        PhasePlan("deterministic", "noeq")


@pytest.mark.parametrize("backend", ["iiab", "noeq"])
def test_unanimous_decides_after_first_commit_adopt(backend):
    sched = ParticipationSchedule.constant({1, 2, 3}, (), 64)
    run = generic_consensus({p: V for p in (1, 2, 3)}, sched, seed=4, backend=backend)
    assert run.decisions == {p: (10, V) for p in (1, 2, 3)}


def test_oracle_success_in_first_conciliator_decides_at_round_10():
    seed = _success_seed()
    sched = ParticipationSchedule.constant({1, 2, 3, 4}, (), 64)
    run = generic_consensus({1: V, 2: W, 3: V, 4: W}, sched, seed=seed)
    assert {r for r, _ in run.decisions.values()} == {10}


def test_det_consensus_fault_free_decides_by_round_7():
    run = det_consensus({1: b"1", 2: b"1", 3: b"2"}, ParticipationSchedule.constant({1, 2, 3}, (), 64))
    assert run.decisions == {p: (7, b"1") for p in (1, 2, 3)}


@pytest.mark.parametrize("seed", range(8))
def test_det_consensus_single_growing_impersonator(seed):
    sched = growing_adversary({1, 2, 3, 4}, [4], 64, seed=seed)
    adv = build_adversary(StrategyDescriptor("ds_equivocator", {"alphabet": ["1", "2"]}))
    run = det_consensus({1: b"1", 2: b"2", 3: b"1", 4: b"2"}, sched, adv, seed=seed)
    assert not run.undecided
    assert {r for r, _ in run.decisions.values()} <= {7, 16}
    assert len({v for _, v in run.decisions.values()}) == 1


def test_decision_is_sticky():
    sched = ParticipationSchedule.constant({1, 2, 3, 4, 5}, {4, 5}, 80)
    run = generic_consensus({p: bytes([48 + p % 2]) for p in range(1, 6)}, sched, VoteSplitter(), seed=11,
                            backend="noeq", max_rounds=160, stop_when_decided=False)
    for p in (1, 2, 3):
        pr = run.processes[p]
        later = [o.output for o in pr.log if o.kind == "commit_adopt" and o.round > pr.decided_round]
        assert later and all(o == CommitAdoptOutput(COMMIT, pr.decision) for o in later)


settings_soak = settings(max_examples=30, deadline=None)


@settings_soak
@given(st.integers(0, 10**6), st.sampled_from(["silent", "random_injector", "ds_equivocator", "vote_splitter",
                                               "random_shapes"]))
def test_probabilistic_consensus_safe(seed, name):
    sched = stabilizing_at(4, {1, 2, 3, 4, 5}, [5], horizon=200, seed=seed)
    adv = build_adversary(StrategyDescriptor(name, {"alphabet": ["0", "1"]}))
    run = generic_consensus({p: bytes([48 + p % 2]) for p in sched.universe()}, sched, adv, seed=seed,
                            max_rounds=200)
    assert len({v for _, v in run.decisions.values()}) <= 1


@settings_soak
@given(st.integers(0, 10**6), st.sampled_from(["silent", "random_injector", "ds_equivocator", "equivocator_split"]))
def test_deterministic_consensus_safe(seed, name):
    sched = stabilizing_at(3, {1, 2, 3, 4, 5}, [5], horizon=60, seed=seed)
    adv = build_adversary(StrategyDescriptor(name, {"alphabet": ["0", "1"]}))
    run = det_consensus({p: bytes([48 + p % 2]) for p in sched.universe()}, sched, adv, seed=seed, max_rounds=60)
    assert len({v for _, v in run.decisions.values()}) <= 1


def test_commit_adopt_over_relay_commits_unanimous_input():
    sched = ParticipationSchedule.constant({1, 2, 3}, {3}, 2 * CommitAdopt.rounds)
    adv = build_adversary(StrategyDescriptor("noeq_silent"), "iiab")
    outs = commit_adopt({1: W, 2: W, 3: W}, sched, adv, backend="iiab")
    assert outs[1] == outs[2] == CommitAdoptOutput(COMMIT, W)
