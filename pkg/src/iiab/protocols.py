"""Commit-adopt, the two conciliators, and the alternating consensus composition."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Mapping

from .engine import Adversary, EngineAbort, IIABEngine, Trace
from .model import (
    ParticipationSchedule,
    ReceiveView,
    SignedMessage,
    Tagged,
    is_value,
    majority_value,
    payload_to_json,
    plurality_unique,
)
from .noeq import NoEqEngine, SimulatedNoEq

COMMIT = "commit"
ADOPT = "adopt"
PROPOSE = "propose-commit"
NO_COMMIT = "no-commit"


@dataclass(frozen=True)
class CommitAdoptOutput:
    kind: str
    value: bytes

    def __post_init__(self) -> None:
        if self.kind not in (COMMIT, ADOPT):
            raise ValueError(f"kind must be commit or adopt, not {self.kind!r}")
        if not isinstance(self.value, bytes):
            raise TypeError("commit-adopt outputs carry a byte value")

    def as_message(self) -> Tagged:
        return Tagged(self.kind, self.value)


def _tagged_value(tag: str):
    def accept(m: Any) -> bool:
        return isinstance(m, Tagged) and m.tag == tag and is_value(m.body)
    return accept


_is_propose = _tagged_value(PROPOSE)
_is_commit = _tagged_value(COMMIT)


# -- no-eq tasks (local round numbers start at 1) ---------------------------


class CommitAdopt:
    """Two no-eq rounds: broadcast the input, then whether a strict majority was seen.

    Output: commit(v) on a strict majority of propose-commit(v); else adopt(v)
    for the unique most-proposed v; else adopt of the own input.
    """

    rounds = 2

    def __init__(self, value: bytes) -> None:
        self.input = value
        self.majority: bytes | None = None
        self.output: CommitAdoptOutput | None = None

    def broadcast(self, k: int) -> Any:
        if k == 1:
            return self.input
        if self.majority is not None:
            return Tagged(PROPOSE, self.majority)
        return Tagged(NO_COMMIT)

    def deliver(self, k: int, view: ReceiveView, leader: int | None = None) -> CommitAdoptOutput | None:
        if k == 1:
            self.majority = majority_value(view, accept=is_value)
            return None
        pc = majority_value(view, accept=_is_propose)
        if pc is not None:
            out = CommitAdoptOutput(COMMIT, pc.body)
        else:
            # the plurality is over second-round proposals; a plurality of
            # first-round values lets an impersonated sender split the outputs
            top = plurality_unique(view, accept=_is_propose)
            out = CommitAdoptOutput(ADOPT, top.body if top is not None else self.input)
        self.output = out
        return out


class ProbaConciliator:
    """Commit-adopt followed by one round that falls back on the oracle's leader."""

    rounds = 3

    def __init__(self, value: bytes) -> None:
        self.input = value
        self.ca = CommitAdopt(value)
        self.output: bytes | None = None
        self.rule: int | None = None

    def broadcast(self, k: int) -> Any:
        if k <= 2:
            return self.ca.broadcast(k)
        return self.ca.output.as_message()

    def deliver(self, k: int, view: ReceiveView, leader: int | None = None) -> bytes | None:
        if k <= 2:
            self.ca.deliver(k, view, leader)
            return None
        c = majority_value(view, accept=_is_commit)
        if c is not None:
            self.output, self.rule = c.body, 1
            return self.output
        m = view.message(leader) if leader is not None else None
        if isinstance(m, Tagged) and m.tag in (COMMIT, ADOPT) and is_value(m.body):
            self.output, self.rule = m.body, 2
        else:
            self.output, self.rule = self.input, 3
        return self.output


# -- deterministic conciliator (native IIAB, global round numbers) ----------


class DetConciliator:
    """Authenticated relay for N rounds, then one majority round over the candidates.

    ``e`` collects (origin, value) pairs from valid chains; a pair is added
    whenever it is new, so a processor that signed two values contributes both.
    """

    def __init__(self, me: int, value: bytes, n: int, start: int = 1) -> None:
        if n < 1:
            raise ValueError("N must be at least 1")
        self.me = me
        self.input = value
        self.n = n
        self.start = start
        self.e: set[tuple[int, bytes]] = set()
        self.e_at_n: frozenset | None = None
        self.relay: list[SignedMessage] = []
        self.output: bytes | None = None

    @property
    def rounds(self) -> int:
        return self.n + 1

    def fork(self) -> DetConciliator:
        """Independent copy of the current state, for branching checks."""
        d = DetConciliator(self.me, self.input, self.n, self.start)
        d.e = set(self.e)
        d.e_at_n = self.e_at_n
        d.relay = list(self.relay)
        d.output = self.output
        return d

    def _valid_chain(self, m: Any, j: int) -> bool:
        if not isinstance(m, SignedMessage):
            return False
        top = self.start + j - 1
        signers = set()
        cur: Any = m
        for i in range(j):
            if not isinstance(cur, SignedMessage) or cur.round != top - i or cur.signer in signers:
                return False
            signers.add(cur.signer)
            cur = cur.content
        return is_value(cur)

    def candidate(self) -> bytes:
        if not self.e:
            raise EngineAbort(f"processor {self.me} has no (processor, value) pairs at the final round")
        procs = {p for p, _ in self.e}
        holders: dict[bytes, set[int]] = {}
        for p, v in self.e:
            holders.setdefault(v, set()).add(p)
        for v in sorted(holders):
            if 2 * len(holders[v]) > len(procs):
                return v
        return min(holders)

    def send(self, r: int) -> frozenset:
        j = r - self.start + 1
        if j == 1:
            return frozenset((SignedMessage(self.me, r, self.input),))
        if j <= self.n:
            me = self.me
            return frozenset(SignedMessage(me, r, c) for c in self.relay
                             if all(x.signer != me for x in c.chain()))
        return frozenset((self.candidate(),))

    def receive(self, r: int, view: ReceiveView, leader: int | None = None) -> bytes | None:
        j = r - self.start + 1
        if j <= self.n:
            chains = {m for ms in view.links.values() for m in ms if self._valid_chain(m, j)}
            self.relay = list(chains)
            for c in chains:
                origin = c.chain()[-1]
                self.e.add((origin.signer, origin.content))
            if j == self.n:
                self.e_at_n = frozenset(self.e)
                self.relay = []
            return None
        v = majority_value(view, accept=is_value)
        self.output = v if v is not None else self.candidate()
        return self.output


# -- phase plan --------------------------------------------------------------


@dataclass(frozen=True)
class Phase:
    kind: str  # "conciliator" | "commit_adopt"
    index: int
    start: int
    length: int
    simulated: bool  # a no-eq task carried over two IIAB rounds per step

    @property
    def end(self) -> int:
        return self.start + self.length - 1


class PhasePlan:
    """Maps engine rounds to C[1], CA[1], C[2], ... using the round number alone.

    ``backend="iiab"`` counts IIAB rounds; ``backend="noeq"`` counts native
    no-eq rounds and only supports the probabilistic conciliator.
    """

    def __init__(self, conciliator: str = "probabilistic", backend: str = "iiab") -> None:
        if conciliator not in ("probabilistic", "deterministic"):
            raise ValueError(f"unknown conciliator {conciliator!r}")
        if backend not in ("iiab", "noeq"):
            raise ValueError(f"unknown backend {backend!r}")
        if conciliator == "deterministic" and backend == "noeq":
            raise ValueError("the deterministic conciliator needs the IIAB backend")
        self.conciliator = conciliator
        self.backend = backend
        self._phases: list[Phase] = []
        self.locate = lru_cache(maxsize=4096)(self._locate)

    def length(self, kind: str, n: int) -> int:
        sim = 2 if self.backend == "iiab" else 1
        if kind == "commit_adopt":
            return CommitAdopt.rounds * sim
        if self.conciliator == "probabilistic":
            return ProbaConciliator.rounds * sim
        return 2 ** n + 1

    def _extend(self) -> None:
        nxt = self._phases[-1].end + 1 if self._phases else 1
        if not self._phases or self._phases[-1].kind == "commit_adopt":
            n = len(self._phases) // 2 + 1
            sim = self.backend == "iiab" and self.conciliator == "probabilistic"
            self._phases.append(Phase("conciliator", n, nxt, self.length("conciliator", n), sim))
        else:
            n = self._phases[-1].index
            self._phases.append(Phase("commit_adopt", n, nxt, self.length("commit_adopt", n),
                                      self.backend == "iiab"))

    def phase(self, kind: str, n: int) -> Phase:
        i = 2 * (n - 1) + (kind == "commit_adopt")
        while len(self._phases) <= i:
            self._extend()
        return self._phases[i]

    def _locate(self, r: int) -> tuple[Phase, int]:
        if r < 1:
            raise ValueError("rounds start at 1")
        while not self._phases or self._phases[-1].end < r:
            self._extend()
        lo, hi = 0, len(self._phases) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if self._phases[mid].end < r:
                lo = mid + 1
            else:
                hi = mid
        ph = self._phases[lo]
        return ph, r - ph.start + 1

    def noeq_step(self, r: int) -> tuple[Phase, int, str | None]:
        """Phase, task-local no-eq step (or IIAB step for native phases), and "A"/"B" when simulated."""
        ph, local = self.locate(r)
        if ph.simulated:
            return ph, (local + 1) // 2, "A" if local % 2 else "B"
        return ph, local, None

    def is_oracle_round(self, r: int) -> bool:
        if self.conciliator != "probabilistic":
            return False
        ph, step, sub = self.noeq_step(r)
        return ph.kind == "conciliator" and step == 3 and sub != "B"

    def commit_adopt_end(self, n: int) -> int:
        return self.phase("commit_adopt", n).end

    def to_json(self) -> dict:
        return {"conciliator": self.conciliator, "backend": self.backend}


# -- consensus processes -----------------------------------------------------


class _NativeTask:
    """Shifts a no-eq task's local rounds to engine rounds starting at ``start``."""

    def __init__(self, inner: Any, start: int) -> None:
        self.inner = inner
        self.start = start

    def broadcast(self, r: int) -> Any:
        return self.inner.broadcast(r - self.start + 1)

    def deliver(self, r: int, view: ReceiveView, leader: int | None) -> Any:
        return self.inner.deliver(r - self.start + 1, view, leader)


@dataclass
class PhaseOutput:
    kind: str
    index: int
    round: int
    output: Any
    rule: int | None = None


class ConsensusProcess:
    """One processor of the alternating composition; speaks both engine interfaces."""

    def __init__(self, me: int, value: bytes, plan: PhasePlan, *, trace: Trace | None = None,
                 universe: tuple[int, ...] | None = None) -> None:
        if not is_value(value):
            raise TypeError("consensus inputs are byte values")
        self.me = me
        self.input = value
        self.plan = plan
        self.trace = trace
        self.universe = universe
        self.next_input = value
        self.phase: Phase | None = None
        self.task: Any = None
        self.core: Any = None
        self.decision: bytes | None = None
        self.decided_round: int | None = None
        self.log: list[PhaseOutput] = []

    def _task_at(self, r: int) -> Any:
        ph, _ = self.plan.locate(r)
        if ph is not self.phase:
            self.phase = ph
            v = self.next_input
            if ph.kind == "commit_adopt":
                self.core = CommitAdopt(v)
            elif self.plan.conciliator == "probabilistic":
                self.core = ProbaConciliator(v)
            else:
                self.core = DetConciliator(self.me, v, 2 ** ph.index, ph.start)
            if isinstance(self.core, DetConciliator):
                self.task = self.core
            elif self.plan.backend == "iiab":
                self.task = SimulatedNoEq(self.me, self.core, ph.start, trace=self.trace, universe=self.universe)
            else:
                self.task = _NativeTask(self.core, ph.start)
        return self.task

    def _finish(self, r: int, out: Any, engine_round: int) -> bytes | None:
        ph = self.phase
        rule = getattr(self.core, "rule", None)
        self.log.append(PhaseOutput(ph.kind, ph.index, engine_round, out, rule))
        if self.trace is not None and self.trace.links:
            wire = out.as_message() if isinstance(out, CommitAdoptOutput) else out
            self.trace.emit(type="phase_output", round=engine_round, processor=self.me, phase=ph.kind,
                            index=ph.index, output=payload_to_json(wire), rule=rule)
        if isinstance(out, CommitAdoptOutput):
            self.next_input = out.value
            if out.kind == COMMIT and self.decision is None:
                self.decision = out.value
                self.decided_round = engine_round
                return out.value
            return None
        self.next_input = out
        return None

    # IIAB interface
    def send(self, r: int) -> frozenset:
        return self._task_at(r).send(r)

    def receive(self, r: int, view: ReceiveView, leader: int | None) -> bytes | None:
        out = self._task_at(r).receive(r, view, leader)
        return None if out is None else self._finish(r, out, r)

    # native no-eq interface
    def broadcast(self, r: int) -> Any:
        return self._task_at(r).broadcast(r)

    def deliver(self, r: int, view: ReceiveView, leader: int | None) -> bytes | None:
        out = self._task_at(r).deliver(r, view, leader)
        return None if out is None else self._finish(r, out, 2 * r)


@dataclass
class ConsensusRun:
    """Outcome of one consensus execution; rounds are IIAB rounds."""

    plan: PhasePlan
    processes: dict[int, ConsensusProcess]
    rounds_run: int
    engine: Any = field(repr=False, default=None)

    @property
    def decisions(self) -> dict[int, tuple[int, bytes]]:
        return {p: (pr.decided_round, pr.decision) for p, pr in self.processes.items() if pr.decision is not None}

    @property
    def undecided(self) -> list[int]:
        return [p for p, pr in self.processes.items() if pr.decision is None]


def _check_inputs(inputs: Mapping[int, bytes], universe) -> None:
    missing = set(universe) - set(inputs)
    if missing:
        raise ValueError(f"no input for materialized processors {sorted(missing)}")


def generic_consensus(inputs: Mapping[int, bytes], schedule: ParticipationSchedule,
                      adversary: Any = None, *, conciliator: str = "probabilistic", backend: str = "iiab",
                      seed: int = 0, max_rounds: int = 512, trace: Trace | None = None,
                      rushing: bool = True, stop_when_decided: bool = True) -> ConsensusRun:
    """Run C[1], CA[1], C[2], ... until everyone decided or ``max_rounds`` IIAB rounds passed.

    Every key of ``inputs`` is a materialized processor; keys never online are
    offline observers.  On the no-eq backend the schedule is indexed by no-eq
    rounds, each worth two IIAB rounds.
    """
    plan = PhasePlan(conciliator, backend)
    _check_inputs(inputs, schedule.universe())
    universe = tuple(sorted(inputs))
    procs = {p: ConsensusProcess(p, inputs[p], plan, trace=trace, universe=universe) for p in universe}
    if backend == "iiab":
        cap = min(max_rounds, schedule.horizon)
        engine: Any = IIABEngine(schedule.truncated(cap), procs, adversary, seed, rushing=rushing,
                                 oracle_rounds=plan.is_oracle_round, plan=plan, trace=trace)
    else:
        cap = min(max_rounds // 2, schedule.horizon)
        engine = NoEqEngine(schedule.truncated(cap), procs, adversary, seed, rushing=rushing,
                            oracle_rounds=plan.is_oracle_round, plan=plan, trace=trace)

    def done(e: Any) -> bool:
        return len(e.outputs) == len(procs)

    engine.run(until=done if stop_when_decided else None)
    scale = 2 if backend == "noeq" else 1
    return ConsensusRun(plan, procs, engine.round * scale, engine)


def det_consensus(inputs: Mapping[int, bytes], schedule: ParticipationSchedule, adversary: Adversary | None = None,
                  **kw: Any) -> ConsensusRun:
    return generic_consensus(inputs, schedule, adversary, conciliator="deterministic", backend="iiab", **kw)


# -- standalone task runners --------------------------------------------------


def run_noeq_task(factory, inputs: Mapping[int, bytes], schedule: ParticipationSchedule | None = None,
                  adversary: Any = None, *, backend: str = "noeq", seed: int = 0,
                  oracle_rounds=None, trace: Trace | None = None) -> tuple[dict[int, Any], Any]:
    """Run one no-eq task instance per processor; returns (instances, engine)."""
    rounds = factory(b"").rounds
    if schedule is None:
        schedule = ParticipationSchedule.constant(inputs, (), rounds * (2 if backend == "iiab" else 1))
    _check_inputs(inputs, schedule.universe())
    universe = tuple(sorted(inputs))
    cores = {p: factory(inputs[p]) for p in universe}
    if backend == "noeq":
        engine: Any = NoEqEngine(schedule, cores, adversary, seed, oracle_rounds=oracle_rounds, trace=trace)
    else:
        procs = {p: SimulatedNoEq(p, cores[p], 1, trace=trace, universe=universe) for p in universe}
        engine = IIABEngine(schedule, procs, adversary, seed, oracle_rounds=oracle_rounds, trace=trace)
    engine.run()
    return cores, engine


def commit_adopt(inputs: Mapping[int, bytes], schedule: ParticipationSchedule | None = None,
                 adversary: Any = None, **kw: Any) -> dict[int, CommitAdoptOutput]:
    cores, _ = run_noeq_task(CommitAdopt, inputs, schedule, adversary, **kw)
    return {p: c.output for p, c in cores.items()}


def proba_conciliator(inputs: Mapping[int, bytes], schedule: ParticipationSchedule | None = None,
                      adversary: Any = None, *, backend: str = "noeq", **kw: Any) -> dict[int, bytes]:
    oracle = (lambda r: r == 3) if backend == "noeq" else (lambda r: r == 5)
    cores, _ = run_noeq_task(ProbaConciliator, inputs, schedule, adversary, backend=backend,
                             oracle_rounds=oracle, **kw)
    return {p: c.output for p, c in cores.items()}


def det_conciliator(n: int, inputs: Mapping[int, bytes], schedule: ParticipationSchedule | None = None,
                    adversary: Adversary | None = None, *, seed: int = 0,
                    trace: Trace | None = None) -> dict[int, DetConciliator]:
    """Run one deterministic conciliator from round 1; returns the per-processor instances."""
    if schedule is None:
        schedule = ParticipationSchedule.constant(inputs, (), n + 1)
    _check_inputs(inputs, schedule.universe())
    procs = {p: DetConciliator(p, inputs[p], n, 1) for p in sorted(inputs)}
    IIABEngine(schedule.truncated(n + 1), procs, adversary, seed, trace=trace).run()
    return procs
