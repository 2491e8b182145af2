"""Round executor for the IIAB model: send phase, adversary injection, full delivery."""

from __future__ import annotations

import base64
import json
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

from .model import (
    ParticipationSchedule,
    ReceiveView,
    RoundParticipation,
    SignedMessage,
    Tagged,
    payload_to_json,
    sorted_payloads,
    validate_schedule,
)

Links = dict[int, frozenset]
# impersonated processor -> receiver -> injected messages
AdversaryDecision = Mapping[int, Mapping[int, frozenset]]


class EngineAbort(RuntimeError):
    """A run broke a model rule (bad strategy, bad protocol, bad schedule)."""

    def __init__(self, message: str, violations: Sequence[Any] = ()):
        super().__init__(message)
        self.violations = list(violations)


class Ledger:
    """Earliest round in which each signed message appeared on any link."""

    def __init__(self) -> None:
        self.seen: dict[SignedMessage, int] = {}

    def __contains__(self, sm: SignedMessage) -> bool:
        return sm in self.seen

    def __len__(self) -> int:
        return len(self.seen)

    def first_round(self, sm: SignedMessage) -> int | None:
        return self.seen.get(sm)

    def record(self, payload: Any, round: int) -> None:
        stack = [payload]
        seen = self.seen
        while stack:
            p = stack.pop()
            if isinstance(p, SignedMessage):
                if p in seen:
                    continue  # nested layers were recorded with it
                seen[p] = round
                stack.append(p.content)
            elif isinstance(p, frozenset):
                stack.extend(p)
            elif isinstance(p, Tagged) and p.body is not None:
                stack.append(p.body)

    def sent_before(self, sm: SignedMessage, round: int) -> bool:
        r = self.seen.get(sm)
        return r is not None and r < round


@dataclass(frozen=True)
class InjectionViolation:
    sender: int
    receiver: int | None
    message: Any
    reason: str


def _check_signed_tree(payload: Any, ok_fresh: Callable[[SignedMessage], bool],
                       ok_replay: Callable[[SignedMessage], bool]) -> list[SignedMessage]:
    bad = []
    stack = [payload]
    while stack:
        p = stack.pop()
        if isinstance(p, SignedMessage):
            if ok_replay(p):
                continue
            if ok_fresh(p):
                stack.append(p.content)
            else:
                bad.append(p)
        elif isinstance(p, frozenset):
            stack.extend(p)
        elif isinstance(p, Tagged) and p.body is not None:
            stack.append(p.body)
    return bad


def validate_injection(ledger: Ledger, round: int, impersonated: Iterable[int],
                       decision: AdversaryDecision) -> list[InjectionViolation]:
    """Every forged signed occurrence in ``decision``; empty means the move is legal."""
    imp = frozenset(impersonated)
    out = []
    for sender in sorted(decision):
        if sender not in imp:
            out.append(InjectionViolation(sender, None, None, "sender not impersonated this round"))
            continue
        for receiver in sorted(decision[sender]):
            for msg in sorted_payloads(decision[sender][receiver]):
                bad = _check_signed_tree(
                    msg,
                    ok_fresh=lambda sm: sm.signer in imp and sm.round == round,
                    ok_replay=lambda sm: ledger.sent_before(sm, round),
                )
                for sm in bad:
                    out.append(InjectionViolation(
                        sender, receiver, sm,
                        f"<{sm.signer},{sm.round},..> neither fresh from an impersonated signer "
                        f"in round {round} nor sent in an earlier round"))
    return out


@dataclass(frozen=True)
class OracleDraw:
    round: int
    success: bool
    leaders: Mapping[int, int]


@dataclass
class RoundRecord:
    round: int
    participation: RoundParticipation
    honest: Mapping[int, frozenset]
    injected: AdversaryDecision
    draw: OracleDraw | None = None

    def link(self, sender: int, receiver: int) -> frozenset:
        if sender in self.honest:
            return self.honest[sender]
        return self.injected.get(sender, {}).get(receiver, frozenset())


@dataclass
class RoundContext:
    """Everything an adversary may observe when choosing its round-r move."""

    round: int
    participation: RoundParticipation
    processors: tuple[int, ...]
    schedule: ParticipationSchedule
    honest_sends: Mapping[int, frozenset] | None
    history: Sequence[RoundRecord]
    ledger: Ledger
    rng: random.Random
    draw: OracleDraw | None = None
    plan: Any = None


class Adversary:
    """Base IIAB strategy: injects nothing and lets the oracle pick the lowest well-behaved id."""

    name = "silent"

    def inject(self, ctx: RoundContext) -> AdversaryDecision:
        return {}

    def choose_leader(self, ctx: RoundContext) -> int:
        return min(ctx.participation.well_behaved)

    def assign_leaders(self, ctx: RoundContext) -> dict[int, int]:
        lead = min(ctx.participation.well_behaved)
        return {p: lead for p in ctx.processors}


class IIABProtocol(Protocol):
    def send(self, round: int) -> Iterable[Any]: ...

    def receive(self, round: int, view: ReceiveView, leader: int | None) -> Any: ...


def draw_leaders(rng: random.Random, round: int, schedule: ParticipationSchedule,
                 adversary: Adversary, ctx: RoundContext) -> OracleDraw:
    """Fair coin; on success one well-behaved leader for everyone, otherwise anything goes."""
    success = rng.random() < 0.5
    well = schedule.well_behaved(round)
    if success:
        lead = adversary.choose_leader(ctx)
        if lead not in well:
            raise EngineAbort(f"oracle success in round {round} but leader {lead} is not well-behaved")
        leaders = {p: lead for p in ctx.processors}
    else:
        leaders = dict(adversary.assign_leaders(ctx))
        missing = set(ctx.processors) - set(leaders)
        if missing:
            raise EngineAbort(f"oracle failure in round {round}: no leader for {sorted(missing)}")
    return OracleDraw(round, success, leaders)


def b64(v: bytes) -> str:
    return base64.b64encode(v).decode("ascii")


class Trace:
    """JSON-lines trace.  ``links=False`` keeps only outputs, draws and simulated deliveries."""

    def __init__(self, links: bool = True) -> None:
        self.links = links
        self.records: list[dict] = []

    def emit(self, **rec: Any) -> None:
        self.records.append(rec)

    def output(self, round: int, processor: int, value: Any) -> None:
        if isinstance(value, bytes):
            self.emit(type="decision", round=round, processor=processor, decision=b64(value))
        else:
            self.emit(type="output", round=round, processor=processor, output=payload_to_json(_wire(value)))

    def dumps(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in self.records)


def _wire(value: Any) -> Any:
    to_msg = getattr(value, "as_message", None)
    return to_msg() if to_msg else value


@dataclass
class EngineState:
    round: int = 0
    ledger: Ledger = field(default_factory=Ledger)
    history: list[RoundRecord] = field(default_factory=list)
    outputs: dict[int, tuple[int, Any]] = field(default_factory=dict)


class IIABEngine:
    """Deterministic executor: same schedule, protocols, adversary and seed give the same trace.

    ``protocols`` maps every materialized processor to its state machine;
    processors not online in any round are offline observers.
    """

    def __init__(self, schedule: ParticipationSchedule, protocols: Mapping[int, IIABProtocol],
                 adversary: Adversary | None = None, seed: int = 0, *, rushing: bool = True,
                 oracle_rounds: Callable[[int], bool] | None = None, plan: Any = None,
                 trace: Trace | None = None, check_honest: bool = True,
                 keep_history: bool = True) -> None:
        problems = validate_schedule(schedule)
        if problems:
            raise EngineAbort("invalid participation schedule", problems)
        missing = schedule.universe() - set(protocols)
        if missing:
            raise EngineAbort(f"online processors without a protocol: {sorted(missing)}")
        self.schedule = schedule
        self.protocols = dict(protocols)
        self.processors = tuple(sorted(self.protocols))
        self.adversary = adversary or Adversary()
        self.seed = seed
        self.rushing = rushing
        self.oracle_rounds = oracle_rounds
        self.plan = plan
        self.trace = trace
        self.check_honest = check_honest
        self.keep_history = keep_history
        self.oracle_rng = random.Random(f"{seed}:oracle")
        self.adversary_rng = random.Random(f"{seed}:adversary")
        self.state = EngineState()
        self._received: dict[int, set[SignedMessage]] = {p: set() for p in self.processors}

    @property
    def round(self) -> int:
        return self.state.round

    @property
    def outputs(self) -> dict[int, tuple[int, Any]]:
        return self.state.outputs

    @property
    def ledger(self) -> Ledger:
        return self.state.ledger

    def _check_honest_send(self, r: int, p: int, msgs: frozenset) -> None:
        got = self._received[p]
        for msg in msgs:
            bad = _check_signed_tree(
                msg,
                ok_fresh=lambda sm: sm.signer == p and sm.round == r,
                ok_replay=lambda sm: sm.round < r and sm in got,
            )
            if bad:
                raise EngineAbort(f"well-behaved processor {p} sent a signed message it may not send "
                                  f"in round {r}", bad)

    def _context(self, r: int, rp: RoundParticipation, honest: Mapping[int, frozenset],
                 draw: OracleDraw | None) -> RoundContext:
        return RoundContext(
            round=r, participation=rp, processors=self.processors, schedule=self.schedule,
            honest_sends=honest if self.rushing else None, history=self.state.history,
            ledger=self.state.ledger, rng=self.adversary_rng, draw=draw, plan=self.plan)

    def run_round(self) -> RoundRecord:
        st = self.state
        r = st.round + 1
        if r > self.schedule.horizon:
            raise EngineAbort(f"round {r} beyond schedule horizon {self.schedule.horizon}")
        rp = self.schedule[r]

        honest: dict[int, frozenset] = {}
        for p in sorted(rp.online):
            msgs = frozenset(self.protocols[p].send(r))
            if p not in rp.impersonated and msgs:
                if self.check_honest:
                    self._check_honest_send(r, p, msgs)
                honest[p] = msgs

        draw = None
        if self.oracle_rounds is not None and self.oracle_rounds(r):
            draw = draw_leaders(self.oracle_rng, r, self.schedule, self.adversary,
                                self._context(r, rp, honest, None))

        injected: dict[int, dict[int, frozenset]] = {}
        if rp.impersonated:
            raw = self.adversary.inject(self._context(r, rp, honest, draw)) or {}
            injected = {f: {q: frozenset(ms) for q, ms in per.items() if ms} for f, per in raw.items()}
            violations = validate_injection(st.ledger, r, rp.impersonated, injected)
            if violations:
                raise EngineAbort(f"adversary move rejected in round {r}", violations)
            unknown = {q for per in injected.values() for q in per} - set(self.processors)
            if unknown:
                raise EngineAbort(f"injection addressed to unknown processors {sorted(unknown)}")

        for msgs in honest.values():
            for m in msgs:
                st.ledger.record(m, r)
        for per in injected.values():
            for msgs in per.values():
                for m in msgs:
                    st.ledger.record(m, r)

        record = RoundRecord(r, rp, honest, injected, draw)
        if self.trace is not None:
            self._trace_round(record)

        for q in self.processors:
            links = dict(honest)
            for f, per in injected.items():
                ms = per.get(q)
                if ms:
                    links[f] = ms
            view = ReceiveView(r, q, links)
            if self.check_honest:
                got = self._received[q]
                for ms in links.values():
                    for m in ms:
                        for sm in _signed_closure(m, got):
                            got.add(sm)
            leader = draw.leaders.get(q) if draw is not None else None
            out = self.protocols[q].receive(r, view, leader)
            if out is not None:
                if q in st.outputs:
                    raise EngineAbort(f"processor {q} emitted a second output in round {r}")
                st.outputs[q] = (r, out)
                if self.trace is not None:
                    self.trace.output(r, q, out)

        if self.keep_history:
            st.history.append(record)
        st.round = r
        return record

    def run(self, rounds: int | None = None, until: Callable[[IIABEngine], bool] | None = None) -> EngineState:
        last = self.schedule.horizon if rounds is None else min(self.schedule.horizon, self.state.round + rounds)
        while self.state.round < last:
            self.run_round()
            if until is not None and until(self):
                break
        return self.state

    def _trace_round(self, rec: RoundRecord) -> None:
        tr = self.trace
        if rec.draw is not None:
            tr.emit(type="oracle", round=rec.round, success=rec.draw.success,
                    leaders={str(p): l for p, l in sorted(rec.draw.leaders.items())})
        if not tr.links:
            return
        senders = sorted(set(rec.honest) | set(rec.injected))
        for s in senders:
            for q in self.processors:
                for m in sorted_payloads(rec.link(s, q)):
                    tr.emit(type="link", round=rec.round, sender=s, receiver=q,
                            forged=s not in rec.honest, message=payload_to_json(m))


def _signed_closure(payload: Any, known: set) -> list[SignedMessage]:
    out = []
    stack = [payload]
    while stack:
        p = stack.pop()
        if isinstance(p, SignedMessage):
            if p in known:
                continue
            out.append(p)
            stack.append(p.content)
        elif isinstance(p, frozenset):
            stack.extend(p)
        elif isinstance(p, Tagged) and p.body is not None:
            stack.append(p.body)
    return out
