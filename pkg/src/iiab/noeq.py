"""The no-equivocation model: a native engine, and its two-round simulation on IIAB."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

from .engine import Adversary, EngineAbort, IIABEngine, OracleDraw, Trace, draw_leaders
from .model import (
    LAMBDA,
    ParticipationSchedule,
    ReceiveView,
    RoundParticipation,
    SignedMessage,
    payload_to_json,
    validate_schedule,
)

# -- adversary shapes ------------------------------------------------------


@dataclass(frozen=True)
class Silent:
    """Nobody hears of the sender."""


@dataclass(frozen=True)
class Uniform:
    message: Any


@dataclass(frozen=True)
class Split:
    """``message`` to ``recipients``, λ to every other receiver."""

    message: Any
    recipients: frozenset


@dataclass(frozen=True)
class LambdaOnly:
    """λ to ``recipients``, nothing to the rest."""

    recipients: frozenset


Shape = Silent | Uniform | Split | LambdaOnly


def validate_shape(shape: Any, receivers: Iterable[int]) -> str | None:
    recv = frozenset(receivers)
    if isinstance(shape, Silent):
        return None
    if isinstance(shape, Uniform):
        return "Uniform message may not be λ" if shape.message is LAMBDA or shape.message is None else None
    if isinstance(shape, Split):
        if shape.message is LAMBDA or shape.message is None:
            return "Split message may not be λ"
        if not shape.recipients:
            return "Split needs a nonempty recipient set"
        if not shape.recipients < recv:
            return "Split recipients must be a proper subset of the receivers"
        return None
    if isinstance(shape, LambdaOnly):
        return None if shape.recipients <= recv else "LambdaOnly recipients outside the receivers"
    return f"unknown shape {shape!r}"


def shape_delivery(shape: Shape, receiver: int) -> Any:
    """What ``receiver`` gets on the hijacked link: payload, LAMBDA, or None (silence)."""
    if isinstance(shape, Uniform):
        return shape.message
    if isinstance(shape, Split):
        return shape.message if receiver in shape.recipients else LAMBDA
    if isinstance(shape, LambdaOnly):
        return LAMBDA if receiver in shape.recipients else None
    return None


def shape_to_json(shape: Shape) -> dict:
    if isinstance(shape, Silent):
        return {"shape": "silent"}
    if isinstance(shape, Uniform):
        return {"shape": "uniform", "message": payload_to_json(shape.message)}
    if isinstance(shape, Split):
        return {"shape": "split", "message": payload_to_json(shape.message),
                "recipients": sorted(shape.recipients)}
    return {"shape": "lambda_only", "recipients": sorted(shape.recipients)}


def shape_from_json(d: Mapping[str, Any]) -> Shape:
    from .model import payload_from_json

    kind = d["shape"]
    if kind == "silent":
        return Silent()
    if kind == "uniform":
        return Uniform(payload_from_json(d["message"]))
    if kind == "split":
        return Split(payload_from_json(d["message"]), frozenset(d["recipients"]))
    if kind == "lambda_only":
        return LambdaOnly(frozenset(d["recipients"]))
    raise ValueError(f"unknown shape {kind!r}")


# -- native engine ---------------------------------------------------------


@dataclass
class NoEqRoundRecord:
    round: int
    participation: RoundParticipation
    honest: Mapping[int, Any]
    shapes: Mapping[int, Shape]
    draw: OracleDraw | None = None


@dataclass
class NoEqContext:
    round: int
    participation: RoundParticipation
    processors: tuple[int, ...]
    schedule: ParticipationSchedule | None
    honest_payloads: Mapping[int, Any] | None
    history: Sequence[Any]
    rng: random.Random
    draw: OracleDraw | None = None
    plan: Any = None


class NoEqAdversary:
    """Base no-eq strategy: every impersonated sender stays silent."""

    name = "silent"
    leader_policy: Any = None

    def decide(self, ctx: NoEqContext) -> dict[int, Shape]:
        return {}

    def choose_leader(self, ctx: Any) -> int:
        if self.leader_policy is not None:
            return self.leader_policy.choose(ctx)
        return min(ctx.participation.well_behaved)

    def assign_leaders(self, ctx: Any) -> dict[int, int]:
        if self.leader_policy is not None:
            return self.leader_policy.assign(ctx)
        lead = min(ctx.participation.well_behaved)
        return {p: lead for p in ctx.processors}


class NoEqProtocol(Protocol):
    def broadcast(self, round: int) -> Any: ...

    def deliver(self, round: int, view: ReceiveView, leader: int | None) -> Any: ...


@dataclass
class NoEqState:
    round: int = 0
    history: list[NoEqRoundRecord] = field(default_factory=list)
    outputs: dict[int, tuple[int, Any]] = field(default_factory=dict)


class NoEqEngine:
    """Runs no-eq rounds directly; round k is annotated as IIAB rounds 2k-1, 2k in traces."""

    def __init__(self, schedule: ParticipationSchedule, protocols: Mapping[int, NoEqProtocol],
                 adversary: NoEqAdversary | None = None, seed: int = 0, *,
                 oracle_rounds: Callable[[int], bool] | None = None, plan: Any = None,
                 trace: Trace | None = None, keep_history: bool = True, rushing: bool = True) -> None:
        problems = validate_schedule(schedule)
        if problems:
            raise EngineAbort("invalid participation schedule", problems)
        missing = schedule.universe() - set(protocols)
        if missing:
            raise EngineAbort(f"online processors without a protocol: {sorted(missing)}")
        self.schedule = schedule
        self.protocols = dict(protocols)
        self.processors = tuple(sorted(self.protocols))
        self.adversary = adversary or NoEqAdversary()
        self.seed = seed
        self.oracle_rounds = oracle_rounds
        self.plan = plan
        self.trace = trace
        self.keep_history = keep_history
        self.rushing = rushing
        self.oracle_rng = random.Random(f"{seed}:oracle")
        self.adversary_rng = random.Random(f"{seed}:adversary")
        self.state = NoEqState()

    @property
    def round(self) -> int:
        return self.state.round

    @property
    def outputs(self) -> dict[int, tuple[int, Any]]:
        return self.state.outputs

    def _context(self, r, rp, honest, draw) -> NoEqContext:
        return NoEqContext(r, rp, self.processors, self.schedule, honest if self.rushing else None,
                           self.state.history, self.adversary_rng, draw, self.plan)

    def run_round(self) -> list[ReceiveView]:
        st = self.state
        r = st.round + 1
        if r > self.schedule.horizon:
            raise EngineAbort(f"round {r} beyond schedule horizon {self.schedule.horizon}")
        rp = self.schedule[r]
        honest = {}
        for p in sorted(rp.online):
            m = self.protocols[p].broadcast(r)
            if m is None or m is LAMBDA or isinstance(m, (list, tuple, set)):
                raise EngineAbort(f"processor {p} must broadcast exactly one payload in round {r}, got {m!r}")
            if p not in rp.impersonated:
                honest[p] = m

        draw = None
        if self.oracle_rounds is not None and self.oracle_rounds(r):
            draw = draw_leaders(self.oracle_rng, r, self.schedule, self.adversary,
                                self._context(r, rp, honest, None))

        shapes: dict[int, Shape] = {}
        if rp.impersonated:
            chosen = self.adversary.decide(self._context(r, rp, honest, draw)) or {}
            extra = set(chosen) - rp.impersonated
            if extra:
                raise EngineAbort(f"shapes given for processors not impersonated in round {r}: {sorted(extra)}")
            for f in sorted(rp.impersonated):
                shape = chosen.get(f, Silent())
                err = validate_shape(shape, self.processors)
                if err:
                    raise EngineAbort(f"malformed shape for {f} in round {r}: {err}")
                shapes[f] = shape

        views = []
        for q in self.processors:
            delivery = dict(honest)
            for f, shape in shapes.items():
                m = shape_delivery(shape, q)
                if m is not None:
                    delivery[f] = m
            views.append(ReceiveView.noeq(r, q, delivery))

        rec = NoEqRoundRecord(r, rp, honest, shapes, draw)
        if self.trace is not None:
            self._trace_round(rec, views)
        for q, view in zip(self.processors, views):
            leader = draw.leaders.get(q) if draw is not None else None
            out = self.protocols[q].deliver(r, view, leader)
            if out is not None:
                if q in st.outputs:
                    raise EngineAbort(f"processor {q} emitted a second output in round {r}")
                st.outputs[q] = (r, out)
                if self.trace is not None:
                    self.trace.output(2 * r, q, out)
        if self.keep_history:
            st.history.append(rec)
        st.round = r
        return views

    def run(self, rounds: int | None = None, until: Callable[[NoEqEngine], bool] | None = None) -> NoEqState:
        last = self.schedule.horizon if rounds is None else min(self.schedule.horizon, self.state.round + rounds)
        while self.state.round < last:
            self.run_round()
            if until is not None and until(self):
                break
        return self.state

    def _trace_round(self, rec: NoEqRoundRecord, views: list[ReceiveView]) -> None:
        tr = self.trace
        iiab = (2 * rec.round - 1, 2 * rec.round)
        if rec.draw is not None:
            tr.emit(type="oracle", round=iiab[0], noeq_round=rec.round, success=rec.draw.success,
                    leaders={str(p): l for p, l in sorted(rec.draw.leaders.items())})
        if not tr.links:
            return
        for view in views:
            for s in sorted(view.links):
                m = view.message(s)
                tr.emit(type="noeq_delivery", round=iiab[1], noeq_round=rec.round, receiver=view.receiver,
                        subject=s, outcome="lambda" if m is LAMBDA else "msg",
                        message=None if m is LAMBDA else payload_to_json(m))


# -- simulation of one no-eq round over two IIAB rounds ---------------------


class Algorithm1Relay:
    """One processor's part in simulating a single no-eq round over IIAB rounds ``a`` and ``a + 1``."""

    __slots__ = ("me", "a", "b", "heard")

    def __init__(self, me: int, round_a: int) -> None:
        self.me = me
        self.a = round_a
        self.b = round_a + 1
        self.heard: list[SignedMessage] = []

    def send_a(self, payload: Any) -> frozenset:
        return frozenset((SignedMessage(self.me, self.a, payload),))

    def receive_a(self, view: ReceiveView) -> None:
        a = self.a
        heard = []
        for s, ms in view.links.items():
            for m in ms:
                if isinstance(m, SignedMessage) and m.signer == s and m.round == a:
                    heard.append(m)
        self.heard = heard

    def send_b(self) -> frozenset:
        me, b = self.me, self.b
        return frozenset(SignedMessage(me, b, sm) for sm in self.heard)

    def receive_b(self, view: ReceiveView) -> dict[int, Any]:
        """Simulated delivery per subject: the message, or LAMBDA; unclaimed subjects are absent."""
        a, b = self.a, self.b
        heard = 0
        claims: dict[int, dict[Any, set[int]]] = {}
        for s, ms in view.links.items():
            if ms:
                heard += 1
            for c in ms:
                if not (isinstance(c, SignedMessage) and c.signer == s and c.round == b):
                    continue
                inner = c.content
                if isinstance(inner, SignedMessage) and inner.round == a:
                    claims.setdefault(inner.signer, {}).setdefault(inner.content, set()).add(s)
        out = {}
        for subject, by_msg in claims.items():
            if len(by_msg) == 1:
                ((m, relayers),) = by_msg.items()
                out[subject] = m if 2 * len(relayers) > heard else LAMBDA
            else:
                out[subject] = LAMBDA
        return out


class SimulatedNoEq:
    """Adapter running a no-eq protocol over IIAB rounds via :class:`Algorithm1Relay`.

    The wrapped protocol's local round k occupies IIAB rounds
    ``start + 2k - 2`` and ``start + 2k - 1``.
    """

    def __init__(self, me: int, inner: NoEqProtocol, start: int = 1, *,
                 trace: Trace | None = None, universe: Sequence[int] | None = None) -> None:
        self.me = me
        self.inner = inner
        self.start = start
        self.trace = trace
        self.universe = universe
        self._relay: Algorithm1Relay | None = None
        self._leader: int | None = None

    def _relay_at(self, r: int) -> Algorithm1Relay:
        if self._relay is None or self._relay.a != r:
            self._relay = Algorithm1Relay(self.me, r)
        return self._relay

    def send(self, r: int) -> frozenset:
        j = r - self.start
        if j % 2 == 0:
            return self._relay_at(r).send_a(self.inner.broadcast(j // 2 + 1))
        return self._relay.send_b() if self._relay is not None else frozenset()

    def receive(self, r: int, view: ReceiveView, leader: int | None) -> Any:
        j = r - self.start
        if j % 2 == 0:
            self._relay_at(r).receive_a(view)
            self._leader = leader
            return None
        relay = self._relay
        delivery = relay.receive_b(view) if relay is not None and relay.b == r else {}
        if self.trace is not None and self.trace.links:
            subjects = sorted(set(self.universe or ()) | set(delivery))
            for s in subjects:
                m = delivery.get(s)
                outcome = "none" if m is None else "lambda" if m is LAMBDA else "msg"
                self.trace.emit(type="simulated_delivery", round=r, receiver=self.me, subject=s, outcome=outcome,
                                message=payload_to_json(m) if outcome == "msg" else None)
        return self.inner.deliver(j // 2 + 1, ReceiveView.noeq(r, self.me, delivery), self._leader)


class FixedBroadcast:
    """No-eq protocol that broadcasts one given payload and records what it was delivered."""

    def __init__(self, payload: Any) -> None:
        self.payload = payload
        self.delivered: dict[int, ReceiveView] = {}

    def broadcast(self, round: int) -> Any:
        return self.payload

    def deliver(self, round: int, view: ReceiveView, leader: int | None) -> None:
        self.delivered[round] = view
        return None


def simulate_noeq_round(schedule: ParticipationSchedule, payloads: Mapping[int, Any],
                        adversary: Adversary | None = None, seed: int = 0, *,
                        observers: Iterable[int] = (), trace: Trace | None = None) -> dict[int, ReceiveView]:
    """Simulate one no-eq round over IIAB rounds 1 and 2 of ``schedule``.

    Every materialized processor runs the relay; the result maps each one to
    its simulated delivery.  Processors without a payload broadcast nothing
    useful and only matter as receivers.
    """
    universe = sorted(schedule.universe() | set(observers) | set(payloads))
    procs = {p: FixedBroadcast(payloads.get(p, b"")) for p in universe}
    adapters = {p: SimulatedNoEq(p, procs[p], 1, trace=trace, universe=universe) for p in universe}
    engine = IIABEngine(schedule.truncated(2), adapters, adversary, seed, trace=trace)
    engine.run()
    return {p: procs[p].delivered[1] for p in universe}


# -- classifying a delivery profile ----------------------------------------

INVALID = "INVALID"


def classify_delivery_profile(deliveries: Mapping[int, ReceiveView], subject: int) -> int | str:
    """Which of the four allowed cross-processor patterns ``subject`` produced, or INVALID."""
    got = [v.message(subject) for v in deliveries.values()]
    msgs = {m for m in got if m is not None and m is not LAMBDA}
    n_none = sum(1 for m in got if m is None)
    n_lambda = sum(1 for m in got if m is LAMBDA)
    if len(msgs) > 1:
        return INVALID
    if not msgs:
        if n_lambda == 0:
            return 1
        return 4
    if n_none:
        return INVALID
    return 3 if n_lambda else 2
