"""Shared vocabulary: processors, rounds, payloads, schedules and majority counting."""

from __future__ import annotations

import base64
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Mapping, Union

ProcessorId = int
Value = bytes


class _Lambda:
    """Failure notification of the no-equivocation model; matches no payload."""

    _instance: _Lambda | None = None

    def __new__(cls) -> _Lambda:
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "LAMBDA"

    def __reduce__(self):
        return (_Lambda, ())


LAMBDA = _Lambda()


@dataclass(frozen=True, eq=True)
class SignedMessage:
    """``<signer, round, content>``; forgery rules live in the engine, not here."""

    signer: ProcessorId
    round: int
    content: Payload
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_hash", hash((self.signer, self.round, self.content)))

    def __hash__(self) -> int:
        return self._hash

    def chain(self) -> list[SignedMessage]:
        """Outermost-first list of the nested signed layers."""
        out = [self]
        cur = self.content
        while isinstance(cur, SignedMessage):
            out.append(cur)
            cur = cur.content
        return out


@dataclass(frozen=True)
class Tagged:
    """Typed protocol message such as ``propose-commit(v)`` or ``adopt(v)``."""

    tag: str
    body: Payload | None = None


Payload = Union[bytes, SignedMessage, Tagged, frozenset]


def iter_signed(payload: Any) -> Iterator[SignedMessage]:
    """Every signed message occurring in ``payload``, at any nesting depth."""
    stack = [payload]
    while stack:
        p = stack.pop()
        if isinstance(p, SignedMessage):
            yield p
            stack.append(p.content)
        elif isinstance(p, Tagged):
            if p.body is not None:
                stack.append(p.body)
        elif isinstance(p, frozenset):
            stack.extend(p)


def payload_key(p: Any) -> tuple:
    """Total order over payloads, independent of hash seeds."""
    if isinstance(p, bytes):
        return (0, p)
    if p is LAMBDA:
        return (1,)
    if isinstance(p, SignedMessage):
        return (2, p.signer, p.round, payload_key(p.content))
    if isinstance(p, Tagged):
        return (3, p.tag, () if p.body is None else payload_key(p.body))
    if isinstance(p, frozenset):
        return (4, tuple(sorted(payload_key(x) for x in p)))
    if p is None:
        return (5,)
    raise TypeError(f"not a payload: {p!r}")


def sorted_payloads(ps: Iterable[Any]) -> list:
    return sorted(ps, key=payload_key)


def payload_to_json(p: Any) -> Any:
    if isinstance(p, bytes):
        return {"value": base64.b64encode(p).decode("ascii")}
    if p is LAMBDA:
        return {"lambda": True}
    if isinstance(p, SignedMessage):
        return {"signed": {"signer": p.signer, "round": p.round, "content": payload_to_json(p.content)}}
    if isinstance(p, Tagged):
        body = None if p.body is None else payload_to_json(p.body)
        return {"tagged": {"tag": p.tag, "body": body}}
    if isinstance(p, frozenset):
        return {"set": [payload_to_json(x) for x in sorted_payloads(p)]}
    raise TypeError(f"not a payload: {p!r}")


def payload_from_json(d: Any) -> Any:
    if "value" in d:
        return base64.b64decode(d["value"])
    if "lambda" in d:
        return LAMBDA
    if "signed" in d:
        s = d["signed"]
        return SignedMessage(int(s["signer"]), int(s["round"]), payload_from_json(s["content"]))
    if "tagged" in d:
        t = d["tagged"]
        return Tagged(t["tag"], None if t["body"] is None else payload_from_json(t["body"]))
    if "set" in d:
        return frozenset(payload_from_json(x) for x in d["set"])
    raise ValueError(f"unrecognised payload encoding: {d!r}")


# -- participation ---------------------------------------------------------


@dataclass(frozen=True)
class RoundParticipation:
    online: frozenset[ProcessorId]
    impersonated: frozenset[ProcessorId] = frozenset()

    @property
    def well_behaved(self) -> frozenset[ProcessorId]:
        return self.online - self.impersonated


@dataclass(frozen=True)
class ParticipationSchedule:
    """Per-round partition of the online processors, rounds numbered from 1.

    Construction does not enforce the model invariants so that broken
    schedules can be represented and reported by :func:`validate_schedule`.
    """

    rounds: tuple[RoundParticipation, ...]

    @classmethod
    def from_sets(cls, rounds: Iterable[tuple[Iterable[int], Iterable[int]]]) -> ParticipationSchedule:
        return cls(tuple(RoundParticipation(frozenset(o), frozenset(f)) for o, f in rounds))

    @classmethod
    def constant(cls, online: Iterable[int], impersonated: Iterable[int] = (), horizon: int = 1) -> ParticipationSchedule:
        rp = RoundParticipation(frozenset(online), frozenset(impersonated))
        return cls((rp,) * horizon)

    @property
    def horizon(self) -> int:
        return len(self.rounds)

    def __getitem__(self, r: int) -> RoundParticipation:
        if not 1 <= r <= len(self.rounds):
            raise IndexError(f"round {r} outside 1..{len(self.rounds)}")
        return self.rounds[r - 1]

    def online(self, r: int) -> frozenset[int]:
        return self[r].online

    def impersonated(self, r: int) -> frozenset[int]:
        return self[r].impersonated

    def well_behaved(self, r: int) -> frozenset[int]:
        return self[r].well_behaved

    def universe(self) -> frozenset[int]:
        out: set[int] = set()
        for rp in self.rounds:
            out |= rp.online
        return frozenset(out)

    def truncated(self, horizon: int) -> ParticipationSchedule:
        return ParticipationSchedule(self.rounds[:horizon])

    def to_json(self) -> dict:
        return {
            "horizon": self.horizon,
            "rounds": [
                {"online": sorted(rp.online), "impersonated": sorted(rp.impersonated)} for rp in self.rounds
            ],
        }

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> ParticipationSchedule:
        rounds = d["rounds"]
        if "horizon" in d and d["horizon"] != len(rounds):
            raise ValueError(f"horizon {d['horizon']} does not match {len(rounds)} round entries")
        return cls.from_sets((r["online"], r.get("impersonated", ())) for r in rounds)


@dataclass(frozen=True)
class Violation:
    round: int
    message: str


def validate_schedule(schedule: ParticipationSchedule) -> list[Violation]:
    """One entry per broken invariant per round; empty means the schedule is valid."""
    out = []
    if schedule.horizon < 1:
        return [Violation(0, "horizon must be >= 1")]
    for r, rp in enumerate(schedule.rounds, start=1):
        if not rp.online:
            out.append(Violation(r, "O is empty"))
        if not rp.impersonated <= rp.online:
            out.append(Violation(r, f"F ⊄ O (extra {sorted(rp.impersonated - rp.online)})"))
        nf, nw = len(rp.impersonated), len(rp.well_behaved)
        if not nf < nw:
            out.append(Violation(r, f"|F|={nf} not < |W|={nw}"))
    return out


def is_growing(schedule: ParticipationSchedule) -> bool:
    return all(a.impersonated <= b.impersonated for a, b in zip(schedule.rounds, schedule.rounds[1:]))


# -- what a processor receives ---------------------------------------------


@dataclass(frozen=True)
class ReceiveView:
    """Messages one processor received in one round, keyed by link sender.

    IIAB views hold arbitrary finite sets per link.  No-equivocation
    deliveries hold exactly one element per heard-of sender: the message
    or ``LAMBDA``.  Senders never heard of are absent.
    """

    round: int
    receiver: ProcessorId
    links: Mapping[ProcessorId, frozenset]

    @classmethod
    def noeq(cls, round: int, receiver: int, delivery: Mapping[int, Any]) -> ReceiveView:
        return cls(round, receiver, {s: frozenset((m,)) for s, m in delivery.items()})

    @property
    def heard_of(self) -> frozenset[int]:
        return frozenset(s for s, ms in self.links.items() if ms)

    def message(self, sender: int) -> Any:
        """No-eq accessor: the payload, ``LAMBDA``, or ``None`` if not heard of."""
        ms = self.links.get(sender)
        if not ms:
            return None
        if len(ms) != 1:
            raise ValueError(f"link from {sender} carries {len(ms)} messages; not a no-eq delivery")
        (m,) = ms
        return m

    def senders_of(self, target: Any) -> frozenset[int]:
        return frozenset(s for s, ms in self.links.items() if target in ms)

    def counts(self) -> Counter:
        c: Counter = Counter()
        for ms in self.links.values():
            for m in ms:
                if m is not LAMBDA:
                    c[m] += 1
        return c


class NoSendersHeard(ValueError):
    """A majority was asked of a view in which nobody was heard of."""


def strict_majority(view: ReceiveView, target: Any) -> bool:
    heard = sum(1 for ms in view.links.values() if ms)
    if heard == 0:
        raise NoSendersHeard(f"processor {view.receiver} heard of nobody in round {view.round}")
    if target is LAMBDA:
        return False
    n = sum(1 for ms in view.links.values() if target in ms)
    return 2 * n > heard


def majority_value(view: ReceiveView, accept=None) -> Any:
    """The unique message received from a strict majority of heard-of senders, if any.

    ``accept`` filters which messages are eligible (e.g. values only).
    """
    heard = sum(1 for ms in view.links.values() if ms)
    if heard == 0:
        return None
    for m, n in view.counts().items():
        if 2 * n > heard and (accept is None or accept(m)):
            return m
    return None


def plurality_unique(view: ReceiveView, accept=None) -> Any:
    """The value received from strictly more senders than any other, or None on ties."""
    c = view.counts()
    if accept is not None:
        c = Counter({m: n for m, n in c.items() if accept(m)})
    if not c:
        return None
    ranked = c.most_common()
    if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
        return None
    return ranked[0][0]


def is_value(m: Any) -> bool:
    return isinstance(m, bytes)
