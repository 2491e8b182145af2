"""Adversary strategies, oracle leader policies, and participation-schedule generators."""

from __future__ import annotations

import itertools
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

from .engine import Adversary, RoundContext
from .model import (
    ParticipationSchedule,
    RoundParticipation,
    SignedMessage,
    Tagged,
    is_value,
    payload_from_json,
    payload_key,
    payload_to_json,
    sorted_payloads,
    validate_schedule,
)
from .noeq import (
    LambdaOnly,
    NoEqAdversary,
    NoEqContext,
    Shape,
    Silent,
    Split,
    Uniform,
    shape_from_json,
    shape_to_json,
    validate_shape,
)

# -- helpers -----------------------------------------------------------------


def honest_payloads(ctx: Any) -> dict[int, Any] | None:
    """Current-round honest payloads as no-eq broadcasts; None for a non-rushing view.

    For IIAB contexts a sender counts when it sent exactly one message, and a
    message signed by its own sender this round is unwrapped to its content.
    """
    if isinstance(ctx, NoEqContext):
        return None if ctx.honest_payloads is None else dict(ctx.honest_payloads)
    if ctx.honest_sends is None:
        return None
    out = {}
    for h, msgs in ctx.honest_sends.items():
        if len(msgs) != 1:
            continue
        (m,) = msgs
        if isinstance(m, SignedMessage) and m.signer == h and m.round == ctx.round:
            m = m.content
        out[h] = m
    return out


def _value_of(m: Any) -> Any:
    if isinstance(m, Tagged) and m.body is not None:
        return m.body
    return m


# -- leader policies -----------------------------------------------------------


class LowestLeader:
    """Lowest well-behaved id on success; the same leader for everyone on failure too."""

    name = "lowest"

    def choose(self, ctx: Any) -> int:
        return min(ctx.participation.well_behaved)

    def assign(self, ctx: Any) -> dict[int, int]:
        lead = self.choose(ctx)
        return {p: lead for p in ctx.processors}


class LeaderWithholder(LowestLeader):
    """On failure, pairwise distinct leaders, impersonated ones first."""

    name = "withholder"

    def assign(self, ctx: Any) -> dict[int, int]:
        imp = sorted(ctx.participation.impersonated)
        pool = imp + [p for p in ctx.processors if p not in ctx.participation.impersonated]
        n = len(pool)
        return {p: pool[(i + 1) % n] for i, p in enumerate(ctx.processors)}


class LeaderSplitter(LowestLeader):
    """On failure, hand out leaders whose current messages carry different values.

    With a single honest value it points everyone at a processor that sent
    nothing, forcing the fallback to each processor's own input.
    """

    name = "splitter"

    def assign(self, ctx: Any) -> dict[int, int]:
        honest = honest_payloads(ctx) or {}
        groups: dict[Any, list[int]] = {}
        for h in sorted(honest):
            groups.setdefault(_value_of(honest[h]), []).append(h)
        if len(groups) >= 2:
            leaders = [groups[v][0] for v in sorted_payloads(groups)]
            return {p: leaders[i % len(leaders)] for i, p in enumerate(ctx.processors)}
        silent = max(ctx.processors) + 1
        return {p: silent for p in ctx.processors}


LEADER_POLICIES: dict[str, Callable[[], LowestLeader]] = {
    "lowest": LowestLeader,
    "withholder": LeaderWithholder,
    "splitter": LeaderSplitter,
}


def leader_withholder() -> LeaderWithholder:
    return LeaderWithholder()


class _PolicyMixin:
    leader_policy: Any = None

    def choose_leader(self, ctx: Any) -> int:
        return (self.leader_policy or LowestLeader()).choose(ctx)

    def assign_leaders(self, ctx: Any) -> dict[int, int]:
        return (self.leader_policy or LowestLeader()).assign(ctx)


# -- IIAB strategies -----------------------------------------------------------


def _resign(m: Any, f: int, r: int, value: Any = None) -> Any:
    """Re-sign a current-round message as ``f``; optionally replace a plain value inside."""
    if isinstance(m, SignedMessage) and m.round == r:
        content = m.content
        if value is not None and (is_value(content) or isinstance(content, Tagged)):
            content = _swap_value(content, value)
        return SignedMessage(f, r, content)
    if value is not None and not isinstance(m, (SignedMessage, frozenset)):
        return _swap_value(m, value)
    return m


def _swap_value(m: Any, value: Any) -> Any:
    if isinstance(m, Tagged):
        return Tagged(m.tag, value) if m.body is None or is_value(m.body) else m
    return value


class SilentAdversary(_PolicyMixin, Adversary):
    name = "silent"

    def __init__(self, leader_policy: Any = None) -> None:
        self.leader_policy = leader_policy


class EquivocatorSplit(_PolicyMixin, Adversary):
    """Every impersonated sender echoes each receiver's own honest message back to it.

    Receivers that sent nothing honest get the distinct honest messages in
    alternation.  With one distinct honest message this is a uniform echo.
    """

    name = "equivocator_split"

    def __init__(self, targets: Sequence[int] | None = None, leader_policy: Any = None) -> None:
        self.targets = None if targets is None else tuple(targets)
        self.leader_policy = leader_policy

    def inject(self, ctx: RoundContext) -> dict:
        sends = ctx.honest_sends
        if not sends:
            return {}
        distinct = sorted({msgs for msgs in sends.values()}, key=lambda s: payload_key(s))
        receivers = self.targets if self.targets is not None else ctx.processors
        out = {}
        for f in sorted(ctx.participation.impersonated):
            per = {}
            i = 0
            for q in receivers:
                if q in sends:
                    src = sends[q]
                else:
                    src = distinct[i % len(distinct)]
                    i += 1
                per[q] = frozenset(_resign(m, f, ctx.round) for m in src)
            out[f] = per
        return out


def equivocator_split(targets: Sequence[int] | None = None) -> EquivocatorSplit:
    return EquivocatorSplit(targets)


class RandomInjector(_PolicyMixin, Adversary):
    """Random legal injections: re-signed or mutated honest messages, replays, raw values."""

    name = "random_injector"

    def __init__(self, alphabet: Sequence[bytes] = (b"x", b"y"), rate: float = 0.7,
                 leader_policy: Any = None) -> None:
        self.alphabet = tuple(alphabet)
        self.rate = rate
        self.leader_policy = leader_policy

    def inject(self, ctx: RoundContext) -> dict:
        rng = ctx.rng
        r = ctx.round
        current = [m for h in sorted(ctx.honest_sends or {}) for m in sorted_payloads(ctx.honest_sends[h])]
        previous = []
        if ctx.history and ctx.history[-1].round == r - 1:
            prev = ctx.history[-1]
            previous = [m for h in sorted(prev.honest) for m in sorted_payloads(prev.honest[h])]
        out = {}
        for f in sorted(ctx.participation.impersonated):
            per = {}
            for q in ctx.processors:
                if rng.random() >= self.rate:
                    continue
                msgs = set()
                for _ in range(rng.randint(1, 2)):
                    kind = rng.randrange(4)
                    if kind == 0 and current:
                        msgs.add(_resign(rng.choice(current), f, r))
                    elif kind == 1 and current:
                        msgs.add(_resign(rng.choice(current), f, r, rng.choice(self.alphabet)))
                    elif kind == 2 and previous:
                        msgs.add(rng.choice(previous))
                    else:
                        msgs.add(SignedMessage(f, r, rng.choice(self.alphabet)))
                per[q] = frozenset(msgs)
            out[f] = per
        return out


class DSEquivocator(_PolicyMixin, Adversary):
    """Targets the authenticated relay: splits first-round values, relays selectively,
    and splits final-round candidates.  Outside relay phases it defers to ``fallback``."""

    name = "ds_equivocator"

    def __init__(self, alphabet: Sequence[bytes] = (b"x", b"y"), fallback: Adversary | None = None,
                 leader_policy: Any = None) -> None:
        self.alphabet = tuple(alphabet)
        self.fallback = fallback
        self.leader_policy = leader_policy

    def _step(self, ctx: RoundContext) -> tuple[int, int] | None:
        plan = ctx.plan
        if plan is None:
            return None
        ph, local = plan.locate(ctx.round)
        if ph.kind != "conciliator" or getattr(plan, "conciliator", None) != "deterministic":
            return None
        return local, ph.length - 1

    def inject(self, ctx: RoundContext) -> dict:
        step = self._step(ctx)
        if step is None:
            return self.fallback.inject(ctx) if self.fallback is not None else {}
        j, n = step
        rng, r = ctx.rng, ctx.round
        honest = ctx.honest_sends or {}
        values = sorted({m for h in honest for m in honest[h] if is_value(m)} | set(self.alphabet))
        out = {}
        for f in sorted(ctx.participation.impersonated):
            per = {}
            for i, q in enumerate(ctx.processors):
                if j == 1:
                    per[q] = frozenset((SignedMessage(f, r, self.alphabet[(i + rng.randrange(2)) % len(self.alphabet)]),))
                elif j <= n:
                    chains = [m for h in sorted(honest) for m in sorted_payloads(honest[h])]
                    pick = [c for c in chains if rng.random() < 0.5]
                    per[q] = frozenset(_resign(c, f, r) for c in pick[:8])
                else:
                    per[q] = frozenset((values[(i + rng.randrange(2)) % len(values)],))
            out[f] = per
        return out


# -- no-eq strategies ---------------------------------------------------------


class NoEqSilent(_PolicyMixin, NoEqAdversary):
    name = "noeq_silent"

    def __init__(self, leader_policy: Any = None) -> None:
        self.leader_policy = leader_policy


class ScriptedShapes(_PolicyMixin, NoEqAdversary):
    """Plays a fixed list of per-round shape maps; round i of the run uses ``script[i-1]``."""

    name = "scripted"

    def __init__(self, script: Sequence[Mapping[int, Shape]], receivers: Iterable[int] | None = None,
                 leader_policy: Any = None, offset: int = 0) -> None:
        recv = None if receivers is None else frozenset(receivers)
        for i, step in enumerate(script):
            for f, shape in step.items():
                err = validate_shape(shape, recv if recv is not None else _shape_receivers(shape))
                if err:
                    raise ValueError(f"script round {i + 1}, processor {f}: {err}")
        self.script = [dict(s) for s in script]
        self.offset = offset
        self.leader_policy = leader_policy

    def decide(self, ctx: NoEqContext) -> dict[int, Shape]:
        i = ctx.round - 1 - self.offset
        return dict(self.script[i]) if 0 <= i < len(self.script) else {}

    def to_json(self) -> list:
        return [{str(f): shape_to_json(s) for f, s in sorted(step.items())} for step in self.script]

    @classmethod
    def from_json(cls, data: Sequence[Mapping[str, Any]], **kw: Any) -> ScriptedShapes:
        return cls([{int(f): shape_from_json(s) for f, s in step.items()} for step in data], **kw)


def _shape_receivers(shape: Shape) -> frozenset:
    # Without an explicit receiver set, only check what the shape itself pins down.
    if isinstance(shape, Split):
        return shape.recipients | {object()}
    if isinstance(shape, LambdaOnly):
        return shape.recipients
    return frozenset()


def noeq_shape_enumerating_strategy(script: Sequence[Mapping[int, Shape]],
                                    receivers: Iterable[int] | None = None) -> ScriptedShapes:
    return ScriptedShapes(script, receivers)


class RandomShapes(_PolicyMixin, NoEqAdversary):
    """Uniformly random shape per impersonated sender, messages from honest payloads or ``alphabet``."""

    name = "random_shapes"

    def __init__(self, alphabet: Sequence[bytes] = (b"x", b"y"), leader_policy: Any = None) -> None:
        self.alphabet = tuple(alphabet)
        self.leader_policy = leader_policy

    def decide(self, ctx: NoEqContext) -> dict[int, Shape]:
        rng = ctx.rng
        honest = ctx.honest_payloads or {}
        pool = sorted_payloads(set(honest.values()) | set(self.alphabet))
        procs = list(ctx.processors)
        out = {}
        for f in sorted(ctx.participation.impersonated):
            kind = rng.randrange(4)
            if kind == 0:
                out[f] = Silent()
            elif kind == 1:
                out[f] = Uniform(rng.choice(pool))
            elif kind == 2 and len(procs) > 1:
                k = rng.randint(1, len(procs) - 1)
                out[f] = Split(rng.choice(pool), frozenset(rng.sample(procs, k)))
            else:
                out[f] = LambdaOnly(frozenset(p for p in procs if rng.random() < 0.5))
        return out


def _eligible_majority(m: Any) -> bool:
    return is_value(m) or (isinstance(m, Tagged) and m.tag in ("propose-commit", "commit"))


class VoteSplitter(_PolicyMixin, NoEqAdversary):
    """Picks uniform shapes that leave no value-carrying strict majority and no unique plurality.

    Combined with :class:`LeaderSplitter` this keeps commit-adopt from
    committing until the oracle succeeds.
    """

    name = "vote_splitter"

    def __init__(self, leader_policy: Any = None) -> None:
        self.leader_policy = leader_policy if leader_policy is not None else LeaderSplitter()
        self._memo: dict = {}

    def decide(self, ctx: NoEqContext) -> dict[int, Shape]:
        imp = tuple(sorted(ctx.participation.impersonated))
        honest = ctx.honest_payloads or {}
        counts = Counter(honest.values())
        key = (imp, tuple(ctx.processors), tuple(sorted(counts.items(), key=lambda kv: payload_key(kv[0]))))
        hit = self._memo.get(key)
        if hit is not None:
            return dict(hit)
        everyone = frozenset(ctx.processors)
        cands: list[Shape] = [Silent(), LambdaOnly(everyone)] + [Uniform(m) for m in sorted_payloads(counts)]
        best, best_score = None, None
        for combo in itertools.product(cands, repeat=len(imp)):
            c = Counter(counts)
            heard = len(honest)
            for s in combo:
                if isinstance(s, Uniform):
                    c[s.message] += 1
                    heard += 1
                elif isinstance(s, LambdaOnly):
                    heard += 1
            maj = any(2 * n > heard for m, n in c.items() if _eligible_majority(m))
            vals = sorted((n for m, n in c.items() if is_value(m)), reverse=True)
            plural = bool(vals) and (len(vals) == 1 or vals[0] > vals[1])
            score = (maj, plural)
            if best_score is None or score < best_score:
                best, best_score = combo, score
                if score == (False, False):
                    break
        out = dict(zip(imp, best)) if best is not None else {}
        self._memo[key] = out
        return dict(out)


# -- running no-eq strategies over the two-round simulation -------------------

_DECOY = Tagged("decoy")


class ShapeRealizer(_PolicyMixin, Adversary):
    """IIAB adversary that makes the simulated no-eq rounds deliver a no-eq strategy's shapes.

    Round A plants the subject's message (and a decoy on links into the next
    round's impersonated set); round B has impersonated relayers send decoy
    claims exactly where λ should appear.  Split and LambdaOnly need someone
    impersonated in round B; without one they degrade to Uniform and Silent.
    Rounds outside simulated phases go to ``fallback``.
    """

    name = "shape_realizer"

    def __init__(self, inner: NoEqAdversary, fallback: Adversary | None = None) -> None:
        self.inner = inner
        self.fallback = fallback
        self._pending: dict[int, dict] = {}

    def _sub(self, ctx: RoundContext) -> str | None:
        if ctx.plan is None:
            return "A" if ctx.round % 2 == 1 else "B"
        return ctx.plan.noeq_step(ctx.round)[2]

    def _noeq_ctx(self, ctx: RoundContext) -> NoEqContext:
        return NoEqContext(ctx.round, ctx.participation, ctx.processors, ctx.schedule,
                           honest_payloads(ctx), (), ctx.rng, ctx.draw, ctx.plan)

    def choose_leader(self, ctx: Any) -> int:
        return self.inner.choose_leader(self._noeq_ctx(ctx))

    def assign_leaders(self, ctx: Any) -> dict[int, int]:
        return self.inner.assign_leaders(self._noeq_ctx(ctx))

    def inject(self, ctx: RoundContext) -> dict:
        sub = self._sub(ctx)
        if sub is None:
            return self.fallback.inject(ctx) if self.fallback is not None else {}
        if sub == "A":
            return self._round_a(ctx)
        return self._round_b(ctx)

    def _round_a(self, ctx: RoundContext) -> dict:
        r = ctx.round
        shapes = self.inner.decide(self._noeq_ctx(ctx)) or {}
        nxt = ctx.schedule.impersonated(r + 1) if r + 1 <= ctx.schedule.horizon else frozenset()
        genuine = {SignedMessage(h, r, m) for h, m in (honest_payloads(ctx) or {}).items()}
        plan_b: dict[int, dict[int, set]] = {}  # relayer in round B -> receiver -> claims
        out: dict[int, dict[int, frozenset]] = {}
        everyone = ctx.processors
        for f in sorted(ctx.participation.impersonated):
            shape = shapes.get(f, Silent())
            if isinstance(shape, Split) and not nxt:
                shape = Uniform(shape.message)
            if isinstance(shape, LambdaOnly) and not nxt:
                shape = Silent()
            per: dict[int, set] = {}
            if isinstance(shape, (Uniform, Split)):
                real = SignedMessage(f, r, shape.message)
                genuine.add(real)
                for q in everyone:
                    per.setdefault(q, set()).add(real)
            if isinstance(shape, (Split, LambdaOnly)):
                decoy = SignedMessage(f, r, _DECOY if not isinstance(shape, Split) or shape.message != _DECOY
                                      else Tagged("decoy2"))
                for g in nxt:
                    per.setdefault(g, set()).add(decoy)
                targets = (frozenset(everyone) - shape.recipients) if isinstance(shape, Split) else shape.recipients
                relayer = min(nxt)
                for q in targets:
                    plan_b.setdefault(relayer, {}).setdefault(q, set()).add(decoy)
            if per:
                out[f] = {q: frozenset(ms) for q, ms in per.items()}
        self._pending[r + 1] = {"genuine": genuine, "claims": plan_b}
        return out

    def _round_b(self, ctx: RoundContext) -> dict:
        r = ctx.round
        pending = self._pending.pop(r, None)
        if pending is None:
            return {}
        out = {}
        for g in sorted(ctx.participation.impersonated):
            per = {}
            relay = frozenset(SignedMessage(g, r, m) for m in pending["genuine"])
            extra = pending["claims"].get(g, {})
            for q in ctx.processors:
                claims = set(relay)
                for d in extra.get(q, ()):
                    claims.add(SignedMessage(g, r, d))
                per[q] = frozenset(claims)
            out[g] = per
        return out


# -- registry -----------------------------------------------------------------


@dataclass(frozen=True)
class StrategyDescriptor:
    name: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"name": self.name, "params": dict(self.params)}

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> StrategyDescriptor:
        return cls(d["name"], dict(d.get("params", {})))


def _alphabet(params: Mapping[str, Any]) -> tuple[bytes, ...]:
    return tuple(a.encode() if isinstance(a, str) else bytes(a) for a in params.get("alphabet", ("x", "y")))


def _policy(params: Mapping[str, Any], default: str = "lowest") -> LowestLeader:
    name = params.get("leaders", default)
    if name not in LEADER_POLICIES:
        raise ValueError(f"unknown leader policy {name!r}")
    return LEADER_POLICIES[name]()


IIAB_STRATEGIES: dict[str, Callable[[Mapping[str, Any]], Adversary]] = {
    "silent": lambda p: SilentAdversary(_policy(p)),
    "equivocator_split": lambda p: EquivocatorSplit(p.get("targets"), _policy(p)),
    "random_injector": lambda p: RandomInjector(_alphabet(p), float(p.get("rate", 0.7)), _policy(p)),
    "ds_equivocator": lambda p: DSEquivocator(_alphabet(p), None, _policy(p)),
}

NOEQ_STRATEGIES: dict[str, Callable[[Mapping[str, Any]], NoEqAdversary]] = {
    "noeq_silent": lambda p: NoEqSilent(_policy(p)),
    "random_shapes": lambda p: RandomShapes(_alphabet(p), _policy(p)),
    "vote_splitter": lambda p: VoteSplitter(_policy(p, "splitter")),
    "scripted": lambda p: ScriptedShapes.from_json(p["script"], leader_policy=_policy(p)),
}


def strategy_names() -> list[str]:
    return sorted(IIAB_STRATEGIES) + sorted(NOEQ_STRATEGIES)


def build_adversary(desc: StrategyDescriptor, backend: str = "iiab") -> Any:
    """Instantiate a registered strategy for ``backend``.

    No-eq strategies on the IIAB backend run through :class:`ShapeRealizer`;
    rounds outside simulated phases then use the IIAB strategy named by the
    ``fallback`` parameter (default silent).
    """
    params = desc.params
    if desc.name in NOEQ_STRATEGIES:
        inner = NOEQ_STRATEGIES[desc.name](params)
        if backend == "noeq":
            return inner
        fb = params.get("fallback", "silent")
        if fb not in IIAB_STRATEGIES:
            raise ValueError(f"unknown fallback strategy {fb!r}")
        return ShapeRealizer(inner, IIAB_STRATEGIES[fb](params))
    if desc.name in IIAB_STRATEGIES:
        if backend == "noeq":
            raise ValueError(f"{desc.name} injects raw IIAB messages and cannot drive the no-eq backend")
        adv = IIAB_STRATEGIES[desc.name](params)
        if isinstance(adv, DSEquivocator):
            fb = params.get("fallback")
            if fb:
                adv.fallback = build_adversary(StrategyDescriptor(fb, params), backend)
        return adv
    raise ValueError(f"unknown strategy {desc.name!r}; known: {', '.join(strategy_names())}")


# -- schedule generators --------------------------------------------------------


def _checked(s: ParticipationSchedule) -> ParticipationSchedule:
    problems = validate_schedule(s)
    if problems:
        raise ValueError(f"generated schedule breaks invariants: {problems[0].round}: {problems[0].message}")
    return s


def constant(online: Iterable[int], impersonated: Iterable[int] = (), horizon: int = 1) -> ParticipationSchedule:
    return _checked(ParticipationSchedule.constant(online, impersonated, horizon))


def growing_adversary(online: Iterable[int], impersonated: Sequence[int], horizon: int,
                      activations: Sequence[int] | None = None, seed: int = 0) -> ParticipationSchedule:
    """Constant online set; processor ``impersonated[i]`` is hijacked from round ``activations[i]`` on."""
    rng = random.Random(f"{seed}:schedule")
    imp = list(impersonated)
    if activations is None:
        activations = [rng.randint(1, horizon) for _ in imp]
    if len(activations) != len(imp):
        raise ValueError("one activation round per impersonated processor")
    online = frozenset(online)
    rounds = []
    for r in range(1, horizon + 1):
        f = frozenset(p for p, t in zip(imp, activations) if t <= r)
        rounds.append(RoundParticipation(online, f))
    return _checked(ParticipationSchedule(tuple(rounds)))


def stabilizing_at(R: int, online: Iterable[int], impersonated: Sequence[int] = (), horizon: int | None = None,
                   pool: Iterable[int] | None = None, activations: Sequence[int] | None = None,
                   seed: int = 0) -> ParticipationSchedule:
    """Random participation before round R, ``online`` from R on; the adversary only grows.

    Processor ``impersonated[i]`` is hijacked from ``activations[i]`` (default:
    random in 1..R) and stays online from then on, as a growing adversary must.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    rng = random.Random(f"{seed}:schedule")
    online = frozenset(online)
    imp = list(impersonated)
    if not set(imp) <= online:
        raise ValueError("impersonated processors must be online after stabilization")
    horizon = horizon if horizon is not None else R + 64
    pool_l = sorted(set(pool) if pool is not None else set(online) | {max(online) + i for i in range(1, 4)})
    if activations is None:
        activations = [rng.randint(1, R) for _ in imp]
    rounds = []
    for r in range(1, horizon + 1):
        f = frozenset(p for p, t in zip(imp, activations) if t <= r)
        if r >= R:
            o = online
        else:
            others = [p for p in pool_l if p not in f]
            need = len(f) + 1
            if len(others) < need:
                raise ValueError(f"pool too small to keep |F| < |W| in round {r}")
            k = rng.randint(need, len(others))
            o = f | frozenset(rng.sample(others, k))
        rounds.append(RoundParticipation(o, f))
    return _checked(ParticipationSchedule(tuple(rounds)))


def churn(horizon: int, window: int, pool: Iterable[int] | None = None, impersonated: int = 1,
          fresh: bool = False, seed: int = 0) -> ParticipationSchedule:
    """A new random online set of size ``window`` every round.

    ``fresh=True`` never reuses an id, so no processor is online twice.
    Up to ``impersonated`` processors per round are hijacked, capped so that
    fewer are hijacked than left alone.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    rng = random.Random(f"{seed}:schedule")
    pool_l = sorted(pool) if pool is not None else None
    if not fresh and (pool_l is None or len(pool_l) < window):
        raise ValueError("pool must hold at least `window` processors")
    k_max = min(impersonated, (window - 1) // 2)
    rounds = []
    for r in range(1, horizon + 1):
        if fresh:
            o = list(range((r - 1) * window + 1, r * window + 1))
        else:
            o = rng.sample(pool_l, window)
        k = rng.randint(0, k_max) if k_max > 0 else 0
        f = rng.sample(sorted(o), k)
        rounds.append(RoundParticipation(frozenset(o), frozenset(f)))
    return _checked(ParticipationSchedule(tuple(rounds)))


SCHEDULES: dict[str, Callable[..., ParticipationSchedule]] = {
    "constant": constant,
    "growing_adversary": growing_adversary,
    "stabilizing_at": stabilizing_at,
    "churn": churn,
}


def schedule_generators(kind: str, **params: Any) -> ParticipationSchedule:
    if kind not in SCHEDULES:
        raise ValueError(f"unknown schedule kind {kind!r}; known: {', '.join(sorted(SCHEDULES))}")
    return SCHEDULES[kind](**params)


class ScriptedInjections(_PolicyMixin, Adversary):
    """Plays fixed per-round injections ``{sender: {receiver: messages}}``; round i uses ``script[i-1]``."""

    name = "scripted_injections"

    def __init__(self, script: Sequence[Mapping[int, Mapping[int, Iterable[Any]]]], leader_policy: Any = None) -> None:
        self.script = [{f: {q: frozenset(ms) for q, ms in per.items()} for f, per in step.items()} for step in script]
        self.leader_policy = leader_policy

    def inject(self, ctx: RoundContext) -> dict:
        i = ctx.round - 1
        return self.script[i] if 0 <= i < len(self.script) else {}

    def to_json(self) -> list:
        return [{str(f): {str(q): [payload_to_json(m) for m in sorted_payloads(ms)] for q, ms in sorted(per.items())}
                 for f, per in sorted(step.items())} for step in self.script]

    @classmethod
    def from_json(cls, data: Sequence[Mapping[str, Any]], **kw: Any) -> ScriptedInjections:
        return cls([{int(f): {int(q): [payload_from_json(m) for m in ms] for q, ms in per.items()}
                     for f, per in step.items()} for step in data], **kw)


IIAB_STRATEGIES["scripted_injections"] = lambda p: ScriptedInjections.from_json(p["script"], leader_policy=_policy(p))
