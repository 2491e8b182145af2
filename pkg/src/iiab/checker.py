"""Exhaustive small-instance checking of the no-eq guarantees, commit-adopt, the
deterministic conciliator, and the two-round simulation."""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Mapping, Sequence

from .adversaries import ScriptedInjections, ScriptedShapes
from .engine import IIABEngine, Ledger, validate_injection
from .model import (
    LAMBDA,
    ParticipationSchedule,
    ReceiveView,
    SignedMessage,
    Tagged,
    payload_from_json,
    payload_key,
    payload_to_json,
    sorted_payloads,
    validate_schedule,
)
from .noeq import (
    INVALID,
    Algorithm1Relay,
    LambdaOnly,
    NoEqEngine,
    Shape,
    Silent,
    Split,
    Uniform,
    classify_delivery_profile,
    simulate_noeq_round,
)
from .protocols import COMMIT, NO_COMMIT, PROPOSE, CommitAdopt, CommitAdoptOutput, DetConciliator

MAX_PROCESSORS = 4
MAX_ROUNDS = 3
MAX_ALPHABET = 3

HOLDS = "holds"
VIOLATED = "violated"
NOT_APPLICABLE = "not_applicable"


class EnvelopeExceeded(ValueError):
    def __init__(self, message: str, estimate: int | None = None) -> None:
        super().__init__(message if estimate is None else f"{message} (about {estimate} behaviors)")
        self.estimate = estimate


# -- shape enumeration ---------------------------------------------------------


def _subsets(items: Sequence[int]) -> list[frozenset]:
    return [frozenset(c) for k in range(len(items) + 1) for c in itertools.combinations(items, k)]


def shape_space(receivers: Iterable[int], messages: Iterable[Any]) -> list[Shape]:
    """Every distinct shape; LambdaOnly(∅) is folded into Silent since both mean silence."""
    recv = sorted(receivers)
    msgs = sorted_payloads(set(messages))
    subs = _subsets(recv)
    proper = [s for s in subs if s and len(s) < len(recv)]
    out: list[Shape] = [Silent()]
    out += [Uniform(m) for m in msgs]
    out += [Split(m, s) for m in msgs for s in proper]
    out += [LambdaOnly(s) for s in subs if s]
    return out


def shape_count(receivers: int, messages: int) -> int:
    """Closed form: silent, M uniform, M(2^k - 2) splits, 2^k - 1 nonempty λ-sets."""
    k, m = receivers, messages
    return 1 + m + m * (2 ** k - 2) + (2 ** k - 1)


def behavior_count(schedule: ParticipationSchedule, messages_per_round: Sequence[Iterable[Any]],
                   receivers: Iterable[int]) -> int:
    k = len(set(receivers))
    total = 1
    for r in range(1, schedule.horizon + 1):
        total *= shape_count(k, len(set(messages_per_round[r - 1]))) ** len(schedule.impersonated(r))
    return total


def check_envelope(n: int, rounds: int, alphabet: int, estimate: int | None = None) -> None:
    if n > MAX_PROCESSORS or rounds > MAX_ROUNDS or alphabet > MAX_ALPHABET:
        raise EnvelopeExceeded(
            f"outside the enumeration envelope (n={n} <= {MAX_PROCESSORS}, rounds={rounds} <= {MAX_ROUNDS}, "
            f"alphabet={alphabet} <= {MAX_ALPHABET})", estimate)


def enumerate_noeq_behaviors(schedule: ParticipationSchedule, alphabet: Iterable[Any],
                             protocol_payloads: Sequence[Iterable[Any]] | None = None,
                             receivers: Iterable[int] | None = None) -> Iterator[tuple[dict[int, Shape], ...]]:
    """Every per-round assignment of one shape to each impersonated processor.

    Messages in round r come from ``alphabet`` plus ``protocol_payloads[r-1]``.
    Receivers default to every processor online in some round.
    """
    alphabet = list(alphabet)
    recv = sorted(receivers if receivers is not None else schedule.universe())
    extra = protocol_payloads or [()] * schedule.horizon
    msgs = [set(alphabet) | set(extra[r]) for r in range(schedule.horizon)]
    check_envelope(len(recv), schedule.horizon, len(alphabet), behavior_count(schedule, msgs, recv))
    per_round = []
    for r in range(1, schedule.horizon + 1):
        imp = sorted(schedule.impersonated(r))
        space = shape_space(recv, msgs[r - 1])
        per_round.append([dict(zip(imp, combo)) for combo in itertools.product(space, repeat=len(imp))])
    yield from itertools.product(*per_round)


# -- no-eq majority properties --------------------------------------------------------------


def _senders(view: ReceiveView, m: Any) -> set[int]:
    return {s for s in view.links if view.message(s) == m and view.message(s) is not LAMBDA}


def check_lemma1(view_p: ReceiveView, view_q: ReceiveView, m: Any) -> bool:
    """Senders delivering m to p are heard of by q; a majority of H_p stays one of H_p ∩ H_q."""
    if m is LAMBDA:
        return True
    pm = _senders(view_p, m)
    hp, hq = view_p.heard_of, view_q.heard_of
    both = hp & hq
    if not pm <= both:
        return False
    if 2 * len(pm) > len(hp):
        return 2 * len(pm) > len(both)
    return True


def majority_messages(view: ReceiveView) -> set[Any]:
    heard = len(view.heard_of)
    return {m for m, n in view.counts().items() if 2 * n > heard}


def check_thm2(views: Iterable[ReceiveView]) -> bool:
    """At most one message is a strict majority at any processor this round."""
    winners: set = set()
    for v in views:
        winners |= majority_messages(v)
    return len(winners) <= 1


def check_thm3(views: Sequence[ReceiveView], m1: Any, m2: Any, broadcasts: Iterable[Any]) -> str:
    """Every processor counts fewer m2 than m1 senders, given m1 won somewhere and nobody honest sent m2."""
    if m2 is LAMBDA or m1 is LAMBDA or m1 == m2 or m2 in set(broadcasts):
        return NOT_APPLICABLE
    if not any(m1 in majority_messages(v) for v in views):
        return NOT_APPLICABLE
    for v in views:
        c = v.counts()
        if not c[m2] < c[m1]:
            return VIOLATED
    return HOLDS


# -- reports ---------------------------------------------------------------------


@dataclass
class Report:
    task: str
    params: dict
    assumptions: list[str] = field(default_factory=list)
    behaviors_checked: int = 0
    not_applicable: int = 0
    violations: list[dict] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    def violate(self, prop: str, script: Any, witness: Any) -> None:
        self.violations.append({"property": prop, "behavior_script": script, "witness": witness})

    def merge(self, other: Report) -> None:
        self.behaviors_checked += other.behaviors_checked
        self.not_applicable += other.not_applicable
        self.violations += other.violations
        for k, v in other.stats.items():
            self.stats[k] = self.stats.get(k, 0) + v if isinstance(v, int) else v

    def to_json(self) -> dict:
        return {"task": self.task, "params": self.params, "assumptions": self.assumptions,
                "behaviors_checked": self.behaviors_checked, "not_applicable": self.not_applicable,
                "violations": self.violations, "stats": self.stats}


def _b(v: bytes) -> str:
    return payload_to_json(v)["value"]


def _inputs_json(inputs: Mapping[int, bytes]) -> dict:
    return {str(p): _b(v) for p, v in sorted(inputs.items())}


def _inputs_from_json(d: Mapping[str, str]) -> dict[int, bytes]:
    return {int(p): payload_from_json({"value": v}) for p, v in d.items()}


def _valid_schedules(n: int, max_f: int | None = None) -> list[frozenset]:
    procs = list(range(1, n + 1))
    out = []
    for f in _subsets(procs):
        if len(f) < n - len(f) and (max_f is None or len(f) <= max_f):
            out.append(f)
    return out


# -- no-eq property sweep -----------------------------------------------------------


def noeq_theorems_check(n_max: int = 3, alphabet: Sequence[bytes] = (b"a", b"b"), fresh: bool = True) -> Report:
    """Heard-of overlap, single majority and minority count over every one-round no-eq behavior up to ``n_max`` processors.

    Each run materializes processors 1..n; the online set ranges over all
    nonempty subsets and the impersonated set over all valid subsets of it.
    """
    extra = (b"z",) if fresh else ()
    msgs = list(alphabet) + list(extra)
    rep = Report("noeq_theorems", {"n_max": n_max, "alphabet": [_b(a) for a in alphabet], "fresh_symbol": fresh},
                 ["adversary messages range over the honest alphabet plus one fresh symbol"])
    rep.stats = {"overlap_checks": 0, "single_majority_checks": 0, "minority_count_applicable": 0,
                 "minority_count_not_applicable": 0}
    for n in range(1, n_max + 1):
        procs = list(range(1, n + 1))
        check_envelope(n, 1, len(msgs))
        for online in _subsets(procs):
            if not online:
                continue
            for f in _subsets(sorted(online)):
                if not len(f) < len(online) - len(f):
                    continue
                w = sorted(online - f)
                sched = ParticipationSchedule.constant(online, f, 1)
                for payload_combo in itertools.product(alphabet, repeat=len(w)):
                    honest = dict(zip(w, payload_combo))
                    for (step,) in enumerate_noeq_behaviors(sched, msgs, receivers=procs):
                        views = _native_views(procs, honest, step)
                        rep.behaviors_checked += 1
                        script = {"n": n, "online": sorted(online), "impersonated": sorted(f),
                                  "payloads": {str(p): _b(v) for p, v in honest.items()},
                                  "shapes": ScriptedShapes([step], procs).to_json()}
                        for vp in views:
                            for vq in views:
                                for m in msgs:
                                    rep.stats["overlap_checks"] += 1
                                    if not check_lemma1(vp, vq, m):
                                        rep.violate("overlap", script, {"p": vp.receiver, "q": vq.receiver,
                                                                       "m": _b(m)})
                        rep.stats["single_majority_checks"] += 1
                        if not check_thm2(views):
                            rep.violate("single_majority", script, {"majorities": sorted(
                                _b(m) for v in views for m in majority_messages(v) if isinstance(m, bytes))})
                        applicable = False
                        for m1 in msgs:
                            for m2 in msgs:
                                verdict = check_thm3(views, m1, m2, honest.values())
                                if verdict == NOT_APPLICABLE:
                                    continue
                                applicable = True
                                if verdict == VIOLATED:
                                    rep.violate("minority_count", script, {"m1": _b(m1), "m2": _b(m2)})
                        if applicable:
                            rep.stats["minority_count_applicable"] += 1
                        else:
                            rep.stats["minority_count_not_applicable"] += 1
                            rep.not_applicable += 1
    return rep


def _native_views(procs: Sequence[int], honest: Mapping[int, Any], step: Mapping[int, Shape]) -> list[ReceiveView]:
    from .noeq import shape_delivery

    views = []
    for q in procs:
        d = dict(honest)
        for f, shape in step.items():
            m = shape_delivery(shape, q)
            if m is not None:
                d[f] = m
        views.append(ReceiveView.noeq(1, q, d))
    return views


def example1_native_check(v: bytes = b"v", w: bytes = b"w") -> Report:
    """Every no-eq shape for p1 when p2 sends v and p3 sends w: never two different majorities."""
    procs = [1, 2, 3]
    sched = ParticipationSchedule.constant(procs, [1], 1)
    rep = Report("example1_native", {"v": _b(v), "w": _b(w)})
    for (step,) in enumerate_noeq_behaviors(sched, [v, w, b"z"], receivers=procs):
        eng = NoEqEngine(sched, {p: _Fixed({1: b"", 2: v, 3: w}[p]) for p in procs}, ScriptedShapes([step], procs))
        views = eng.run_round()
        rep.behaviors_checked += 1
        if not check_thm2(views):
            rep.violate("conflicting_majorities", ScriptedShapes([step], procs).to_json(), None)
    return rep


class _Fixed:
    def __init__(self, payload: Any) -> None:
        self.payload = payload

    def broadcast(self, r: int) -> Any:
        return self.payload

    def deliver(self, r: int, view: ReceiveView, leader: Any) -> None:
        return None


# -- commit-adopt ------------------------------------------------------------------


def commit_adopt_messages(alphabet: Sequence[bytes]) -> list[list[Any]]:
    """Protocol payloads per round: values, then propose-commit(v) for each value and no-commit."""
    return [list(alphabet), [Tagged(PROPOSE, a) for a in alphabet] + [Tagged(NO_COMMIT)]]


def _ca_properties(inputs: Mapping[int, bytes], outputs: Mapping[int, CommitAdoptOutput | None]) -> list[tuple]:
    bad = []
    missing = [p for p, o in outputs.items() if o is None]
    if missing:
        bad.append(("termination", {"undecided": missing}))
        return bad
    commits = {o.value for o in outputs.values() if o.kind == COMMIT}
    for v in commits:
        off = {p: [o.kind, _b(o.value)] for p, o in outputs.items() if o.value != v}
        if off:
            bad.append(("agreement", {"commit": _b(v), "others": off}))
    vals = set(inputs.values())
    if len(vals) == 1:
        (v,) = vals
        off = {p: [o.kind, _b(o.value)] for p, o in outputs.items() if o != CommitAdoptOutput(COMMIT, v)}
        if off:
            bad.append(("validity", {"input": _b(v), "outputs": off}))
    return bad


def run_commit_adopt_script(schedule: ParticipationSchedule, inputs: Mapping[int, bytes],
                            script: Sequence[Mapping[int, Shape]]) -> dict[int, CommitAdoptOutput | None]:
    procs = sorted(inputs)
    cores = {p: CommitAdopt(inputs[p]) for p in procs}
    NoEqEngine(schedule, cores, ScriptedShapes(script, procs)).run()
    return {p: c.output for p, c in cores.items()}


def commit_adopt_check(n: int, impersonated: Iterable[int] | None = None, alphabet: Sequence[bytes] = (b"v", b"w"),
                       inputs: Sequence[Mapping[int, bytes]] | None = None) -> Report:
    """Agreement, validity and termination of commit-adopt under every no-eq behavior.

    ``impersonated`` is the constant impersonated set (default: every valid
    singleton, or none when n is too small); inputs default to every
    assignment over ``alphabet``.
    """
    procs = list(range(1, n + 1))
    if impersonated is None:
        fsets = [frozenset((p,)) for p in procs] if n >= 3 else [frozenset()]
    else:
        fsets = [frozenset(impersonated)]
    msgs = commit_adopt_messages(alphabet)
    rep = Report("commit_adopt", {"n": n, "impersonated": [sorted(f) for f in fsets],
                                  "alphabet": [_b(a) for a in alphabet]},
                 ["static shape scripts cover adaptive adversaries because runs are deterministic",
                  "adversary messages range over the protocol's own payloads for the alphabet"])
    for f in fsets:
        sched = ParticipationSchedule.constant(procs, f, 2)
        if validate_schedule(sched):
            raise ValueError(f"impersonated set {sorted(f)} is not valid for n={n}")
        input_sets = inputs if inputs is not None else [
            dict(zip(procs, c)) for c in itertools.product(alphabet, repeat=n)]
        for inp in input_sets:
            for script in enumerate_noeq_behaviors(sched, [], msgs, procs):
                outs = run_commit_adopt_script(sched, inp, script)
                rep.behaviors_checked += 1
                for prop, witness in _ca_properties(inp, outs):
                    rep.violate(prop, {"task": "commit_adopt", "schedule": sched.to_json(),
                                       "inputs": _inputs_json(inp),
                                       "shapes": ScriptedShapes(script, procs).to_json()}, witness)
    return rep


# -- deterministic conciliator --------------------------------------------------------

_GARBAGE = Tagged("garbage")


def _det_round_options(j: int, n: int, f: int, round_: int, prev_honest: Iterable[Any],
                       alphabet: Sequence[bytes], final_values: Iterable[bytes] = ()) -> list[frozenset]:
    """Injections on one link that the conciliator can tell apart.

    Round 1: fresh chains of length one signed by f.  Relay rounds: f's
    signature over a previous-round chain that f has not signed.  Anything
    else in rounds 1..N fails the chain check and is ignored.  Final round:
    any set of the values honest processors send, or a non-value that only
    makes f heard of.  Once f is heard of, a value no honest processor sends
    has one supporter among at least three and behaves like the non-value.
    """
    if j == 1:
        atoms = [SignedMessage(f, round_, v) for v in alphabet]
    elif j <= n:
        atoms = [SignedMessage(f, round_, c) for c in sorted_payloads(set(prev_honest))
                 if isinstance(c, SignedMessage) and all(x.signer != f for x in c.chain())]
    else:
        atoms = sorted(set(final_values))
        return [frozenset(s) for s in _subsets_any(atoms)] + [frozenset((_GARBAGE,))]
    return [frozenset(s) for s in _subsets_any(atoms)]


def _subsets_any(items: Sequence[Any]) -> list[tuple]:
    return [c for k in range(len(items) + 1) for c in itertools.combinations(items, k)]


def det_conciliator_check(n_rounds: int = 2, processors: int = 3, alphabet: Sequence[bytes] = (b"1", b"2", b"3"),
                          inputs: Sequence[Mapping[int, bytes]] | None = None,
                          sample_engine_checks: int = 200, seed: int = 0) -> Report:
    """Every growing single-processor adversary against the relay conciliator with constant participation.

    Rounds before N are enumerated jointly on the engine.  In round N and the
    final round a receiver's state depends only on its own links, so each
    receiver's options are evaluated once and combined; a seeded sample of
    joint choices is replayed end to end on the engine to confirm this.
    """
    N = n_rounds
    procs = list(range(1, processors + 1))
    check_envelope(processors, N + 1, len(alphabet))
    if inputs is None:
        inputs = [dict(zip(procs, alphabet[:processors]))] if len(alphabet) >= processors else [
            dict(zip(procs, c)) for c in itertools.product(alphabet, repeat=processors)]
    rep = Report("det_conciliator", {"N": N, "processors": processors, "alphabet": [_b(a) for a in alphabet],
                                     "inputs": [_inputs_json(i) for i in inputs]},
                 ["injections that fail the chain check in rounds 1..N are omitted; they cannot change any state",
                  "final-round values no honest processor sends are represented by one non-value",
                  "round-N and final-round links are combined per receiver; joint choices are sampled on the engine"])
    rep.stats = {"prefixes": 0, "joint_round_n": 0, "engine_samples": 0, "e_equal_checks": 0}
    rng = random.Random(f"{seed}:det-check")
    schedules = [(None, None)] + [(f, t) for f in procs for t in range(1, N + 2)]
    n_leaves = 0
    for f, t in schedules:
        rounds = [(procs, [f] if f is not None and r >= t else []) for r in range(1, N + 2)]
        sched = ParticipationSchedule.from_sets(rounds)
        if validate_schedule(sched):
            raise ValueError("the deterministic check needs |F| < |W| in every round")
        for inp in inputs:
            n_leaves += 1
            _det_dfs(rep, sched, inp, N, f, alphabet, [], rng, sample_engine_checks)
    return rep


def _det_run_prefix(sched: ParticipationSchedule, inp: Mapping[int, bytes], N: int,
                    script: Sequence[Mapping]) -> tuple[dict[int, DetConciliator], IIABEngine]:
    procs = {p: DetConciliator(p, inp[p], N, 1) for p in sorted(inp)}
    eng = IIABEngine(sched, procs, ScriptedInjections(script), 0, keep_history=True)
    eng.run(rounds=len(script))
    return procs, eng


def _det_dfs(rep: Report, sched, inp, N, f, alphabet, script, rng, samples) -> None:
    j = len(script) + 1
    if j < N:
        if f is None or f not in sched.impersonated(j):
            _det_dfs(rep, sched, inp, N, f, alphabet, script + [{}], rng, samples)
            return
        prev = []
        if j > 1:
            _, eng = _det_run_prefix(sched, inp, N, script)
            prev = [m for ms in eng.state.history[-1].honest.values() for m in ms]
        for combo in itertools.product(_det_round_options(j, N, f, j, prev, alphabet), repeat=len(inp)):
            step = {f: {q: ms for q, ms in zip(sorted(inp), combo) if ms}}
            _det_dfs(rep, sched, inp, N, f, alphabet, script + [step], rng, samples)
        return
    _det_leaf(rep, sched, inp, N, alphabet, script, rng, samples)


def _det_leaf(rep: Report, sched, inp, N, alphabet, script, rng, samples) -> None:
    procs = sorted(inp)
    rep.stats["prefixes"] += 1
    dets, eng = _det_run_prefix(sched, inp, N, script)

    # round N, per receiver
    rp = sched[N]
    honest = {p: dets[p].send(N) for p in sorted(rp.online) if p not in rp.impersonated}
    honest = {p: ms for p, ms in honest.items() if ms}
    imp_n = sorted(rp.impersonated)
    if imp_n:
        prev = [m for ms in eng.state.history[-1].honest.values() for m in ms] if N > 1 else []
        opts_n = _det_round_options(N, N, imp_n[0], N, prev, alphabet)
    else:
        opts_n = [frozenset()]
    after_n: dict[int, list[tuple[DetConciliator, frozenset]]] = {}
    for q in procs:
        seen: dict = {}
        for opt in opts_n:
            d = dets[q].fork()
            links = dict(honest)
            if imp_n and opt:
                links[imp_n[0]] = opt
            d.receive(N, ReceiveView(N, q, links))
            seen.setdefault(d.e_at_n, (d, opt))
        after_n[q] = list(seen.values())

    ever = set().union(*(sched.impersonated(r) for r in range(1, N + 1)))
    clean = [p for p in procs if p not in ever]
    rf = N + 1
    rpf = sched[rf]
    imp_f = sorted(rpf.impersonated)
    final_memo: dict = {}
    rep.behaviors_checked += len(opts_n) ** len(procs) * (1 if not imp_f else 0)
    vals = set(inp.values())
    for combo in itertools.product(*(after_n[q] for q in procs)):
        rep.stats["joint_round_n"] += 1
        state = dict(zip(procs, combo))
        rep.stats["e_equal_checks"] += 1
        es = {p: state[p][0].e_at_n for p in clean}
        step_n = {imp_n[0]: {q: state[q][1] for q in procs if state[q][1]}} if imp_n else {}
        if len(set(es.values())) > 1:
            rep.violate("e_equal", _det_script(sched, inp, script + [step_n]), {
                str(p): sorted([x, _b(v)] for x, v in e) for p, e in es.items()})
        cands = {p: state[p][0].candidate() for p in procs}
        final_honest = {p: frozenset((cands[p],)) for p in sorted(rpf.online) if p not in rpf.impersonated}
        opts_f = (_det_round_options(rf, N, imp_f[0], rf, (), alphabet, set(cands[p] for p in final_honest))
                  if imp_f else [frozenset()])
        if imp_f:
            rep.behaviors_checked += len(opts_f) ** len(procs)
        hkey = tuple(sorted((p, c) for p, (c,) in ((p, tuple(ms)) for p, ms in final_honest.items())))
        reach: dict[int, dict[bytes, frozenset]] = {}
        for q in procs:
            key = (hkey, q, cands[q])
            if key not in final_memo:
                out: dict[bytes, frozenset] = {}
                for opt in opts_f:
                    links = dict(final_honest)
                    if imp_f and opt:
                        links[imp_f[0]] = opt
                    v = state[q][0].fork().receive(rf, ReceiveView(rf, q, links))
                    out.setdefault(v, opt)
                final_memo[key] = out
            reach[q] = final_memo[key]
        union = set().union(*(set(d) for d in reach.values()))
        if len(union) > 1:
            step_f: dict = {}
            if imp_f:
                q1, v1, q2 = next((a, va, b) for a in procs for b in procs if a != b
                                  for va in reach[a] for vb in reach[b] if va != vb)
                choice = {q: next(iter(reach[q].values())) for q in procs}
                choice[q1] = reach[q1][v1]
                choice[q2] = next(o for v, o in reach[q2].items() if v != v1)
                step_f = {imp_f[0]: {q: ms for q, ms in choice.items() if ms}}
            rep.violate("agreement", _det_script(sched, inp, script + [step_n, step_f]),
                        {str(q): sorted(_b(v) for v in d) for q, d in reach.items()})
        if len(vals) == 1 and union != vals:
            rep.violate("validity", _det_script(sched, inp, script + [step_n]),
                        {"reachable": sorted(_b(v) for v in union)})
        if samples and rng.random() < samples / 1500:
            rep.stats["engine_samples"] += 1
            fin = {q: rng.choice(list(reach[q].items())) for q in procs}
            step_f = {imp_f[0]: {q: o for q, (_, o) in fin.items() if o}} if imp_f else {}
            full, _ = _det_run_prefix(sched, inp, N, script + [step_n, step_f])
            for q in procs:
                if full[q].output != fin[q][0] or full[q].e_at_n != state[q][0].e_at_n:
                    rep.violate("product_mismatch", _det_script(sched, inp, script + [step_n, step_f]),
                                {"processor": q, "engine": _b(full[q].output), "predicted": _b(fin[q][0])})


def _det_script(sched: ParticipationSchedule, inp: Mapping[int, bytes], script: Sequence[Mapping]) -> dict:
    return {"task": "det_conciliator", "N": sched.horizon - 1, "schedule": sched.to_json(),
            "inputs": _inputs_json(inp), "injections": ScriptedInjections(script).to_json()}


# -- simulation conformance ----------------------------------------------------------


def _fresh(i: int) -> bytes:
    return b"\xfe" + bytes([i])


def simulation_conformance_check(n: int = 3, alphabet: Sequence[bytes] = (b"a", b"b"), *, fresh: int = 1,
                                 reduced: bool = True, impersonated_a: Sequence[int] | None = None,
                                 engine_samples: int = 40, native_samples: int = 40, seed: int = 0) -> Report:
    """Classify every delivery profile the two simulation rounds can produce.

    Round-A injections: any subset of f's signatures over the alphabet and
    ``fresh`` fresh symbols, per link.  Round-B injections: any subset of
    claims over messages already on some link, or a message that only makes
    the relayer heard of.  Without ``reduced``, round-B noise comes in three
    forms (a fresh value, a replayed round-A message, a claim-shaped
    signature over a fresh symbol) instead of one.

    Deliveries at the end of round B depend only on each receiver's own
    round-B links, so profiles are checked as products of per-receiver
    outcome sets.  Seeded samples replay joint choices on the engine and on
    the native no-eq engine to confirm both the product argument and that
    each profile is natively reachable.
    """
    procs = list(range(1, n + 1))
    contents = list(alphabet) + [_fresh(i) for i in range(fresh)]
    check_envelope(n, 2, len(alphabet))
    rep = Report("simulation_conformance",
                 {"n": n, "alphabet": [_b(a) for a in alphabet], "fresh": fresh, "reduced": reduced},
                 ["processor relabelling: the round-A impersonated set is fixed to the listed choices",
                  f"injected contents: honest alphabet plus {fresh} fresh symbol(s)",
                  "round-B links are checked per receiver; joint choices are sampled on the engine"])
    rep.stats = {"round_a_behaviors": 0, "engine_samples": 0, "native_samples": 0}
    rep.signatures = {}  # type: ignore[attr-defined]
    rng = random.Random(f"{seed}:sim-check")
    fa_choices = [frozenset()] + ([frozenset((p,)) for p in (impersonated_a or procs)] if n >= 3 else [])
    fb_choices = [frozenset()] + ([frozenset((p,)) for p in procs] if n >= 3 else [])
    p_engine = engine_samples / 4000
    p_native = native_samples / 4000
    for fa in fa_choices:
        for fb in fb_choices:
            sched = ParticipationSchedule.from_sets([(procs, fa), (procs, fb)])
            wa = [p for p in procs if p not in fa]
            for combo in itertools.product(alphabet, repeat=len(wa)):
                payloads = dict(zip(wa, combo))
                key = (tuple(sorted(fa)), tuple(sorted(fb)), tuple(sorted(payloads.items())))
                sigs: set = set()
                for a_step in _round_a_behaviors(fa, procs, contents):
                    rep.stats["round_a_behaviors"] += 1
                    _conformance_one(rep, sched, procs, payloads, a_step, fb, reduced, sigs, rng,
                                     p_engine, p_native)
                rep.signatures[key] = sigs  # type: ignore[attr-defined]
    return rep


def _round_a_behaviors(fa: frozenset, procs: Sequence[int], contents: Sequence[bytes]) -> Iterator[dict]:
    if not fa:
        yield {}
        return
    (f,) = sorted(fa)
    atoms = [SignedMessage(f, 1, c) for c in contents]
    subsets = [frozenset(s) for s in _subsets_any(atoms)]
    for combo in itertools.product(subsets, repeat=len(procs)):
        yield {f: {q: ms for q, ms in zip(procs, combo) if ms}}


def _round_b_options(g: int, ledger_msgs: Sequence[SignedMessage], reduced: bool) -> list[frozenset]:
    claims = [SignedMessage(g, 2, m) for m in ledger_msgs]
    opts = [frozenset(s) for s in _subsets_any(claims)]
    if reduced:
        noise = [frozenset((_fresh(200),))]
    else:
        noise = [frozenset((_fresh(200),)), frozenset((SignedMessage(g, 2, _fresh(201)),))]
        if ledger_msgs:
            noise.append(frozenset((ledger_msgs[0],)))
    return opts + noise


def _conformance_one(rep: Report, sched, procs, payloads, a_step, fb, reduced, sigs, rng, p_engine, p_native):
    # round A, through the real relay code
    honest_a = {h: frozenset((SignedMessage(h, 1, m),)) for h, m in payloads.items()}
    ledger = Ledger()
    bad = validate_injection(ledger, 1, sched.impersonated(1), a_step)
    if bad:
        raise AssertionError(f"enumerated an illegal round-A move: {bad[0]}")
    relays = {}
    for q in procs:
        links = dict(honest_a)
        for f, per in a_step.items():
            if per.get(q):
                links[f] = per[q]
        relay = Algorithm1Relay(q, 1)
        relay.receive_a(ReceiveView(1, q, links))
        relays[q] = relay
    for ms in honest_a.values():
        for m in ms:
            ledger.record(m, 1)
    for per in a_step.values():
        for ms in per.values():
            for m in ms:
                ledger.record(m, 1)
    ledger_msgs = sorted_payloads(ledger.seen)

    # round B
    wb = [p for p in procs if p not in fb]
    honest_b = {h: relays[h].send_b() for h in wb}
    honest_b = {h: ms for h, ms in honest_b.items() if ms}
    if fb:
        (g,) = sorted(fb)
        opts = _round_b_options(g, ledger_msgs, reduced)
        bad = validate_injection(ledger, 2, fb, {g: {q: o for q, o in zip(procs, opts) if o}})
        if bad:
            raise AssertionError(f"enumerated an illegal round-B move: {bad[0]}")
    else:
        g, opts = None, [frozenset()]
    outcomes: dict[int, list[tuple[dict, frozenset]]] = {}
    for q in procs:
        seen: dict = {}
        for opt in opts:
            links = dict(honest_b)
            if g is not None and opt:
                links[g] = opt
            d = relays[q].receive_b(ReceiveView(2, q, links))
            k = tuple(sorted(((s, payload_key(m)) for s, m in d.items())))
            if k not in seen:
                seen[k] = (d, opt)
        outcomes[q] = list(seen.values())
    rep.behaviors_checked += len(opts) ** len(procs)

    script = {"task": "simulation_conformance", "schedule": sched.to_json(),
              "payloads": {str(p): _b(v) for p, v in payloads.items()},
              "injections": ScriptedInjections([a_step]).to_json()}

    # honest round-A payloads arrive everywhere
    for h, m in payloads.items():
        for q in procs:
            for d, opt in outcomes[q]:
                if d.get(h) != m:
                    rep.violate("honest_case2", script, {"subject": h, "receiver": q,
                                                          "got": _show(d.get(h))})
    # per-subject classification over the product of per-receiver outcomes
    subjects = sorted(set().union(*(set(d) for outs in outcomes.values() for d, _ in outs)) | set(procs))
    per_subject_cases = {}
    for s in subjects:
        proj = [sorted({_token(d.get(s)) for d, _ in outcomes[q]}) for q in procs]
        cases = set()
        for combo in itertools.product(*proj):
            views = {q: ReceiveView.noeq(2, q, {} if tok[0] == "none" else {s: _untoken(tok)})
                     for q, tok in zip(procs, combo)}
            c = classify_delivery_profile(views, s)
            cases.add(c)
            if c == INVALID:
                rep.violate("case_validity", script, {"subject": s, "profile": [list(t) for t in combo]})
        if s not in sched.online(1) and cases != {1}:
            rep.violate("offline_subject", script, {"subject": s})
        per_subject_cases[s] = tuple(sorted(cases, key=str))
    sigs.add(tuple(sorted(per_subject_cases.items())))
    # no two receivers can see different majorities
    maj = {q: set() for q in procs}
    for q in procs:
        for d, _ in outcomes[q]:
            heard = len(d)
            cnt: dict = {}
            for m in d.values():
                if m is not LAMBDA:
                    cnt[payload_key(m)] = cnt.get(payload_key(m), 0) + 1
            maj[q] |= {k for k, c in cnt.items() if 2 * c > heard}
    for q1, q2 in itertools.combinations(procs, 2):
        if any(a != b for a in maj[q1] for b in maj[q2]):
            rep.violate("conflicting_majorities", script, {"receivers": [q1, q2]})

    if rng.random() < p_engine:
        rep.stats["engine_samples"] += 1
        choice = {q: rng.choice(outcomes[q]) for q in procs}
        b_step = {g: {q: opt for q, (_, opt) in choice.items() if opt}} if g is not None else {}
        sim = simulate_noeq_round(sched, payloads, ScriptedInjections([a_step, b_step]), observers=procs)
        for q in procs:
            got = {s: sim[q].message(s) for s in sim[q].links}
            if got != choice[q][0]:
                rep.violate("product_mismatch", {**script, "injections": ScriptedInjections(
                    [a_step, b_step]).to_json()}, {"receiver": q})
    if rng.random() < p_native:
        rep.stats["native_samples"] += 1
        choice = {q: rng.choice(outcomes[q])[0] for q in procs}
        _check_native_reachable(rep, sched, procs, payloads, choice, script)


def _token(m: Any) -> tuple:
    if m is None:
        return ("none",)
    if m is LAMBDA:
        return ("lambda",)
    return ("msg", payload_key(m), m)


def _untoken(tok: tuple) -> Any:
    return LAMBDA if tok[0] == "lambda" else tok[2]


def _show(m: Any) -> Any:
    return None if m is None else payload_to_json(m)


def _check_native_reachable(rep, sched, procs, payloads, choice, script) -> None:
    """Build the shape each impersonated subject needs and replay it on the native engine."""
    step = {}
    fa = sched.impersonated(1)
    for s in sorted(fa):
        got = {q: choice[q].get(s) for q in procs}
        msgs = {m for m in got.values() if m is not None and m is not LAMBDA}
        lam = frozenset(q for q, m in got.items() if m is LAMBDA)
        if msgs:
            (m,) = msgs
            to = frozenset(q for q, x in got.items() if x == m)
            step[s] = Uniform(m) if len(to) == len(procs) else Split(m, to)
        elif lam:
            step[s] = LambdaOnly(lam)
        else:
            step[s] = Silent()
    native_sched = ParticipationSchedule.constant(procs, fa, 1)
    eng = NoEqEngine(native_sched, {p: _Fixed(payloads.get(p, b"")) for p in procs}, ScriptedShapes([step], procs))
    views = eng.run_round()
    for v in views:
        got = {s: v.message(s) for s in v.links}
        if got != choice[v.receiver]:
            rep.violate("not_natively_reachable", script, {"receiver": v.receiver})


def conformance_signatures_agree(a: Report, b: Report) -> list:
    """Keys whose reachable per-subject case patterns differ between two conformance runs."""
    sa, sb = a.signatures, b.signatures  # type: ignore[attr-defined]
    return [k for k in sorted(set(sa) | set(sb)) if sa.get(k) != sb.get(k)]


# -- dispatch and replay -------------------------------------------------------------

TASKS = {
    "commit_adopt": commit_adopt_check,
    "det_conciliator": det_conciliator_check,
    "simulation_conformance": simulation_conformance_check,
    "noeq_theorems": noeq_theorems_check,
    "example1_native": example1_native_check,
}


def exhaustive_task_check(task: str, **params: Any) -> Report:
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; known: {', '.join(sorted(TASKS))}")
    return TASKS[task](**params)


def replay_behavior(script: Mapping[str, Any]) -> list[str]:
    """Re-run a behavior script from a report; returns the properties it violates."""
    task = script["task"]
    sched = ParticipationSchedule.from_json(script["schedule"])
    if task == "commit_adopt":
        inp = _inputs_from_json(script["inputs"])
        shapes = ScriptedShapes.from_json(script["shapes"], receivers=sorted(inp))
        outs = run_commit_adopt_script(sched, inp, shapes.script)
        return sorted({p for p, _ in _ca_properties(inp, outs)})
    if task == "det_conciliator":
        inp = _inputs_from_json(script["inputs"])
        N = script["N"]
        adv = ScriptedInjections.from_json(script["injections"])
        procs = {p: DetConciliator(p, inp[p], N, 1) for p in sorted(inp)}
        IIABEngine(sched, procs, adv).run(rounds=len(adv.script))
        out = []
        if len(adv.script) == N + 1 and len({d.output for d in procs.values()}) > 1:
            out.append("agreement")
        ever = set().union(*(sched.impersonated(r) for r in range(1, N + 1)))
        es = {d.e_at_n for p, d in procs.items() if p not in ever and d.e_at_n is not None}
        if len(es) > 1:
            out.append("e_equal")
        return out
    if task == "simulation_conformance":
        payloads = {int(p): payload_from_json({"value": v}) for p, v in script["payloads"].items()}
        adv = ScriptedInjections.from_json(script["injections"])
        procs = sorted(sched.universe())
        sim = simulate_noeq_round(sched, payloads, adv, observers=procs)
        out = set()
        for s in procs:
            if classify_delivery_profile(sim, s) == INVALID:
                out.add("case_validity")
        for h, m in payloads.items():
            if any(sim[q].message(h) != m for q in procs):
                out.add("honest_case2")
        return sorted(out)
    raise ValueError(f"cannot replay task {task!r}")
