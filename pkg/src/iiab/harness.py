"""Experiment runner: config loading, seeded runs, exhaustive checks, summaries and replay."""

from __future__ import annotations

import copy
import hashlib
import inspect
import json
import math
import os
import random
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import jsonschema

from .adversaries import (
    IIAB_STRATEGIES,
    LEADER_POLICIES,
    NOEQ_STRATEGIES,
    SCHEDULES,
    StrategyDescriptor,
    build_adversary,
    schedule_generators,
)
from .checker import TASKS, EnvelopeExceeded, exhaustive_task_check, replay_behavior
from .engine import EngineAbort, Trace
from .model import ParticipationSchedule, payload_from_json
from .protocols import generic_consensus

VERSION = "0.1.0"
OUTPUT_ENV = "IIAB_OUTPUT_DIR"

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_CONFIG = 2
EXIT_REPLAY = 3

CONFIG_SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "mode"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": 1},
        "name": {"type": "string"},
        "mode": {"enum": ["simulate", "exhaustive", "montecarlo"]},
        "protocol": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["probabilistic", "deterministic", "task"]},
                "backend": {"enum": ["iiab", "noeq"]},
                "task": {"enum": sorted(TASKS)},
                "params": {"type": "object"},
            },
        },
        "schedule": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": sorted(SCHEDULES) + ["explicit"]},
                "params": {"type": "object"},
                "rounds": {"type": "array"},
            },
        },
        "adversary": {
            "type": "object",
            "required": ["name"],
            "additionalProperties": False,
            "properties": {
                "name": {"enum": sorted(IIAB_STRATEGIES) + sorted(NOEQ_STRATEGIES)},
                "params": {"type": "object"},
            },
        },
        "inputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["split", "unanimous", "random", "explicit"]},
                "values": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "map": {"type": "object", "additionalProperties": {"type": "string"}},
            },
        },
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "policy": {"const": "honest"},
                "leaders": {"enum": sorted(LEADER_POLICIES)},
            },
        },
        "seeds": {
            "oneOf": [
                {"type": "array", "items": {"type": "integer"}, "minItems": 1},
                {"type": "object", "required": ["count"], "additionalProperties": False,
                 "properties": {"count": {"type": "integer", "minimum": 1}, "base": {"type": "integer"}}},
            ]
        },
        "max_rounds": {"type": "integer", "minimum": 1},
        "rushing": {"type": "boolean"},
        "liveness": {"enum": ["expect", "ignore"]},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "traces": {"type": "boolean"},
                "links": {"type": "boolean"},
                "workers": {"type": "integer", "minimum": 1},
            },
        },
    },
}


class ConfigError(ValueError):
    """The config is not schema-valid or names something unregistered."""


class ReplayRefused(ValueError):
    """The artifact was produced by another tool version or is pinned to another seed."""


@dataclass
class ExperimentConfig:
    mode: str
    protocol: dict = field(default_factory=lambda: {"kind": "probabilistic", "backend": "iiab"})
    schedule: dict = field(default_factory=lambda: {"kind": "constant", "params": {"online": [1, 2, 3]}})
    adversary: dict = field(default_factory=lambda: {"name": "silent"})
    inputs: dict = field(default_factory=lambda: {"kind": "split", "values": ["0", "1"]})
    oracle: dict = field(default_factory=lambda: {"policy": "honest"})
    seeds: Any = field(default_factory=lambda: [0])
    max_rounds: int = 512
    rushing: bool = True
    liveness: str = "expect"
    output: dict = field(default_factory=dict)
    name: str = "experiment"

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> ExperimentConfig:
        try:
            jsonschema.validate(data, CONFIG_SCHEMA)
        except jsonschema.ValidationError as e:
            where = "/".join(str(x) for x in e.absolute_path) or "<root>"
            raise ConfigError(f"config schema error at {where}: {e.message}") from None
        d = {k: copy.deepcopy(v) for k, v in data.items() if k != "schema"}
        cfg = cls(**d)
        cfg._check()
        return cfg

    @classmethod
    def load(cls, path: str | os.PathLike) -> ExperimentConfig:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not JSON: {e}") from None
        return cls.from_json(data)

    def to_json(self) -> dict:
        d = asdict(self)
        return {"schema": 1, **d}

    def _check(self) -> None:
        kind = self.protocol.get("kind", "probabilistic")
        backend = self.protocol.get("backend", "iiab")
        if self.mode == "exhaustive":
            if kind != "task" or "task" not in self.protocol:
                raise ConfigError("exhaustive mode needs protocol.kind = task and a protocol.task name")
            return
        if kind == "task":
            raise ConfigError("single tasks run only in exhaustive mode")
        if kind == "deterministic" and backend != "iiab":
            raise ConfigError("the deterministic conciliator runs on the IIAB backend only")
        name = self.adversary["name"]
        if backend == "noeq" and name not in NOEQ_STRATEGIES:
            raise ConfigError(f"strategy {name!r} injects raw IIAB messages and cannot drive the no-eq backend")
        if self.schedule["kind"] == "explicit" and "rounds" not in self.schedule:
            raise ConfigError("an explicit schedule needs a rounds list")
        fb = self.adversary.get("params", {}).get("fallback")
        if fb is not None and fb not in IIAB_STRATEGIES:
            raise ConfigError(f"unknown fallback strategy {fb!r}")
        if self.inputs.get("kind") == "explicit" and "map" not in self.inputs:
            raise ConfigError("explicit inputs need a map")

    @property
    def seed_list(self) -> list[int]:
        if isinstance(self.seeds, list):
            return list(self.seeds)
        base = self.seeds.get("base", 0)
        return list(range(base, base + self.seeds["count"]))

    @property
    def backend(self) -> str:
        return self.protocol.get("backend", "iiab")

    @property
    def conciliator(self) -> str:
        return self.protocol.get("kind", "probabilistic")

    def output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.output.get("dir") or "iiab-out")

    def write_traces(self) -> bool:
        return self.output.get("traces", self.mode == "simulate")


# -- per-run construction ------------------------------------------------------------


def build_schedule(cfg: ExperimentConfig, seed: int) -> ParticipationSchedule:
    """The run's schedule; generators get the run seed and a horizon matching the round cap unless given."""
    sch = cfg.schedule
    if sch["kind"] == "explicit":
        return ParticipationSchedule.from_json({"rounds": sch["rounds"]})
    params = dict(sch.get("params", {}))
    gen = SCHEDULES[sch["kind"]]
    accepted = inspect.signature(gen).parameters
    unknown = set(params) - set(accepted)
    if unknown:
        raise ConfigError(f"schedule {sch['kind']!r} has no parameters {sorted(unknown)}")
    if "seed" in accepted and "seed" not in params:
        params["seed"] = seed
    if "horizon" in accepted and "horizon" not in params:
        params["horizon"] = cfg.max_rounds if cfg.backend == "iiab" else max(1, cfg.max_rounds // 2)
    try:
        return schedule_generators(sch["kind"], **params)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"schedule {sch['kind']!r}: {e}") from None


def build_inputs(cfg: ExperimentConfig, schedule: ParticipationSchedule, seed: int) -> dict[int, bytes]:
    procs = sorted(schedule.universe())
    how = cfg.inputs
    kind = how.get("kind", "split")
    values = [v.encode() for v in how.get("values", ["0", "1"])]
    if kind == "explicit":
        given = {int(p): v.encode() for p, v in how["map"].items()}
        missing = set(procs) - set(given)
        if missing:
            raise ConfigError(f"explicit inputs miss processors {sorted(missing)}")
        return {p: given[p] for p in procs}
    if kind == "unanimous":
        return {p: values[0] for p in procs}
    if kind == "random":
        rng = random.Random(f"{seed}:inputs")
        return {p: rng.choice(values) for p in procs}
    return {p: values[i % len(values)] for i, p in enumerate(procs)}


def build_run_adversary(cfg: ExperimentConfig) -> Any:
    params = dict(cfg.adversary.get("params", {}))
    if "leaders" in cfg.oracle and "leaders" not in params:
        params["leaders"] = cfg.oracle["leaders"]
    try:
        return build_adversary(StrategyDescriptor(cfg.adversary["name"], params), cfg.backend)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"adversary {cfg.adversary['name']!r}: {e}") from None


# -- harness-level quantities ---------------------------------------------------------


def stabilization_round(cfg: ExperimentConfig, schedule: ParticipationSchedule) -> int | None:
    """R from the schedule config: the generator's R, 1 for constant online sets, None otherwise."""
    kind = cfg.schedule["kind"]
    if kind == "stabilizing_at":
        return int(cfg.schedule["params"]["R"])
    if kind in ("constant", "growing_adversary"):
        return 1
    online = [schedule.online(r) for r in range(1, schedule.horizon + 1)]
    r = len(online)
    while r > 1 and online[r - 2] == online[-1]:
        r -= 1
    return r if kind == "explicit" else None


def late_impersonated(schedule: ParticipationSchedule, R: int) -> frozenset[int]:
    """Every processor impersonated in some round R or later."""
    out: frozenset[int] = frozenset()
    for r in range(R, schedule.horizon + 1):
        out |= schedule.impersonated(r)
    return out


def b_value(k: int) -> int:
    """⌈log2 k⌉ + 1, with k = 0 mapped to 1 since no phase is ever shorter than N = 2."""
    return 1 if k <= 1 else math.ceil(math.log2(k)) + 1


def det_round_bound(R: int, k: int) -> int:
    """Decision deadline checked for deterministic consensus after stabilization at R with k late impersonators."""
    b = b_value(k)
    return R + 3 * b + sum(2 ** i + 1 for i in range(1, b + 1)) + 4 * (b + 1)


# -- runs ----------------------------------------------------------------------------


@dataclass
class RunResult:
    seed: int
    decided: dict[int, bool]
    decision_round: dict[int, int | None]
    agreement_ok: bool
    validity_ok: bool
    aborted: str | None = None
    rounds_run: int = 0
    decision_values: list[str] = field(default_factory=list)
    trace_sha256: str | None = None
    trace_file: str | None = None
    R: int | None = None
    late_impersonated: int | None = None
    b: int | None = None
    round_bound: int | None = None
    liveness_expected: bool = True

    @property
    def all_decided(self) -> bool:
        return all(self.decided.values())

    @property
    def last_decision(self) -> int | None:
        rounds = [r for r in self.decision_round.values() if r is not None]
        return max(rounds) if rounds and self.all_decided else None

    @property
    def safety_ok(self) -> bool:
        return self.agreement_ok and self.validity_ok and self.aborted is None

    @property
    def live_ok(self) -> bool:
        if not self.liveness_expected:
            return True
        if not self.all_decided:
            return False
        return self.round_bound is None or self.last_decision <= self.round_bound

    def to_json(self) -> dict:
        d = asdict(self)
        d["decided"] = {str(p): v for p, v in self.decided.items()}
        d["decision_round"] = {str(p): v for p, v in self.decision_round.items()}
        d["last_decision"] = self.last_decision
        return d


def trace_verdict(trace_text: str, inputs: Mapping[int, bytes]) -> tuple[dict[int, tuple[int, str]], bool, bool]:
    """Decisions, agreement and validity read from a JSON-lines trace alone."""
    decisions: dict[int, tuple[int, str]] = {}
    for line in trace_text.splitlines():
        rec = json.loads(line)
        if rec.get("type") == "decision":
            decisions.setdefault(rec["processor"], (rec["round"], rec["decision"]))
    values = {v for _, v in decisions.values()}
    agreement = len(values) <= 1
    in_values = {payload_from_json({"value": v}) for v in values}
    validity = len(set(inputs.values())) != 1 or in_values <= set(inputs.values())
    return decisions, agreement, validity


def run_one(cfg: ExperimentConfig, seed: int, *, links: bool | None = None) -> tuple[RunResult, str]:
    """One seeded consensus run; returns the result and its trace text."""
    schedule = build_schedule(cfg, seed)
    inputs = build_inputs(cfg, schedule, seed)
    adversary = build_run_adversary(cfg)
    trace = Trace(links=cfg.output.get("links", True) if links is None else links)
    aborted = None
    rounds_run = 0
    try:
        run = generic_consensus(inputs, schedule, adversary, conciliator=cfg.conciliator, backend=cfg.backend,
                                seed=seed, max_rounds=cfg.max_rounds, trace=trace, rushing=cfg.rushing)
        rounds_run = run.rounds_run
    except EngineAbort as e:
        aborted = str(e)
        trace.emit(type="abort", message=aborted)
    text = trace.dumps()
    decisions, agreement, validity = trace_verdict(text, inputs)
    res = RunResult(
        seed=seed,
        decided={p: p in decisions for p in inputs},
        decision_round={p: decisions[p][0] if p in decisions else None for p in inputs},
        agreement_ok=agreement, validity_ok=validity, aborted=aborted, rounds_run=rounds_run,
        decision_values=sorted({v for _, v in decisions.values()}),
        trace_sha256=hashlib.sha256(text.encode()).hexdigest(),
        liveness_expected=cfg.mode == "simulate" and cfg.liveness == "expect",
    )
    R = stabilization_round(cfg, schedule)
    if R is not None and R <= schedule.horizon:
        k = len(late_impersonated(schedule, R))
        res.R, res.late_impersonated, res.b = R, k, b_value(k)
        if cfg.conciliator == "deterministic":
            res.round_bound = det_round_bound(R, k)
    return res, text


@dataclass
class RunSummary:
    name: str
    mode: str
    version: str
    runs: list[RunResult] = field(default_factory=list)
    report: dict | None = None
    error: str | None = None

    @property
    def violation_count(self) -> int:
        if self.report is not None:
            return len(self.report["violations"])
        return sum(not r.safety_ok for r in self.runs)

    @property
    def liveness_failures(self) -> int:
        return sum(not r.live_ok for r in self.runs)

    def aggregate(self) -> dict:
        rounds = [r.last_decision for r in self.runs if r.last_decision is not None]
        agg: dict[str, Any] = {"runs": len(self.runs), "all_decided_runs": len(rounds),
                               "violations": self.violation_count, "aborts": sum(r.aborted is not None for r in self.runs),
                               "liveness_failures": self.liveness_failures}
        if self.report is not None:
            agg.update(behaviors_checked=self.report["behaviors_checked"],
                       not_applicable=self.report["not_applicable"])
        if rounds:
            q = sorted(rounds)
            agg.update(mean_decision_round=statistics.fmean(rounds), median_decision_round=statistics.median(rounds),
                       p95_decision_round=q[min(len(q) - 1, math.ceil(0.95 * len(q)) - 1)],
                       max_decision_round=q[-1])
        return agg

    @property
    def exit_code(self) -> int:
        if self.error is not None:
            return EXIT_CONFIG
        if self.violation_count or self.liveness_failures:
            return EXIT_VIOLATION
        return EXIT_OK

    def to_json(self) -> dict:
        d: dict[str, Any] = {"name": self.name, "mode": self.mode, "version": self.version,
                             "aggregate": self.aggregate(), "exit_code": self.exit_code}
        if self.report is not None:
            d["report"] = self.report
        if self.runs:
            d["runs"] = [r.to_json() for r in self.runs]
        if self.error is not None:
            d["error"] = self.error
        return d


def _run_seed(args: tuple[dict, int, bool]) -> tuple[RunResult, str]:
    cfg_json, seed, links = args
    return run_one(ExperimentConfig.from_json(cfg_json), seed, links=links)


def run_experiment(cfg: ExperimentConfig, *, write: bool = True) -> RunSummary:
    """Execute every seed (or the exhaustive check) and optionally write the summary and traces."""
    summary = RunSummary(cfg.name, cfg.mode, VERSION)
    out = cfg.output_dir()
    if cfg.mode == "exhaustive":
        try:
            rep = exhaustive_task_check(cfg.protocol["task"], **cfg.protocol.get("params", {}))
        except EnvelopeExceeded as e:
            summary.error = str(e)
        except TypeError as e:
            raise ConfigError(f"task {cfg.protocol['task']!r}: {e}") from None
        else:
            summary.report = rep.to_json()
    else:
        traces = write and cfg.write_traces()
        links = cfg.output.get("links", traces)
        seeds = cfg.seed_list
        workers = cfg.output.get("workers", 1)
        if workers > 1:
            with ProcessPoolExecutor(workers) as pool:
                results = list(pool.map(_run_seed, [(cfg.to_json(), s, links) for s in seeds], chunksize=16))
        else:
            results = [run_one(cfg, s, links=links) for s in seeds]
        results.sort(key=lambda rt: rt[0].seed)
        for res, text in results:
            if traces:
                res.trace_file = _write_run_artifact(out, cfg, res, text)
            summary.runs.append(res)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(json.dumps(summary.to_json(), indent=2, sort_keys=True) + "\n")
        if summary.report is not None:
            (out / "report.json").write_text(json.dumps(
                {"kind": "report", "version": VERSION, **summary.report}, indent=2, sort_keys=True) + "\n")
    return summary


def _write_run_artifact(out: Path, cfg: ExperimentConfig, res: RunResult, text: str) -> str:
    tdir = out / "traces"
    tdir.mkdir(parents=True, exist_ok=True)
    name = f"seed-{res.seed}.jsonl"
    (tdir / name).write_text(text)
    art = {"kind": "run", "version": VERSION, "seed": res.seed, "config": cfg.to_json(),
           "links": cfg.output.get("links", True), "trace": name, "trace_sha256": res.trace_sha256}
    (tdir / f"seed-{res.seed}.run.json").write_text(json.dumps(art, indent=2, sort_keys=True) + "\n")
    return str(tdir / name)


# -- replay --------------------------------------------------------------------------


@dataclass
class ReplayResult:
    kind: str
    identical: bool
    detail: dict = field(default_factory=dict)


def replay(artifact: str | os.PathLike | Mapping[str, Any], *, seed: int | None = None) -> ReplayResult:
    """Re-execute a run artifact and byte-compare its trace, or re-check a report's violation scripts."""
    path = None
    if isinstance(artifact, Mapping):
        art = dict(artifact)
    else:
        path = Path(artifact)
        art = json.loads(path.read_text())
    if art.get("version") != VERSION:
        raise ReplayRefused(f"artifact version {art.get('version')!r} differs from tool version {VERSION!r}")
    if art.get("kind") == "run":
        if seed is not None and seed != art["seed"]:
            raise ReplayRefused(f"artifact pins seed {art['seed']}; refusing to replay under seed {seed}")
        cfg = ExperimentConfig.from_json(art["config"])
        res, text = run_one(cfg, art["seed"], links=art.get("links", True))
        same = res.trace_sha256 == art["trace_sha256"]
        if same and path is not None and "trace" in art:
            stored = path.parent / art["trace"]
            if stored.exists():
                same = stored.read_bytes() == text.encode()
        return ReplayResult("run", same, {"seed": art["seed"], "expected": art["trace_sha256"],
                                           "got": res.trace_sha256, "result": res.to_json()})
    if art.get("kind") == "report":
        if seed is not None:
            raise ReplayRefused("behavior scripts are deterministic and take no seed")
        mismatches = []
        for i, v in enumerate(art.get("violations", [])):
            got = replay_behavior(v["behavior_script"])
            if v["property"] not in got:
                mismatches.append({"index": i, "expected": v["property"], "got": got})
        return ReplayResult("report", not mismatches, {"violations": len(art.get("violations", [])),
                                                       "mismatches": mismatches})
    raise ReplayRefused(f"unknown artifact kind {art.get('kind')!r}")


def replay_many(artifacts: Sequence[str | os.PathLike]) -> list[ReplayResult]:
    return [replay(a) for a in artifacts]
