from __future__ import annotations

import json
import math

import pytest

from iiab.harness import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_VIOLATION,
    VERSION,
    ConfigError,
    ExperimentConfig,
    ReplayRefused,
    b_value,
    build_schedule,
    det_round_bound,
    replay,
    run_experiment,
    run_one,
    trace_verdict,
)


def cfg(**kw):
    base = {"schema": 1, "mode": "simulate", "name": "t",
            "protocol": {"kind": "probabilistic", "backend": "iiab"},
            "schedule": {"kind": "constant", "params": {"online": [1, 2, 3, 4, 5], "impersonated": [5]}},
            "adversary": {"name": "random_injector", "params": {"alphabet": ["0", "1"]}},
            "seeds": [1, 2], "max_rounds": 200}
    base.update(kw)
    return ExperimentConfig.from_json(base)


def test_schema_version_is_required():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json({"schema": 2, "mode": "simulate"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json({"mode": "simulate"})


def test_unknown_strategy_rejected():
    with pytest.raises(ConfigError, match="adversary/name"):
        cfg(adversary={"name": "byzantine_wizard"})


def test_unknown_generator_rejected():
    with pytest.raises(ConfigError):
        cfg(schedule={"kind": "sometimes"})


def test_unknown_generator_param_rejected():
    c = cfg(schedule={"kind": "constant", "params": {"online": [1, 2], "wobble": 3}})
    with pytest.raises(ConfigError):
        build_schedule(c, 0)


def test_raw_strategy_on_noeq_backend_rejected():
    with pytest.raises(ConfigError):
        cfg(protocol={"kind": "probabilistic", "backend": "noeq"})


def test_seed_count_and_base():
    assert cfg(seeds={"count": 3, "base": 7}).seed_list == [7, 8, 9]


def test_config_roundtrip():
    c = cfg()
    assert ExperimentConfig.from_json(c.to_json()) == c


@pytest.mark.parametrize("k", range(0, 40))
def test_b_value_matches_bit_length(k):
    # independent formulation: ⌈log2 k⌉ = (k-1).bit_length() for k >= 1
    expected = 1 if k == 0 else (k - 1).bit_length() + 1
    assert b_value(k) == expected
    if k >= 1:
        assert b_value(k) == math.ceil(math.log2(k)) + 1


@pytest.mark.parametrize("R,k,bound", [(1, 0, 1 + 3 + 3 + 8), (6, 1, 6 + 3 + 3 + 8), (12, 2, 12 + 6 + 8 + 12)])
def test_det_round_bound_examples(R, k, bound):
    assert det_round_bound(R, k) == bound


def test_trace_verdict_reads_decisions_only():
    text = "\n".join(json.dumps(r) for r in [
        {"type": "decision", "round": 10, "processor": 1, "decision": "dg=="},
        {"type": "decision", "round": 10, "processor": 2, "decision": "dw=="},
        {"type": "link", "round": 1},
    ])
    decisions, agreement, validity = trace_verdict(text, {1: b"v", 2: b"v"})
    assert decisions == {1: (10, "dg=="), 2: (10, "dw==")}
    assert not agreement and not validity
    assert trace_verdict("", {1: b"v"})[1:] == (True, True)


def test_simulate_writes_summary_and_traces(tmp_path, monkeypatch):
    monkeypatch.setenv("IIAB_OUTPUT_DIR", str(tmp_path))
    s = run_experiment(cfg())
    assert s.exit_code == EXIT_OK
    doc = json.loads((tmp_path / "summary.json").read_text())
    assert doc["aggregate"]["runs"] == 2 and doc["aggregate"]["violations"] == 0
    assert (tmp_path / "traces" / "seed-1.jsonl").exists()
    assert all(r["agreement_ok"] for r in doc["runs"])


def test_replay_is_byte_identical_and_pins_seed(tmp_path, monkeypatch):
    monkeypatch.setenv("IIAB_OUTPUT_DIR", str(tmp_path))
    run_experiment(cfg())
    art = tmp_path / "traces" / "seed-2.run.json"
    assert replay(art).identical
    with pytest.raises(ReplayRefused):
        replay(art, seed=3)
    data = json.loads(art.read_text())
    with pytest.raises(ReplayRefused):
        replay({**data, "version": "0.0.0"})
    (tmp_path / "traces" / "seed-2.jsonl").write_text("tampered\n")
    assert not replay(art).identical


def test_liveness_failure_sets_exit_code(tmp_path, monkeypatch):
    monkeypatch.setenv("IIAB_OUTPUT_DIR", str(tmp_path))
    s = run_experiment(cfg(max_rounds=4))
    assert s.exit_code == EXIT_VIOLATION and s.violation_count == 0 and s.liveness_failures == 2
    m = run_experiment(cfg(max_rounds=4, mode="montecarlo"))
    assert m.exit_code == EXIT_OK


def test_liveness_can_be_waived(tmp_path, monkeypatch):
    monkeypatch.setenv("IIAB_OUTPUT_DIR", str(tmp_path))
    assert run_experiment(cfg(max_rounds=4, liveness="ignore")).exit_code == EXIT_OK


def test_abort_counts_as_violation(tmp_path, monkeypatch):
    monkeypatch.setenv("IIAB_OUTPUT_DIR", str(tmp_path))
    bad = {"name": "scripted_injections",
           "params": {"script": [{"5": {"1": [{"signed": {"signer": 1, "round": 1, "content": {"value": "eA=="}}}]}}]}}
    s = run_experiment(cfg(adversary=bad, seeds=[0]))
    assert s.runs[0].aborted and s.exit_code == EXIT_VIOLATION


def test_exhaustive_mode(tmp_path, monkeypatch):
    monkeypatch.setenv("IIAB_OUTPUT_DIR", str(tmp_path))
    c = cfg(mode="exhaustive", protocol={"kind": "task", "task": "commit_adopt", "params": {"n": 2}})
    s = run_experiment(c)
    assert s.exit_code == EXIT_OK and s.aggregate()["behaviors_checked"] == 4
    assert replay(tmp_path / "report.json").identical


def test_envelope_error_in_exhaustive_mode(tmp_path, monkeypatch):
    monkeypatch.setenv("IIAB_OUTPUT_DIR", str(tmp_path))
    c = cfg(mode="exhaustive", protocol={"kind": "task", "task": "det_conciliator", "params": {"n_rounds": 3}})
    assert run_experiment(c).exit_code == EXIT_CONFIG


def test_stabilizing_run_reports_harness_quantities():
    c = cfg(protocol={"kind": "deterministic"},
            schedule={"kind": "stabilizing_at", "params": {"R": 6, "online": [1, 2, 3, 4, 5], "impersonated": [5, 4]}},
            adversary={"name": "ds_equivocator"})
    res, _ = run_one(c, 3)
    assert (res.R, res.late_impersonated, res.b) == (6, 2, 2)
    assert res.round_bound == det_round_bound(6, 2)


def test_version_is_reported():
    assert run_experiment(cfg(seeds=[0]), write=False).to_json()["version"] == VERSION


def test_parallel_workers_match_serial(tmp_path, monkeypatch):
    monkeypatch.setenv("IIAB_OUTPUT_DIR", str(tmp_path))
    a = run_experiment(cfg(mode="montecarlo", seeds={"count": 6}), write=False)
    b = run_experiment(cfg(mode="montecarlo", seeds={"count": 6}, output={"workers": 2}), write=False)
    assert [r.trace_sha256 for r in a.runs] == [r.trace_sha256 for r in b.runs]


def test_phase_alignment_can_push_guaranteed_decision_past_checked_bound():
    from iiab.protocols import PhasePlan

    plan = PhasePlan("deterministic", "iiab")
    R, k = 12, 1
    n = next(n for n in range(1, 10) if plan.phase("conciliator", n).start >= R and 2 ** n > k)
    guaranteed = plan.commit_adopt_end(n)
    assert (n, guaranteed) == (3, 29)
    assert guaranteed > det_round_bound(R, k) == 26
