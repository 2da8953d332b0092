import json

import pytest

from conftest import oracle_engine
from replanvlm import bench
from replanvlm.engine import EngineConfig
from replanvlm.errors import ConfigError, SuiteAborted
from replanvlm.gateway import BackendConfig
from replanvlm.world import WorldFaultSpec

CANONICAL_STEPS = {1: 6, 2: 21, 3: 14, 4: 21, 5: 14, 6: 13, 7: 7}


def suite(rounds=2, tasks=bench.TASK_IDS, engine=None, **kw) -> bench.SuiteConfig:
    return bench.SuiteConfig(tasks=tuple(tasks), rounds=rounds, engine=engine or oracle_engine(), **kw)


def test_catalog_and_seeds():
    assert bench.TASK_IDS == (1, 2, 3, 4, 5, 6, 7)
    assert bench.CATALOG[3] == (("SU", "SR", "EC"), 14)
    assert bench.derive_seed(0, 3, 7) == 3007
    assert bench.derive_seed(5, 1, 0) == 1005
    assert bench.parse_tasks("1,2,5") == (1, 2, 5)
    assert bench.parse_tasks("all") == bench.TASK_IDS
    with pytest.raises(ConfigError):
        bench.parse_tasks("9")
    with pytest.raises(ConfigError):
        bench.parse_tasks("one")


def test_task_variants(task):
    t = task(1, variant=2)
    assert t.instruction == "I skipped lunch today."
    assert t.goal == task(1).goal
    with pytest.raises(ConfigError):
        task(1, variant=3)


@pytest.mark.parametrize("task_id", bench.TASK_IDS)
def test_canonical_steps(task, task_id):
    assert task(task_id).canonical_steps() == CANONICAL_STEPS[task_id]


def test_criteria_table_reports_catalog_deltas(task):
    text = bench.criteria_text([task(t) for t in bench.TASK_IDS])
    lines = text.splitlines()
    assert lines[0].split() == ["Task", "SU", "SR", "EC", "UA", "AS", "MS", "Canonical", "Delta"]
    assert lines[4].split()[-3:] == ["22", "21", "-1"]
    assert lines[5].split()[-3:] == ["13", "14", "+1"]
    assert lines[1].split()[-1] == "+0"


def test_zero_fault_suite_succeeds_everywhere():
    table = bench.run_suite(config=suite())
    assert [r.task_id for r in table.rows] == list(bench.TASK_IDS)
    for row in table.rows:
        assert row.episodes == 2 and row.success_rate == 1.0
        assert row.mean_steps == CANONICAL_STEPS[row.task_id]
        assert row.detection_rate is None
    assert table.average()["success_rate"] == 1.0
    assert table.backend_failures == 0


def test_csv_export(tmp_path):
    empty = bench.aggregate("empty", [], [])
    assert empty.to_csv().splitlines() == [
        "task,episodes,successes,backend_failures,injected,detected,corrected,total_steps,"
        "success_rate,detection_rate,correction_rate,mean_steps"
    ]
    table = bench.run_suite(config=suite(rounds=1))
    text = table.to_csv()
    lines = text.splitlines()
    assert len(lines) == 9
    assert lines[1] == "1,1,1,0,0,0,0,6,1.0000,,,6.0000"
    assert lines[-1].startswith("Average,")
    assert bench.MetricsTable.from_csv(text).to_csv() == text
    path = bench.export(table, tmp_path / "out" / "m.csv", "csv")
    assert path.read_text() == text


def test_json_and_text_export():
    table = bench.run_suite([1, 7], suite(rounds=1))
    doc = json.loads(bench.render(table, "json"))
    assert doc["label"] == "full"
    assert [r["task"] for r in doc["rows"]] == [1, 7]
    assert doc["average"]["success_rate"] == 1.0
    text = bench.render(table, "text")
    assert "Task 7" in text and "100.0%" in text
    with pytest.raises(ConfigError):
        bench.render(table, "xml")


def test_error_correction_detects_and_corrects():
    table = bench.run_error_correction(config=suite())
    assert table.label == "inject"
    for row in table.rows:
        assert row.injected == 2
        assert row.detection_rate == 1.0, row.task_id
        assert row.correction_rate == 1.0, row.task_id


def test_injection_step_resolution(task):
    assert bench.resolve_injection_step(task(1), "GripSlip") == 2
    # the blocker grasps come first; only the red cube's slip breaks the task
    assert bench.resolve_injection_step(task(2), "GripSlip") == 16
    assert bench.resolve_injection_step(task(2), "GripSlip", 2) == 2
    with pytest.raises(ConfigError):
        bench.resolve_injection_step(task(2), "GripSlip", 0)
    with pytest.raises(ConfigError):
        bench.resolve_injection_step(task(2), "GripSlip", 999)
    with pytest.raises(ConfigError):
        bench.run_error_correction([1], "Earthquake", suite())


def test_wrong_extra_verdicts_hide_injected_failures():
    table = bench.run_error_correction([1], "GripSlip", suite(engine=oracle_engine(extra_wrong_verdict=1.0)))
    row = table.row(1)
    assert row.injected == 2
    assert row.detection_rate == 0.0 and row.success_rate == 0.0


def test_ablation_without_faults_is_flat():
    tables = bench.run_ablation(config=suite(rounds=1))
    assert list(tables) == ["full", "-internal", "-external", "-both"]
    assert all(t.average()["success_rate"] == 1.0 for t in tables.values())
    assert "Method" in bench.comparison_text(tables)


def test_ablation_can_carry_the_baseline_as_a_fifth_row():
    engine = oracle_engine(omit_blocker_step=1.0, feedback_uptake=1.0)
    tables = bench.run_ablation([2], suite(rounds=1, engine=engine), baseline=True)
    assert list(tables) == ["full", "-internal", "-external", "-both", "baseline"]
    assert tables["baseline"].row(2).success_rate == 0.0
    assert tables["full"].row(2).success_rate == 1.0
    lines = bench.comparison_text(tables).splitlines()
    assert [line.split()[0] for line in lines[1:]] == ["full", "-internal", "-external", "-both", "baseline"]
    assert lines[-1].split()[1] == "0.0%"


def test_criteria_rows_carry_the_measured_steps(tmp_path, task):
    tasks = [task(1), task(4)]
    measured = bench.run_suite(tasks, suite(rounds=1))
    rows = bench.criteria_rows(tasks, measured)
    assert rows[0] == {
        "task": 1, "SU": True, "SR": False, "EC": False, "UA": True, "AS": False,
        "ms_expected": 6, "canonical": 6, "delta": 0, "measured": 6.0,
    }
    assert rows[1]["delta"] == -1 and rows[1]["measured"] == 21.0
    text = bench.criteria_text(tasks, measured).splitlines()
    assert text[0].split()[-1] == "Measured"
    assert text[2].split()[-1] == "21.0"
    csv_text = bench.render_criteria(tasks, "csv", measured)
    assert csv_text.splitlines()[1] == "1,1,0,0,1,0,6,6,0,6.0000"
    path = bench.export_criteria(tasks, tmp_path / "criteria.json", "json", measured)
    assert json.loads(path.read_text())["rows"][1]["canonical"] == 21
    assert "measured" not in bench.criteria_rows(tasks)[0]
    with pytest.raises(ConfigError):
        bench.render_criteria(tasks, "xml")


@pytest.mark.parametrize("fault", ["malformed_code", "plan_code_mismatch"])
def test_inner_checks_block_every_faulty_program(fault):
    table = bench.run_suite([2], suite(rounds=100, engine=oracle_engine(**{fault: 1.0})))
    assert len(table.records) == 100
    for rec in table.records:
        assert rec.outcome == "InnerDeadlock"
        assert len(rec.rounds) == 1 and len(rec.rounds[0].checks) == 5
        assert rec.total_steps == 0 and rec.rounds[0].after is None
    assert table.row(2).success_rate == 0.0


def test_without_extra_the_inner_checks_change_nothing_under_world_faults():
    cfg = suite(rounds=4, tasks=(1, 2, 6), world_fault=WorldFaultSpec("GripSlip", probability=0.3))
    tables = bench.run_ablation(config=cfg)
    for t in cfg.tasks:
        assert tables["-external"].row(t).success_rate == tables["-both"].row(t).success_rate


def test_baseline_has_no_second_chance():
    engine = oracle_engine(omit_blocker_step=1.0, feedback_uptake=1.0)
    baseline = bench.run_baseline([2], suite(engine=engine))
    assert baseline.label == "baseline"
    assert baseline.row(2).success_rate == 0.0
    assert all(len(r.rounds) == 1 for r in baseline.records)
    full = bench.run_suite([2], suite(engine=engine))
    assert full.row(2).success_rate == 1.0


def test_outputs_are_identical_across_runs_and_worker_counts(tmp_path):
    engine = oracle_engine(omit_blocker_step=0.4, malformed_code=0.2, extra_wrong_verdict=0.1)
    fault = WorldFaultSpec("GripSlip", probability=0.2)
    bench.run_suite(config=suite(engine=engine, world_fault=fault, out=str(tmp_path / "a")))
    bench.run_suite(config=suite(engine=engine, world_fault=fault, out=str(tmp_path / "b"), workers=4))
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["full.episodes.jsonl", "full.metrics.csv", "full.metrics.json", "full.metrics.txt"]
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_logged_episodes_replay_identically(tmp_path):
    engine = oracle_engine(omit_blocker_step=0.5, feedback_uptake=0.5)
    bench.run_error_correction([1, 2], "GripSlip", suite(engine=engine, out=str(tmp_path)))
    log = tmp_path / "inject.episodes.jsonl"
    for i in range(4):
        rec, same = bench.replay(log, i)
        assert same, i
    baseline = bench.run_baseline([6], suite(rounds=1, out=str(tmp_path), world_fault=WorldFaultSpec("GripSlip", at_step=2)))
    assert baseline.records[0].outcome == "ExecutionFailed"
    _, same = bench.replay(tmp_path / "baseline.episodes.jsonl", 0)
    assert same
    with pytest.raises(ConfigError):
        bench.replay(log, 99)


@pytest.mark.parametrize(
    "doc",
    [
        {"rounds": 0},
        {"rounds": "3"},
        {"colour": "red"},
        {"tasks": [9]},
        {"variant": "-everything"},
        {"world_fault": {"kind": "Earthquake", "at_step": 1}},
        {"vlm_faults": {"omit_blocker_step": 2}},
        {"backend": {"kind": "scripted"}},
    ],
)
def test_suite_config_rejects_bad_documents(doc):
    with pytest.raises(ConfigError):
        bench.SuiteConfig.from_dict(doc)


def test_suite_config_from_file(tmp_path):
    p = tmp_path / "suite.json"
    p.write_text(json.dumps({
        "tasks": [1, 3], "rounds": 4, "variant": "-internal",
        "vlm_faults": {"omit_blocker_step": 0.3, "seed": 2},
        "world_fault": {"kind": "Displace", "probability": 0.1},
    }))
    cfg = bench.SuiteConfig.load(p)
    assert cfg.tasks == (1, 3) and cfg.rounds == 4
    assert cfg.engine.variant == "-internal"
    assert cfg.engine.backend.faults.omit_blocker_step == 0.3
    assert cfg.world_fault.kind == "Displace"
    with pytest.raises(ConfigError):
        bench.SuiteConfig.load(tmp_path / "missing.json")
    p.write_text("{")
    with pytest.raises(ConfigError):
        bench.SuiteConfig.load(p)


def test_setup_errors_abort_the_suite(tmp_path):
    scripted = EngineConfig(backend=BackendConfig(kind="scripted", replay_path=str(tmp_path / "missing.json")))
    with pytest.raises(SuiteAborted) as e:
        bench.run_suite([1], suite(engine=scripted))
    assert e.value.completed == []
    remote = EngineConfig(backend=BackendConfig(kind="remote", provider="openai"))
    with pytest.raises(SuiteAborted) as e:
        bench.run_suite([1], suite(engine=remote))
    assert "REPLANVLM_API_KEY" in str(e.value)


def test_backend_failures_are_counted_not_scored():
    table = bench.run_suite([1], suite(engine=EngineConfig(backend=BackendConfig(kind="scripted", replay={"h:x": "y"}))))
    row = table.row(1)
    assert row.backend_failures == 2 and row.completed == 0
    assert row.success_rate is None
    assert table.average()["success_rate"] is None


@pytest.mark.bench
def test_ablation_ordering():
    engine = oracle_engine(omit_blocker_step=0.3, malformed_code=0.2, feedback_uptake=0.5)
    cfg = suite(rounds=100, engine=engine, world_fault=WorldFaultSpec("GripSlip", probability=0.05), workers=4)
    tables = bench.run_ablation(config=cfg)
    for t in cfg.tasks:
        rate = {name: table.row(t).success_rate for name, table in tables.items()}
        assert rate["full"] >= rate["-internal"], (t, rate)
        assert rate["full"] >= rate["-external"], (t, rate)
        assert rate["-both"] == min(rate.values()), (t, rate)
    avg = {name: t.average()["success_rate"] for name, t in tables.items()}
    assert avg["full"] > avg["-both"]
