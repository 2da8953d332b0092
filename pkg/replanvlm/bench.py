"""Task catalog, experiment runners and metric tables.

Each runner plays `rounds` episodes per task, every one on a fresh world
with seed `base + 1000 * task + round`, and reduces the episode records
into a MetricsTable. Episodes may run on a thread pool; the reduction
happens once, in task/round order, after all of them finish.
"""

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from replanvlm.dsl import expand, interpret
from replanvlm.engine import BACKEND_FAILURE, VARIANTS, EngineConfig, run_episode
from replanvlm.errors import (
    ConfigError,
    GripperBusy,
    ReplanError,
    SuiteAborted,
    UnreachableTarget,
)
from replanvlm.gateway import BackendConfig, Gateway
from replanvlm.goals import GoalPredicate, eval_goal
from replanvlm.oracle import plan_oracle
from replanvlm.scenario import load_images, load_scenario, scenario_dir
from replanvlm.util import canonical_json
from replanvlm.world import WorldFaultSpec, snapshot

logger = logging.getLogger(__name__)

CRITERIA = ("SU", "SR", "EC", "UA", "AS")
CRITERIA_NAMES = {
    "SU": "scene understanding",
    "SR": "spatial reasoning",
    "EC": "error correction",
    "UA": "understanding abstract requests",
    "AS": "adapting to state changes",
}

# task id -> (criteria, minimum operation steps)
CATALOG = {
    1: (("SU", "UA"), 6),
    2: (("SR", "EC"), 21),
    3: (("SU", "SR", "EC"), 14),
    4: (("SR", "AS"), 22),
    5: (("SR", "AS"), 13),
    6: (("SR", "EC"), 13),
    7: (("UA",), 7),
}
TASK_IDS = tuple(CATALOG)

FORMATS = ("text", "csv", "json")
FAULT_NAMES = {"grip-slip": "GripSlip", "displace": "Displace", "drop": "DropDuringTransfer"}


@dataclass(frozen=True)
class TaskSpec:
    id: int
    instruction: str
    scenario: Path
    goal: GoalPredicate
    criteria: frozenset = frozenset()
    ms_expected: int | None = None
    images: tuple = ()
    variants: tuple = ()

    def load_world(self, seed: int = 0):
        world, _, _ = load_scenario(self.scenario)
        return replace(world, seed=seed)

    def canonical_steps(self) -> int:
        world = self.load_world()
        _, program = plan_oracle(snapshot(world), self.goal)
        return len(expand(program, snapshot(world)))


def load_task(task_id: int, variant: int | None = None, directory=None) -> TaskSpec:
    """A shipped task. `variant` picks one of the scenario's alternative
    instructions (1-based); the goal stays the same."""
    path = Path(directory or scenario_dir()) / f"task{task_id}.json"
    _, goal, meta = load_scenario(path)
    criteria, ms = CATALOG.get(task_id, (tuple(meta.get("criteria") or ()), meta.get("ms_expected")))
    variants = tuple(meta.get("variants") or ())
    instruction = meta["instruction"]
    if variant:
        if not 1 <= variant <= len(variants):
            raise ConfigError(f"task {task_id} has {len(variants)} instruction variant(s), asked for {variant}")
        instruction = variants[variant - 1]
    return TaskSpec(
        id=task_id,
        instruction=instruction,
        scenario=path,
        goal=goal,
        criteria=frozenset(criteria),
        ms_expected=ms,
        images=load_images(meta),
        variants=variants,
    )


def parse_tasks(value) -> tuple:
    """'all', an int, '3', '1,2,5' or a list -> task ids."""
    if value in (None, "all"):
        return TASK_IDS
    if isinstance(value, int):
        items = [value]
    elif isinstance(value, str):
        items = [v for v in value.split(",") if v.strip()]
    else:
        items = list(value)
    try:
        ids = tuple(int(v) for v in items)
    except (TypeError, ValueError):
        raise ConfigError(f"tasks must be 'all' or ids 1-7, got {value!r}")
    bad = [i for i in ids if i not in CATALOG]
    if bad or not ids:
        raise ConfigError(f"unknown task id(s): {bad or value!r}")
    return ids


def derive_seed(base: int, task_id: int, round_index: int) -> int:
    return base + 1000 * task_id + round_index


# -- configuration ------------------------------------------------------------------


@dataclass(frozen=True)
class SuiteConfig:
    tasks: tuple = TASK_IDS
    rounds: int = 10
    seed: int = 0
    engine: EngineConfig = field(default_factory=EngineConfig)
    world_fault: WorldFaultSpec | None = None
    instruction_variant: int | None = None
    out: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")

    @classmethod
    def from_dict(cls, d: dict | None) -> "SuiteConfig":
        d = dict(d or {})
        known = {"tasks", "rounds", "seed", "variant", "engine", "backend", "vlm_faults", "world_fault", "instruction_variant", "out", "workers"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        for key in ("rounds", "seed", "workers"):
            if key in d and (isinstance(d[key], bool) or not isinstance(d[key], int)):
                raise ConfigError(f"'{key}' must be an integer, got {d[key]!r}")
        backend = BackendConfig.from_dict(d.get("backend"), d.get("vlm_faults"))
        engine_doc = dict(d.get("engine") or {})
        if "variant" in d:
            engine_doc["variant"] = d["variant"]
        engine = EngineConfig.from_dict(engine_doc, backend)
        world_fault = None
        if d.get("world_fault"):
            try:
                world_fault = WorldFaultSpec.from_dict(d["world_fault"])
            except (KeyError, TypeError, ValueError, ReplanError) as e:
                raise ConfigError(f"world_fault: {e}")
        return cls(
            tasks=parse_tasks(d.get("tasks", "all")),
            rounds=d.get("rounds", 10),
            seed=d.get("seed", 0),
            engine=engine,
            world_fault=world_fault,
            instruction_variant=d.get("instruction_variant"),
            out=d.get("out"),
            workers=d.get("workers", 1),
        )

    @classmethod
    def load(cls, path) -> "SuiteConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e.msg} (line {e.lineno})")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {
            "tasks": list(self.tasks),
            "rounds": self.rounds,
            "seed": self.seed,
            "engine": self.engine.to_dict(),
            "world_fault": self.world_fault.to_dict() if self.world_fault else None,
            "instruction_variant": self.instruction_variant,
        }


# -- metrics ---------------------------------------------------------------------------


def _rate(num: int, den: int) -> float | None:
    return num / den if den else None


@dataclass
class TaskMetrics:
    task_id: int | str
    episodes: int = 0
    successes: int = 0
    backend_failures: int = 0
    injected: int = 0
    detected: int = 0
    corrected: int = 0
    total_steps: int = 0

    @property
    def completed(self) -> int:
        return self.episodes - self.backend_failures

    @property
    def success_rate(self) -> float | None:
        return _rate(self.successes, self.completed)

    @property
    def detection_rate(self) -> float | None:
        return _rate(self.detected, self.injected)

    @property
    def correction_rate(self) -> float | None:
        return _rate(self.corrected, self.injected)

    @property
    def mean_steps(self) -> float | None:
        return _rate(self.total_steps, self.completed)

    def add(self, record) -> None:
        self.episodes += 1
        if record.outcome == BACKEND_FAILURE:
            self.backend_failures += 1
            return
        self.successes += record.success
        self.injected += record.failure_injected
        self.detected += record.failure_detected
        self.corrected += record.failure_corrected
        self.total_steps += record.total_steps


COUNT_COLUMNS = ("episodes", "successes", "backend_failures", "injected", "detected", "corrected", "total_steps")
RATE_COLUMNS = ("success_rate", "detection_rate", "correction_rate", "mean_steps")


def _mean(values) -> float | None:
    values = [v for v in values if v is not None]
    return sum(values) / len(values) if values else None


def _fmt(v) -> str:
    return "" if v is None else f"{v:.4f}"


@dataclass
class MetricsTable:
    label: str
    rows: list = field(default_factory=list)
    records: list = field(default_factory=list, repr=False, compare=False)

    def row(self, task_id) -> TaskMetrics | None:
        return next((r for r in self.rows if r.task_id == task_id), None)

    def average(self) -> dict:
        """Unweighted mean of the per-task rates."""
        return {c: _mean(getattr(r, c) for r in self.rows) for c in RATE_COLUMNS}

    @property
    def backend_failures(self) -> int:
        return sum(r.backend_failures for r in self.rows)

    @property
    def episodes(self) -> int:
        return sum(r.episodes for r in self.rows)

    def to_dict(self) -> dict:
        rows = []
        for r in self.rows:
            d = {"task": r.task_id}
            d.update({c: getattr(r, c) for c in COUNT_COLUMNS + RATE_COLUMNS})
            rows.append(d)
        return {"label": self.label, "rows": rows, "average": self.average() if self.rows else None}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("task",) + COUNT_COLUMNS + RATE_COLUMNS)
        for r in self.rows:
            w.writerow([r.task_id] + [getattr(r, c) for c in COUNT_COLUMNS] + [_fmt(getattr(r, c)) for c in RATE_COLUMNS])
        if self.rows:
            avg = self.average()
            w.writerow(["Average"] + [""] * len(COUNT_COLUMNS) + [_fmt(avg[c]) for c in RATE_COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, label: str = "") -> "MetricsTable":
        rows = []
        for rec in csv.DictReader(io.StringIO(text)):
            if rec["task"] == "Average":
                continue
            task = int(rec["task"]) if rec["task"].isdigit() else rec["task"]
            rows.append(TaskMetrics(task, **{c: int(rec[c]) for c in COUNT_COLUMNS}))
        return cls(label, rows)

    def to_text(self) -> str:
        header = ("Task", "Episodes", "Success", "Detection", "Correction", "Mean steps", "Backend failures")

        def pct(v):
            return "-" if v is None else f"{100 * v:.1f}%"

        lines = [header]
        for r in self.rows:
            steps = "-" if r.mean_steps is None else f"{r.mean_steps:.1f}"
            lines.append((f"Task {r.task_id}", str(r.episodes), pct(r.success_rate), pct(r.detection_rate),
                          pct(r.correction_rate), steps, str(r.backend_failures)))
        if self.rows:
            avg = self.average()
            steps = "-" if avg["mean_steps"] is None else f"{avg['mean_steps']:.1f}"
            lines.append(("Average", str(self.episodes), pct(avg["success_rate"]), pct(avg["detection_rate"]),
                          pct(avg["correction_rate"]), steps, str(self.backend_failures)))
        widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
        out = [self.label] if self.label else []
        out += ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(line)).rstrip() for line in lines]
        return "\n".join(out) + "\n"


def aggregate(label: str, records: list, tasks) -> MetricsTable:
    rows = {t: TaskMetrics(t) for t in tasks}
    for rec in records:
        rows[rec.task_id].add(rec)
    return MetricsTable(label, [rows[t] for t in tasks], list(records))


# -- export ----------------------------------------------------------------------------


def render(table: MetricsTable, fmt: str = "text") -> str:
    if fmt == "text":
        return table.to_text()
    if fmt == "csv":
        return table.to_csv()
    if fmt == "json":
        return json.dumps(table.to_dict(), indent=2, sort_keys=True) + "\n"
    raise ConfigError(f"unknown export format '{fmt}' (expected one of {', '.join(FORMATS)})")


def _write_text(text: str, path) -> Path:
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot write {p}: {e}")
    return p


def export(table: MetricsTable, path, fmt: str = "text") -> Path:
    return _write_text(render(table, fmt), path)


def comparison_text(tables: dict) -> str:
    """Variants as rows, tasks as columns, success rates in percent."""
    if not tables:
        return ""
    tasks = [r.task_id for r in next(iter(tables.values())).rows]
    header = ["Method"] + [f"Task {t}" for t in tasks] + ["Average"]
    lines = [header]
    for name, table in tables.items():
        cells = [name]
        for t in tasks:
            rate = table.row(t).success_rate
            cells.append("-" if rate is None else f"{100 * rate:.1f}%")
        avg = table.average()["success_rate"] if table.rows else None
        cells.append("-" if avg is None else f"{100 * avg:.1f}%")
        lines.append(cells)
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(widths[i]) for i, c in enumerate(line)).rstrip() for line in lines) + "\n"


def criteria_rows(tasks: list, measured: MetricsTable | None = None) -> list:
    """One dict per task: criteria flags, expected, canonical and (given a
    run) measured mean MS."""
    rows = []
    for t in tasks:
        canonical = t.canonical_steps()
        row = {"task": t.id}
        row.update({c: c in t.criteria for c in CRITERIA})
        row["ms_expected"] = t.ms_expected
        row["canonical"] = canonical
        row["delta"] = None if t.ms_expected is None else canonical - t.ms_expected
        if measured is not None:
            m = measured.row(t.id)
            row["measured"] = None if m is None else m.mean_steps
        rows.append(row)
    return rows


def criteria_text(tasks: list, measured: MetricsTable | None = None) -> str:
    """The task catalog as an aligned table."""
    header = ["Task"] + list(CRITERIA) + ["MS", "Canonical", "Delta"] + (["Measured"] if measured is not None else [])
    lines = [header]
    for row in criteria_rows(tasks, measured):
        cells = [f"Task {row['task']}"] + ["x" if row[c] else "" for c in CRITERIA]
        cells += [str(row["ms_expected"] or "-"), str(row["canonical"]), "" if row["delta"] is None else f"{row['delta']:+d}"]
        if measured is not None:
            cells.append("-" if row["measured"] is None else f"{row['measured']:.1f}")
        lines.append(cells)
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(widths[i]) for i, c in enumerate(line)).rstrip() for line in lines) + "\n"


def render_criteria(tasks: list, fmt: str = "text", measured: MetricsTable | None = None) -> str:
    if fmt == "text":
        return criteria_text(tasks, measured)
    rows = criteria_rows(tasks, measured)
    if fmt == "json":
        return json.dumps({"label": "criteria", "rows": rows}, indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        columns = ["task"] + list(CRITERIA) + ["ms_expected", "canonical", "delta"] + (["measured"] if measured is not None else [])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            cells = []
            for c in columns:
                v = row[c]
                if isinstance(v, bool):
                    v = int(v)
                elif isinstance(v, float):
                    v = _fmt(v)
                cells.append("" if v is None else v)
            w.writerow(cells)
        return buf.getvalue()
    raise ConfigError(f"unknown export format '{fmt}' (expected one of {', '.join(FORMATS)})")


def export_criteria(tasks: list, path, fmt: str = "text", measured: MetricsTable | None = None) -> Path:
    return _write_text(render_criteria(tasks, fmt, measured), path)


def write_episodes(records: list, path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(rec.to_json() + "\n")
    return p


def write_outputs(table: MetricsTable, out) -> None:
    if not out:
        return
    base = Path(out)
    name = table.label.strip("-") or "suite"
    write_episodes(table.records, base / f"{name}.episodes.jsonl")
    for fmt, ext in (("text", "txt"), ("csv", "csv"), ("json", "json")):
        export(table, base / f"{name}.metrics.{ext}", fmt)


# -- runners ---------------------------------------------------------------------------


def _episode_fault(spec: WorldFaultSpec | None, seed: int) -> WorldFaultSpec | None:
    if spec is None or spec.probability is None:
        return spec
    return replace(spec, seed=seed)


def _run_episodes(label: str, tasks: list, config: SuiteConfig, engine: EngineConfig, faults: dict | None = None) -> MetricsTable:
    gateway = Gateway(engine.backend)
    try:
        gateway.check()
    except ReplanError as e:
        raise SuiteAborted(f"{label}: {e}", [])
    faults = faults or {}
    jobs = []
    for task in tasks:
        for r in range(config.rounds):
            jobs.append((task, derive_seed(config.seed, task.id, r)))

    def one(job):
        task, seed = job
        world = task.load_world(seed)
        fault = _episode_fault(faults.get(task.id, config.world_fault), seed)
        return run_episode(task, world, gateway, replace(engine, seed=seed), fault)

    records: list = []
    try:
        if config.workers > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                for rec in pool.map(one, jobs):
                    records.append(rec)
        else:
            for job in jobs:
                records.append(one(job))
    except ReplanError as e:
        raise SuiteAborted(f"{label}: {e}", records)
    table = aggregate(label, records, [t.id for t in tasks])
    write_outputs(table, config.out)
    logger.info("%s: %d episode(s), average success %s", label, table.episodes, _fmt(table.average()["success_rate"]) or "-")
    return table


def _tasks(tasks, config: SuiteConfig) -> list:
    if tasks and not isinstance(tasks, (str, int)) and all(isinstance(t, TaskSpec) for t in tasks):
        return list(tasks)
    ids = parse_tasks(tasks if tasks is not None else config.tasks)
    return [load_task(t, config.instruction_variant) for t in ids]


def run_suite(tasks=None, config: SuiteConfig | None = None) -> MetricsTable:
    config = config or SuiteConfig()
    return _run_episodes(config.engine.variant, _tasks(tasks, config), config, config.engine)


def run_ablation(tasks=None, config: SuiteConfig | None = None, baseline: bool = False) -> dict:
    """The four engine variants with identical seeds and fault profile.
    With `baseline`, the single-shot planner follows as a fifth entry."""
    config = config or SuiteConfig()
    specs = _tasks(tasks, config)
    tables = {name: _run_episodes(name, specs, config, config.engine.with_variant(name)) for name in VARIANTS}
    if baseline:
        tables["baseline"] = run_baseline(specs, config)
    return tables


def run_baseline(tasks=None, config: SuiteConfig | None = None) -> MetricsTable:
    """Single-shot planning: one round, no checks."""
    config = config or SuiteConfig()
    engine = replace(config.engine, inner_enabled=False, extra_enabled=False, outer_round_cap=1)
    return _run_episodes("baseline", _tasks(tasks, config), config, engine)


def _goal_after_fault(trace, task: TaskSpec, fault: WorldFaultSpec) -> bool:
    world = task.load_world()
    try:
        world, _ = interpret(trace, world, fault)
    except (UnreachableTarget, GripperBusy) as e:
        world = e.world or world
    return eval_goal(task.goal, world)[0]


def resolve_injection_step(task: TaskSpec, kind: str, at_step="first") -> int:
    """Absolute step index of the injected fault in the task's canonical
    trace. "first" is the first step of the fault's primitive whose fault
    leaves the goal unmet."""
    world = task.load_world()
    snap = snapshot(world)
    _, program = plan_oracle(snap, task.goal)
    trace = expand(program, snap)
    primitive = WorldFaultSpec(kind, at_step=0).primitive
    if at_step == "first":
        for i, step in enumerate(trace.steps):
            if step.kind == primitive and not _goal_after_fault(trace, task, WorldFaultSpec(kind, at_step=i)):
                return i
        raise ConfigError(f"task {task.id}: no {primitive} step where a {kind} fault breaks the task")
    try:
        k = int(at_step)
    except (TypeError, ValueError):
        raise ConfigError(f"at_step must be 'first' or a step index, got {at_step!r}")
    if not 0 <= k < len(trace):
        raise ConfigError(f"task {task.id}: injection step {k} out of range (canonical trace has {len(trace)} steps)")
    if trace.steps[k].kind != primitive:
        raise ConfigError(f"task {task.id}: step {k} is {trace.steps[k].kind}, not a {primitive} step")
    return k


def run_error_correction(tasks=None, injection="GripSlip", config: SuiteConfig | None = None) -> MetricsTable:
    """One world fault per episode on a step of the first round.

    `injection` is a fault kind (placed at the first harmful step) or a
    WorldFaultSpec whose `at_step` indexes the canonical trace.
    """
    config = config or SuiteConfig()
    if isinstance(injection, str):
        if injection not in WorldFaultSpec.KINDS:
            raise ConfigError(f"unknown fault kind '{injection}' (expected one of {', '.join(WorldFaultSpec.KINDS)})")
        injection = WorldFaultSpec(injection, at_step=None, probability=0.0)
    where = "first" if injection.at_step is None else injection.at_step
    specs = _tasks(tasks, config)
    faults = {}
    for t in specs:
        faults[t.id] = WorldFaultSpec(injection.kind, at_step=resolve_injection_step(t, injection.kind, where),
                                      displacement=injection.displacement)
    return _run_episodes("inject", specs, config, config.engine, faults)


# -- replay ----------------------------------------------------------------------------


def _comparable(d: dict) -> dict:
    d = dict(d)
    d["transcript"] = [{k: v for k, v in e.items() if k != "backend"} for e in d.get("transcript") or []]
    return d


def replay(log_path, episode: int, config: SuiteConfig | None = None, directory=None) -> tuple:
    """Re-run a logged episode against its own recorded responses.
    Returns (new record, identical to the log)."""
    from replanvlm.engine import load_records

    records = load_records(log_path)
    if not 0 <= episode < len(records):
        raise ConfigError(f"episode {episode} out of range ({len(records)} in {log_path})")
    logged = records[episode]
    table = {e["digest"]: e["raw"] for e in logged["transcript"] if e.get("raw") is not None}
    base = (config or SuiteConfig()).engine
    inner_cap, outer_cap = logged.get("caps") or (base.inner_cycle_cap, base.outer_round_cap)
    engine = replace(
        base, backend=BackendConfig(kind="scripted", replay=table), seed=logged["seed"],
        inner_cycle_cap=inner_cap, outer_round_cap=outer_cap,
    ).with_variant(logged["variant"])
    task = load_task(int(logged["task_id"]), directory=directory)
    task = replace(task, instruction=logged["instruction"])
    fault = WorldFaultSpec.from_dict(logged["world_fault"]) if logged.get("world_fault") else None
    rec = run_episode(task, task.load_world(logged["seed"]), Gateway(engine.backend), engine, fault)
    same = canonical_json(_comparable(rec.to_dict())) == canonical_json(_comparable(logged))
    return rec, same
