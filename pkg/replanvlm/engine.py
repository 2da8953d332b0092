"""The closed planning loop.

Each outer round snapshots the scene, asks the Decision Bot for a plan and
code, lets the Inner Bot review it (at most `inner_cycle_cap` attempts),
executes the accepted code, and asks the Extra Bot whether the request is
fulfilled. Feedback from both reviewers goes into the next Decision prompt.
"""

import json
import logging
import re
from dataclasses import dataclass, field, replace

from replanvlm import selectors
from replanvlm.dsl import DEFERRED_PREFIX, ActionProgram, effect_equivalent, expand, interpret, parse
from replanvlm.errors import (
    AmbiguousSelector,
    BackendError,
    ConfigError,
    DslError,
    GripperBusy,
    ResponseParseError,
    UnreachableTarget,
    UnresolvableSelector,
)
from replanvlm.gateway import BackendConfig, Transcript
from replanvlm.goals import eval_goal
from replanvlm.prompts import EXTRA, INNER, build_decision_prompt, build_extra_prompt, build_inner_prompt
from replanvlm.util import canonical_json, explain
from replanvlm.vocab import PLAN_VERBS, normalize_word
from replanvlm.world import snapshot

logger = logging.getLogger(__name__)

SUCCESS = "Success"
INNER_DEADLOCK = "InnerDeadlock"
OUTER_EXHAUSTED = "OuterExhausted"
BACKEND_FAILURE = "BackendFailure"
# Extra Bot disabled and execution hit a hard error
EXECUTION_FAILED = "ExecutionFailed"
OUTCOMES = (SUCCESS, INNER_DEADLOCK, OUTER_EXHAUSTED, BACKEND_FAILURE, EXECUTION_FAILED)

# variant name -> (inner_enabled, extra_enabled)
VARIANTS = {
    "full": (True, True),
    "-internal": (False, True),
    "-external": (True, False),
    "-both": (False, False),
}


@dataclass(frozen=True)
class EngineConfig:
    inner_enabled: bool = True
    extra_enabled: bool = True
    inner_cycle_cap: int = 5
    outer_round_cap: int = 5
    seed: int = 0
    backend: BackendConfig = field(default_factory=BackendConfig)

    def __post_init__(self):
        if self.inner_cycle_cap < 1:
            raise ConfigError(f"inner_cycle_cap must be >= 1, got {self.inner_cycle_cap}")
        if self.outer_round_cap < 1:
            raise ConfigError(f"outer_round_cap must be >= 1, got {self.outer_round_cap}")

    @property
    def variant(self) -> str:
        for name, flags in VARIANTS.items():
            if flags == (self.inner_enabled, self.extra_enabled):
                return name
        return "full"

    def with_variant(self, name: str) -> "EngineConfig":
        if name not in VARIANTS:
            raise ConfigError(f"unknown variant '{name}' (expected one of {', '.join(VARIANTS)})")
        inner, extra = VARIANTS[name]
        return replace(self, inner_enabled=inner, extra_enabled=extra)

    @classmethod
    def from_dict(cls, d: dict | None, backend: BackendConfig | None = None) -> "EngineConfig":
        d = dict(d or {})
        known = {"inner_enabled", "extra_enabled", "inner_cycle_cap", "outer_round_cap", "seed", "variant"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown engine field(s): {', '.join(unknown)}")
        variant = d.pop("variant", None)
        for key in ("inner_cycle_cap", "outer_round_cap", "seed"):
            if key in d and (isinstance(d[key], bool) or not isinstance(d[key], int)):
                raise ConfigError(f"engine.{key} must be an integer")
        cfg = cls(backend=backend or BackendConfig(), **d)
        return cfg.with_variant(variant) if variant else cfg

    def to_dict(self) -> dict:
        return {
            "inner_enabled": self.inner_enabled,
            "extra_enabled": self.extra_enabled,
            "inner_cycle_cap": self.inner_cycle_cap,
            "outer_round_cap": self.outer_round_cap,
            "seed": self.seed,
            "backend": self.backend.to_dict(),
        }


@dataclass(frozen=True)
class Feedback:
    source: str  # Inner | Extra
    round: int
    reason: str
    # feedback informs the next Decision prompt; it never dictates a plan
    advisory: bool = True

    def to_dict(self) -> dict:
        return {"source": self.source, "round": self.round, "reason": self.reason}


@dataclass(frozen=True)
class CheckOutcome:
    format_ok: bool
    matching_ok: bool
    verification_ok: bool
    reason: str = ""

    @property
    def passed(self) -> bool:
        return self.format_ok and self.matching_ok and self.verification_ok

    def to_dict(self) -> dict:
        return {"format": self.format_ok, "matching": self.matching_ok, "verification": self.verification_ok, "reason": self.reason}


@dataclass
class RoundRecord:
    index: int
    before: dict
    plan: list = field(default_factory=list)
    code: str = ""
    checks: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    steps: int = 0
    events: list = field(default_factory=list)
    exec_error: str | None = None
    after: dict | None = None
    goal_met: bool = False
    verdict: str | None = None
    feedback: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "before": self.before,
            "plan": self.plan,
            "code": self.code,
            "checks": [c.to_dict() for c in self.checks],
            "trace": self.trace,
            "steps": self.steps,
            "events": [e.to_dict() for e in self.events],
            "exec_error": self.exec_error,
            "after": self.after,
            "goal_met": self.goal_met,
            "verdict": self.verdict,
            "feedback": [f.to_dict() for f in self.feedback],
        }


@dataclass
class EpisodeRecord:
    task_id: int | str | None
    seed: int
    variant: str
    instruction: str
    outcome: str = OUTER_EXHAUSTED
    rounds: list = field(default_factory=list)
    transcript: Transcript = field(default_factory=Transcript)
    total_steps: int = 0
    goal_met: bool = False
    fault_fired: bool = False
    failure_injected: bool = False
    failure_detected: bool = False
    failure_corrected: bool = False
    error: str | None = None
    final_world: dict | None = None
    world_fault: dict | None = None
    caps: tuple = (5, 5)  # (inner cycles, outer rounds)

    @property
    def success(self) -> bool:
        """Task success as measured: the engine stopped with Success and the
        goal really holds."""
        return self.outcome == SUCCESS and self.goal_met

    @property
    def feedback(self) -> list:
        return [f for r in self.rounds for f in r.feedback]

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "seed": self.seed,
            "variant": self.variant,
            "instruction": self.instruction,
            "outcome": self.outcome,
            "success": self.success,
            "rounds": [r.to_dict() for r in self.rounds],
            "transcript": self.transcript.to_list(),
            "total_steps": self.total_steps,
            "goal_met": self.goal_met,
            "fault_fired": self.fault_fired,
            "failure_injected": self.failure_injected,
            "failure_detected": self.failure_detected,
            "failure_corrected": self.failure_corrected,
            "error": self.error,
            "final_world": self.final_world,
            "world_fault": self.world_fault,
            "caps": list(self.caps),
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())


# -- internal checks ------------------------------------------------------------------

_CLAUSE_SPLIT = re.compile(r"\b(?:and then|then|and)\b|[,;]")
_SOURCE_WORDS = {"from", "off", "out"}


def _words(text: str) -> list:
    return [normalize_word(w) for w in re.split(r"[\s'\"()]+", text) if normalize_word(w)]


def _scene_words(snap, deferred: dict) -> set:
    words = {"table", "belt", "user", "drawer"}
    for o in snap.objects:
        words |= selectors.object_words(o)
    for c in snap.containers:
        words |= {c.id.lower(), c.kind}
    for _, sel_words in deferred.values():
        words |= set(sel_words)
    return words


def _plan_clauses(line: str, scene_words: set) -> list:
    """(skill, ordered nouns) for each clause of a plan line that names a skill."""
    out = []
    for clause in _CLAUSE_SPLIT.split(line):
        words = _words(clause)
        for i, w in enumerate(words):
            if w in _SOURCE_WORDS:
                words = words[:i]
                break
        verbs = [w for w in words if w in PLAN_VERBS]
        if not verbs:
            continue
        nouns = []
        for w in words:
            if w in scene_words and w not in PLAN_VERBS and w not in nouns:
                nouns.append(w)
        out.append((PLAN_VERBS[verbs[0]], nouns))
    return out


def _bound_words(target: str | None, snap) -> set:
    if target is None:
        return set()
    if target.startswith(DEFERRED_PREFIX):
        return set(target.split(":", 1)[1].split())
    o = snap.object(target)
    if o is not None:
        return selectors.object_words(o)
    c = snap.container(target)
    if c is not None:
        return {c.id.lower(), c.kind}
    return {target.split("@", 1)[0].lower()}


def _touched(program: ActionProgram, trace, snap) -> list:
    """Words naming what each call acts on."""
    first_target = {}
    for step, idx in zip(trace.steps, trace.call_index):
        first_target.setdefault(idx, step.target)
    held = _bound_words(snap.holding, snap) if snap.holding else set()
    out = []
    for i, call in enumerate(program.calls):
        args = set(selectors.selector_words(str(call.args[0]))) if call.args else set()
        bound = _bound_words(first_target.get(i), snap)
        if call.skill == "pick":
            held = args | bound
            out.append(set(held))
        elif call.skill == "place":
            out.append(args | bound | held)
            held = set()
        elif call.skill == "give":
            out.append(held | {"user"})
            held = set()
        elif call.skill == "open_drawer":
            out.append(args | bound | {"drawer"})
        else:
            out.append(args | {str(a) for a in call.args})
    return out


def matching_check(plan, program: ActionProgram, snap) -> tuple:
    """Walk plan lines in order; each must be carried out by the next code
    call, and every call must come from a plan line. Returns (ok, reason)."""
    try:
        trace = expand(program, snap)
    except DslError as e:
        return False, f"the code cannot be bound to the scene: {e}"
    for call in program.calls:
        if call.skill != "pick" or str(call.args[0]).startswith(DEFERRED_PREFIX):
            continue
        try:
            selectors.resolve(str(call.args[0]), snap.objects, snap.arm_pose, strict=True)
        except AmbiguousSelector as e:
            return False, str(e)
        except UnresolvableSelector:
            pass
    touched = _touched(program, trace, snap)
    scene_words = _scene_words(snap, trace.deferred)
    calls = program.calls
    j = 0
    for n, line in enumerate(plan, 1):
        for skill, nouns in _plan_clauses(line, scene_words):
            k = next((i for i in range(j, len(calls)) if calls[i].skill == skill and set(nouns) <= touched[i]), None)
            if k is None:
                what = f" (nothing in the code does this with the {' '.join(nouns)})" if nouns else ""
                return False, f"plan step {n} '{line}' has no matching code call{what}"
            if k > j:
                return False, f"code call {calls[j].to_text()} does not correspond to any plan step before step {n}"
            j = k + 1
    if j < len(calls):
        return False, f"code call {calls[j].to_text()} does not correspond to any plan step"
    return True, ""


def format_check(plan, code: str, require_plan: bool = True) -> tuple:
    """Returns (program or None, reason)."""
    if require_plan and not plan:
        return None, "the plan is empty"
    try:
        return parse(code), ""
    except DslError as e:
        return None, f"the code is not valid skill code: {e}"


def inner_check(plan, code: str, snap, gateway, *, instruction: str = "", ctx: dict | None = None,
                transcript: Transcript | None = None, images=()) -> CheckOutcome:
    program, reason = format_check(plan, code)
    if program is None:
        return CheckOutcome(False, False, False, f"format check failed: {reason}")
    ok, reason = matching_check(plan, program, snap)
    if not ok:
        return CheckOutcome(True, False, False, f"matching check failed: {reason}")
    bundle = build_inner_prompt(instruction, snap, plan, code, images)
    request = dict(ctx or {}, bot=INNER, plan=list(plan), code=code, snapshot=snap)
    try:
        resp = gateway.ask(bundle, request, transcript if transcript is not None else Transcript())
    except ResponseParseError as e:
        return CheckOutcome(True, True, False, f"verification failed: the Inner Bot's answer was unreadable ({e})")
    if resp.verdict == "yes":
        return CheckOutcome(True, True, True, "")
    reason = resp.reason or "the Inner Bot rejected the code"
    if resp.code_given and resp.code:
        try:
            report = effect_equivalent(program, parse(resp.code), snap)
            if not report and report.divergences:
                reason += f" [divergence: {'; '.join(report.divergences)}]"
        except DslError:
            pass
    return CheckOutcome(True, True, False, f"verification failed: {reason}")


# -- external check -------------------------------------------------------------------


def extra_assess(before, after, task, plan, code: str, gateway, *, ctx: dict | None = None,
                 transcript: Transcript | None = None, images=()) -> tuple:
    """Returns (verdict, Feedback or None)."""
    bundle = build_extra_prompt(task.instruction, before, after, plan, code, images)
    request = dict(ctx or {}, bot=EXTRA, before=before, after=after, goal=task.goal)
    try:
        resp = gateway.ask(bundle, request, transcript if transcript is not None else Transcript())
    except ResponseParseError as e:
        return "no", Feedback(EXTRA, int(request.get("round", 0)), f"the Extra Bot's answer was unreadable ({e})")
    if resp.verdict == "yes":
        return "yes", None
    return "no", Feedback(EXTRA, int(request.get("round", 0)), resp.reason or "the task is not complete")


# -- the loop ---------------------------------------------------------------------------


def _execute(program: ActionProgram, before, world, fault, step_offset: int, round_index: int) -> tuple:
    """Returns (world, trace lines, steps executed, events, error)."""
    try:
        trace = expand(program, before)
    except DslError as e:
        return world, [], 0, [], str(e)
    lines = [str(s) for s in trace.steps]
    try:
        after, events = interpret(trace, world, fault, step_offset=step_offset, round_index=round_index)
        return after, lines, len(trace), events, None
    except (UnreachableTarget, GripperBusy) as e:
        partial = e.world if e.world is not None else world
        return partial, lines, partial.tick - world.tick, list(e.events), str(e)


def _finish(record: EpisodeRecord, task, world) -> EpisodeRecord:
    record.goal_met = eval_goal(task.goal, world)[0]
    record.final_world = world.to_dict()
    unmet_rounds = [r for r in record.rounds if r.after is not None and not r.goal_met]
    record.fault_fired = any(e.kind == "FaultInjected" for r in record.rounds for e in r.events)
    record.failure_injected = bool(unmet_rounds)
    record.failure_detected = any(r.verdict == "no" for r in unmet_rounds)
    record.failure_corrected = record.failure_detected and record.success
    logger.info(
        "task %s seed %d (%s): %s after %d round(s), %d steps",
        record.task_id, record.seed, record.variant, record.outcome, len(record.rounds), record.total_steps,
    )
    explain({"episode": record.task_id, "seed": record.seed, "outcome": record.outcome, "success": record.success})
    return record


def run_episode(task, world, gateway, config: EngineConfig, world_fault=None) -> EpisodeRecord:
    """Run one episode to Success, InnerDeadlock, OuterExhausted,
    ExecutionFailed or BackendFailure. `task` needs `id`, `instruction`,
    `goal` and may carry `images`.

    A `world_fault` pinned to a step (`at_step`) applies to the first round
    only; a probabilistic one is drawn on every round.
    """
    images = tuple(getattr(task, "images", ()) or ())
    record = EpisodeRecord(task.id, config.seed, config.variant, task.instruction)
    record.world_fault = world_fault.to_dict() if world_fault is not None else None
    record.caps = (config.inner_cycle_cap, config.outer_round_cap)
    history: list = []
    base_ctx = {"goal": task.goal, "seed": config.seed}

    def add_feedback(rnd: RoundRecord, fb: Feedback):
        rnd.feedback.append(fb)
        history.append(fb)

    for r in range(config.outer_round_cap):
        before = snapshot(world)
        rnd = RoundRecord(index=r, before=before.to_dict())
        record.rounds.append(rnd)
        program = None
        for cycle in range(config.inner_cycle_cap):
            ctx = dict(base_ctx, round=r, cycle=cycle, snapshot=before, feedback=len(history))
            bundle = build_decision_prompt(task.instruction, before, history)
            try:
                resp = gateway.ask(bundle, ctx, record.transcript)
            except BackendError as e:
                record.outcome = BACKEND_FAILURE
                record.error = str(e)
                logger.warning("task %s: backend failure in round %d: %s", task.id, r, e)
                return _finish(record, task, world)
            except ResponseParseError as e:
                outcome = CheckOutcome(False, False, False, f"format check failed: {e}")
            else:
                rnd.plan, rnd.code = list(resp.plan), resp.code
                if config.inner_enabled:
                    try:
                        outcome = inner_check(
                            resp.plan, resp.code, before, gateway,
                            instruction=task.instruction, ctx=ctx, transcript=record.transcript, images=images,
                        )
                    except BackendError as e:
                        record.outcome = BACKEND_FAILURE
                        record.error = str(e)
                        return _finish(record, task, world)
                else:
                    parsed, reason = format_check(resp.plan, resp.code, require_plan=False)
                    outcome = CheckOutcome(parsed is not None, True, True, "" if parsed else f"format check failed: {reason}")
            rnd.checks.append(outcome)
            explain({"round": r, "cycle": cycle, "check": outcome.to_dict()})
            if outcome.passed:
                program = parse(rnd.code)
                break
            add_feedback(rnd, Feedback(INNER, r, outcome.reason))
        if program is None:
            record.outcome = INNER_DEADLOCK
            logger.info("task %s: plan and review still disagree after %d cycles", task.id, config.inner_cycle_cap)
            return _finish(record, task, world)

        fault = world_fault if world_fault is not None and (r == 0 or world_fault.at_step is None) else None
        world, rnd.trace, rnd.steps, rnd.events, rnd.exec_error = _execute(
            program, before, world, fault, record.total_steps, r
        )
        record.total_steps += rnd.steps
        after = snapshot(world)
        rnd.after = after.to_dict()
        rnd.goal_met = eval_goal(task.goal, world)[0]
        explain({"round": r, "steps": rnd.steps, "events": [e.kind for e in rnd.events], "error": rnd.exec_error})

        if config.extra_enabled:
            try:
                rnd.verdict, fb = extra_assess(
                    before, after, task, rnd.plan, rnd.code, gateway,
                    ctx=dict(base_ctx, round=r, cycle=0), transcript=record.transcript, images=images,
                )
            except BackendError as e:
                record.outcome = BACKEND_FAILURE
                record.error = str(e)
                return _finish(record, task, world)
            if rnd.verdict == "yes":
                record.outcome = SUCCESS
                return _finish(record, task, world)
            add_feedback(rnd, fb)
        else:
            record.outcome = SUCCESS if rnd.exec_error is None else EXECUTION_FAILED
            if rnd.exec_error is not None:
                logger.info("task %s: execution stopped in round %d: %s", task.id, r, rnd.exec_error)
            return _finish(record, task, world)
    record.outcome = OUTER_EXHAUSTED
    return _finish(record, task, world)


def load_records(path) -> list:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
