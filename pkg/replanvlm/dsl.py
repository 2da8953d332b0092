"""The skill language the Decision Bot writes.

    program := call (";" | newline)*
    call    := ident "(" arglist? ")"

Parsing goes through Python's own tokenizer and AST, keeping only bare calls
of known skills with literal arguments.
"""

import ast
from dataclasses import dataclass, field

from replanvlm import selectors
from replanvlm.errors import (
    ArityError,
    DslError,
    DslSyntaxError,
    GripperBusy,
    UnknownSkill,
    UnreachableTarget,
    UnresolvableSelector,
)
from replanvlm.vocab import ARITY
from replanvlm.world import (
    BELT,
    ON_BELT,
    SLOT_CLEARANCE,
    TABLE,
    TABLE_SLOTS,
    USER,
    PerceptionSnapshot,
    PrimitiveStep,
    SceneObject,
    WorldState,
    apply_step,
    world_from_snapshot,
)

# Global skill registry: name -> callable(args: tuple, ctx: dict) -> list[PrimitiveStep]
SKILLS: dict = {}


def register_skill(name: str, func):
    SKILLS[name] = func


from replanvlm.skills import register_all as _register_all  # noqa: E402

_register_all(SKILLS, register_skill)

DEFERRED_PREFIX = "?"


@dataclass(frozen=True)
class SkillCall:
    skill: str
    args: tuple = ()

    def to_text(self) -> str:
        # repr() output is what the parser reads back, escapes included
        return f"{self.skill}({', '.join(repr(a) for a in self.args)})"


@dataclass(frozen=True)
class ActionProgram:
    calls: tuple
    source: str = field(default="", compare=False)

    def __add__(self, other: "ActionProgram") -> "ActionProgram":
        calls = self.calls + other.calls
        return ActionProgram(calls, "\n".join(c.to_text() for c in calls))


@dataclass(frozen=True)
class EffectTrace:
    steps: tuple  # PrimitiveStep, target already bound
    call_index: tuple  # skill call each step came from
    terminal: dict  # object id -> final relation text
    deferred: dict = field(default_factory=dict)  # token -> (drawer id, selector words)
    error: str | None = None  # hard error met during symbolic execution

    def __len__(self) -> int:
        return len(self.steps)


@dataclass
class EquivalenceReport:
    equivalent: bool
    divergences: list
    errors: dict

    def __bool__(self) -> bool:
        return self.equivalent

    def summary(self) -> str:
        parts = [f"{side} program: {msg}" for side, msg in sorted(self.errors.items())]
        parts.extend(self.divergences)
        return "; ".join(parts)


# -- parsing ---------------------------------------------------------------------


def _offset(text: str, lineno: int | None, col: int | None) -> int:
    lines = text.split("\n")
    lineno = max(1, lineno or 1)
    return sum(len(line) + 1 for line in lines[: lineno - 1]) + max(0, (col or 1) - 1)


def _literal(node, text: str):
    if isinstance(node, ast.Constant) and isinstance(node.value, (str, int, float)) and not isinstance(node.value, bool):
        return node.value
    if (
        isinstance(node, ast.UnaryOp)
        and isinstance(node.op, ast.USub)
        and isinstance(node.operand, ast.Constant)
        and isinstance(node.operand.value, (int, float))
        and not isinstance(node.operand.value, bool)
    ):
        return -node.operand.value
    raise DslSyntaxError("arguments must be string or number literals", _offset(text, node.lineno, node.col_offset + 1))


def parse(source: str) -> ActionProgram:
    if not isinstance(source, str) or not source.strip():
        raise DslSyntaxError("empty program", 0)
    text = "\n".join(line.strip() for line in source.splitlines())
    try:
        tree = ast.parse(text, mode="exec")
    except SyntaxError as e:
        raise DslSyntaxError(f"invalid syntax ({e.msg})", _offset(text, e.lineno, e.offset))
    calls = []
    for stmt in tree.body:
        pos = _offset(text, stmt.lineno, stmt.col_offset + 1)
        if not isinstance(stmt, ast.Expr) or not isinstance(stmt.value, ast.Call):
            raise DslSyntaxError("expected a skill call", pos)
        call = stmt.value
        if not isinstance(call.func, ast.Name):
            raise DslSyntaxError("skill name must be a plain identifier", pos)
        name = call.func.id
        if name not in ARITY:
            raise UnknownSkill(name, pos)
        if call.keywords:
            raise DslSyntaxError("keyword arguments are not allowed", pos)
        args = tuple(_literal(a, text) for a in call.args)
        if len(args) != ARITY[name]:
            raise ArityError(f"{name} expects {ARITY[name]} argument(s), got {len(args)} at position {pos}")
        calls.append(SkillCall(name, args))
    if not calls:
        raise DslSyntaxError("empty program", 0)
    return ActionProgram(tuple(calls), source)


def print_program(program: ActionProgram) -> str:
    return "\n".join(c.to_text() for c in program.calls)


# -- expansion --------------------------------------------------------------------


def _free_table_slot(snapshot: PerceptionSnapshot, allocated: list) -> str:
    taken = [o.pose for o in snapshot.objects if o.id != snapshot.holding]
    taken += [c.pose for c in snapshot.containers]
    taken += allocated
    for slot in TABLE_SLOTS:
        if all(slot.planar_distance(p) >= SLOT_CLEARANCE for p in taken):
            allocated.append(slot)
            return f"{TABLE}@{slot.x:.2f},{slot.y:.2f}"
    return TABLE


def _make_context(snapshot: PerceptionSnapshot) -> dict:
    ctx = {"snapshot": snapshot, "opened": [], "allocated": [], "deferred": {}}
    visible = list(snapshot.objects)

    def bind_object(selector) -> str:
        try:
            return selectors.resolve(str(selector), visible, snapshot.arm_pose)
        except UnresolvableSelector:
            if not ctx["opened"]:
                raise
            words = selectors.selector_words(str(selector))
            if not words:
                raise
            drawer = ctx["opened"][-1]
            token = f"{DEFERRED_PREFIX}{drawer}:{' '.join(words)}"
            ctx["deferred"][token] = (drawer, words)
            return token

    def bind_destination(target) -> str:
        name = str(target).strip().lower()
        if name in (TABLE, "the table"):
            return _free_table_slot(snapshot, ctx["allocated"])
        if name in (BELT, "the belt", "conveyor", "conveyor belt"):
            if snapshot.belt is None:
                raise UnresolvableSelector(str(target), "the scene has no conveyor belt")
            return BELT
        if name in (USER, "me"):
            return USER
        by_id = [c for c in snapshot.containers if c.id.lower() == name]
        if by_id:
            return by_id[0].id
        words = selectors.selector_words(name)
        by_kind = sorted(
            (c for c in snapshot.containers if words and words[-1] == c.kind and all(w in c.id.lower() or w == c.kind for w in words)),
            key=lambda c: c.id,
        )
        if by_kind:
            return by_kind[0].id
        return bind_object(target)

    ctx["bind_object"] = bind_object
    ctx["bind_destination"] = bind_destination
    return ctx


def _terminal_relations(world: WorldState) -> dict:
    belt_rank = sorted(
        (o for o in world.objects.values() if o.relation.type == ON_BELT),
        key=lambda o: (-(o.relation.offset or 0.0), o.id),
    )
    rank = {o.id: i for i, o in enumerate(belt_rank)}
    out = {}
    for oid in sorted(world.objects):
        o = world.objects[oid]
        text = f"{ON_BELT}#{rank[oid]}" if oid in rank else o.relation.describe()
        out[oid] = text + (" (fallen)" if o.fallen else "")
    return out


def _phantoms(deferred: dict) -> dict:
    out = {}
    for token, (drawer, words) in deferred.items():
        words = list(words)
        kind = words[-1]
        color = words[0] if len(words) > 1 else ""
        attrs = frozenset(words[1:-1])
        out[token] = (drawer, SceneObject(id=token, kind=kind, color=color, attributes=attrs))
    return out


def _symbolic_run(steps: tuple, snapshot: PerceptionSnapshot, deferred: dict) -> tuple:
    world = world_from_snapshot(snapshot, _phantoms(deferred))
    trace = EffectTrace(tuple(steps), (), {}, deferred)
    try:
        world, _ = interpret(trace, world)
        return _terminal_relations(world), None
    except (UnreachableTarget, GripperBusy) as e:
        return _terminal_relations(e.world or world), str(e)


def expand(program: ActionProgram, snapshot: PerceptionSnapshot) -> EffectTrace:
    ctx = _make_context(snapshot)
    steps, index = [], []
    for i, call in enumerate(program.calls):
        expander = SKILLS.get(call.skill)
        if expander is None:
            raise UnknownSkill(call.skill)
        produced = expander(call.args, ctx)
        steps.extend(produced)
        index.extend([i] * len(produced))
    deferred = dict(ctx["deferred"])
    terminal, error = _symbolic_run(tuple(steps), snapshot, deferred)
    return EffectTrace(tuple(steps), tuple(index), terminal, deferred, error)


def count_steps(program: ActionProgram, snapshot: PerceptionSnapshot) -> int:
    return len(expand(program, snapshot).steps)


def simulate(program: ActionProgram, snapshot: PerceptionSnapshot) -> WorldState:
    """World a program leaves behind when run on the snapshot's reconstruction.
    Stops at the first hard error."""
    trace = expand(program, snapshot)
    world = world_from_snapshot(snapshot, _phantoms(trace.deferred))
    try:
        world, _ = interpret(trace, world)
    except (UnreachableTarget, GripperBusy) as e:
        world = e.world or world
    return world


# -- interpretation ------------------------------------------------------------------


def _bind_deferred(step: PrimitiveStep, world: WorldState, bound: dict) -> PrimitiveStep:
    token = step.target
    if token is None or not token.startswith(DEFERRED_PREFIX):
        return step
    if token not in bound:
        words = token.split(":", 1)[1]
        visible = [o for o in world.objects.values() if not world.is_hidden(o.id)]
        try:
            bound[token] = selectors.resolve(words, visible, world.gripper.pose)
        except UnresolvableSelector:
            raise UnreachableTarget(f"'{words}' is not visible", token)
    return PrimitiveStep(step.kind, bound[token])


def interpret(trace: EffectTrace, world: WorldState, fault=None, step_offset: int = 0, round_index: int = 0) -> tuple:
    """Run a trace against a world. Returns (final world, events). Recoverable
    events are recorded; hard errors are raised with the partial world and
    events attached."""
    events: list = []
    bound: dict = {}
    for i, step in enumerate(trace.steps):
        f = fault if fault is not None and fault.triggers(step_offset + i, round_index) else None
        try:
            step = _bind_deferred(step, world, bound)
            res = apply_step(world, step, f)
        except (UnreachableTarget, GripperBusy) as e:
            e.world = world
            e.events = events
            raise
        world = res.world
        events.extend(res.events)
    return world, events


# -- equivalence -----------------------------------------------------------------------


def _label(snapshot: PerceptionSnapshot, oid: str) -> str:
    o = snapshot.object(oid)
    if o is not None:
        return o.describe()
    if oid.startswith(DEFERRED_PREFIX):
        return oid.split(":", 1)[1]
    return oid


def effect_equivalent(a: ActionProgram, b: ActionProgram, snapshot: PerceptionSnapshot) -> EquivalenceReport:
    traces, errors = {}, {}
    for side, prog in (("left", a), ("right", b)):
        try:
            traces[side] = expand(prog, snapshot)
        except DslError as e:
            errors[side] = str(e)
    if errors:
        return EquivalenceReport(False, [], errors)
    deferred = {**traces["left"].deferred, **traces["right"].deferred}
    left, left_err = _symbolic_run(traces["left"].steps, snapshot, deferred)
    right, right_err = _symbolic_run(traces["right"].steps, snapshot, deferred)
    divergences = []
    for oid in sorted(set(left) | set(right)):
        ra, rb = left.get(oid, "-"), right.get(oid, "-")
        if ra != rb:
            divergences.append(f"{_label(snapshot, oid)}: {ra} vs {rb}")
    if left_err != right_err:
        divergences.append(f"execution error: {left_err or 'none'} vs {right_err or 'none'}")
    return EquivalenceReport(not divergences, divergences, {})
