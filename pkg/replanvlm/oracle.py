"""Rule-based stand-ins for the Decision, Inner and Extra bots.

The oracle knows the goal predicate, so its plans are correct by
construction. A VlmFaultProfile corrupts its answers in the ways a real model
goes wrong; every draw is keyed by (profile seed, episode seed, round, cycle,
bot) so two runs with the same seeds see the same faults.
"""

import logging
from dataclasses import asdict, dataclass, fields

from replanvlm import selectors
from replanvlm.dsl import ActionProgram, SkillCall, effect_equivalent, parse, print_program, simulate
from replanvlm.errors import ConfigError, DslError, NoPlanFound, UnresolvableGoal, UnresolvableSelector
from replanvlm.goals import AttributeAt, BeltOrder, Delivered, GoalPredicate, ObjectIn, StackOrder, eval_goal, in_zone, unmet_reasons
from replanvlm.prompts import DECISION, EXTRA, INNER
from replanvlm.util import keyed_rng
from replanvlm.world import BELT, ON_TABLE, ON_TOP_OF, TABLE, USER, PerceptionSnapshot, WorldState, diff_snapshots, world_from_snapshot

logger = logging.getLogger(__name__)

DECISION_FAULTS = ("omit_blocker_step", "wrong_object", "plan_code_mismatch", "malformed_code", "empty_output")
VERDICT_FAULTS = {INNER: "inner_wrong_verdict", EXTRA: "extra_wrong_verdict"}


@dataclass(frozen=True)
class VlmFaultProfile:
    omit_blocker_step: float = 0.0
    wrong_object: float = 0.0
    malformed_code: float = 0.0
    plan_code_mismatch: float = 0.0
    empty_output: float = 0.0
    inner_wrong_verdict: float = 0.0
    extra_wrong_verdict: float = 0.0
    # fraction of each Decision fault removed per feedback message in the prompt
    feedback_uptake: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            if f.name == "seed":
                continue
            v = getattr(self, f.name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0:
                raise ConfigError(f"vlm fault '{f.name}' must be a number in [0,1], got {v!r}")

    @classmethod
    def from_dict(cls, d: dict | None) -> "VlmFaultProfile":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown vlm fault field(s): {', '.join(unknown)}")
        if "seed" in d:
            d["seed"] = int(d["seed"])
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def is_zero(self) -> bool:
        return all(getattr(self, n) == 0.0 for n in DECISION_FAULTS + tuple(VERDICT_FAULTS.values()))

    def draw(self, bot: str, ctx: dict) -> list:
        """Names of the faults that fire for this request."""
        rng = keyed_rng("vlm", self.seed, ctx.get("seed", 0), ctx.get("round", 0), ctx.get("cycle", 0), bot)
        if bot == DECISION:
            damping = (1.0 - self.feedback_uptake) ** int(ctx.get("feedback", 0))
            draws = [(name, rng.random()) for name in DECISION_FAULTS]
            return [name for name, r in draws if r < getattr(self, name) * damping]
        name = VERDICT_FAULTS.get(bot)
        if name is None:
            return []
        return [name] if rng.random() < getattr(self, name) else []


# -- plan search ------------------------------------------------------------------


@dataclass(frozen=True)
class Move:
    """One plan chunk: a pick plus its release, or a drawer opening."""

    tag: str  # open | clear | goal | idle
    subject: str  # selector of the object moved, or the drawer id
    dest: str = ""  # table | belt | user | container id | selector of a support
    dest_kind: str = ""  # zone | container | object
    picks: bool = True

    def calls(self) -> list:
        if self.tag == "open":
            return [SkillCall("open_drawer", (self.subject,))]
        if self.tag == "idle":
            return [SkillCall("wait", (0,))]
        out = [SkillCall("pick", (self.subject,))] if self.picks else []
        out.append(SkillCall("give") if self.dest == USER else SkillCall("place", (self.dest,)))
        return out

    def lines(self) -> list:
        if self.tag == "open":
            return [f"Open the {self.subject}"]
        if self.tag == "idle":
            return ["Wait 0 steps"]
        out = [f"Pick up the {self.subject}"] if self.picks else []
        if self.dest == USER:
            out.append(f"Give the {self.subject} to the user")
        elif self.dest_kind == "zone":
            out.append(f"Place the {self.subject} on the {self.dest}")
        elif self.dest_kind == "container":
            out.append(f"Put the {self.subject} in the {self.dest}")
        else:
            out.append(f"Stack the {self.subject} on the {self.dest}")
        return out


def _visible(world: WorldState) -> list:
    return [o for o in world.objects.values() if not world.is_hidden(o.id)]


def object_name(world: WorldState, oid: str, prefer_attribute: str | None = None) -> str:
    """Shortest selector that picks out exactly this object."""
    if oid.startswith("?"):
        return oid.split(":", 1)[1]
    o = world.objects[oid]
    options = [o.describe()]
    if prefer_attribute and prefer_attribute in o.attributes:
        options.insert(0, f"{prefer_attribute} {o.kind}")
    options.extend(f"{a} {o.kind}" for a in sorted(o.attributes))
    visible = _visible(world)
    for name in options:
        found = selectors.candidates(name, visible)
        if len(found) == 1 and found[0].id == oid:
            return name
    return oid


class _Planner:
    def __init__(self, snapshot: PerceptionSnapshot):
        self.snapshot = snapshot
        self.moves: list = []

    def program(self) -> ActionProgram:
        return ActionProgram(tuple(c for m in self.moves for c in m.calls()))

    def world(self) -> WorldState:
        return simulate(self.program(), self.snapshot)

    def resolve(self, world: WorldState, selector: str) -> str | None:
        try:
            return selectors.resolve(selector, _visible(world), world.gripper.pose)
        except UnresolvableSelector:
            return None

    def open_drawer(self, drawer_id: str):
        self.moves.append(Move("open", drawer_id))

    def transfer(self, world: WorldState, oid: str, dest: str, tag: str = "goal", prefer_attribute=None):
        name = object_name(world, oid, prefer_attribute)
        if dest in (TABLE, BELT, USER):
            self.moves.append(Move(tag, name, dest, "zone"))
        elif dest in world.containers:
            self.moves.append(Move(tag, name, dest, "container"))
        else:
            self.moves.append(Move(tag, name, object_name(world, dest), "object"))

    def clear(self, oid: str):
        """Move everything stacked on `oid` to the table, topmost first."""
        while True:
            w = self.world()
            top, cur = None, oid
            while (above := w.on_top_of(cur)) is not None:
                top = cur = above
            if top is None:
                return
            self.transfer(w, top, TABLE, tag="clear")

    def make_room(self, container_id: str, keep: str):
        w = self.world()
        c = w.containers.get(container_id)
        if c is None:
            return
        if c.kind == "drawer" and not c.open:
            self.open_drawer(c.id)
            w = self.world()
        occupants = [i for i in w.occupants(c.id) if i != keep]
        while occupants and len(w.occupants(c.id)) >= c.capacity:
            self.transfer(w, occupants.pop(0), TABLE, tag="clear")
            w = self.world()

    def put(self, oid: str, zone: str, prefer_attribute=None):
        if zone not in (TABLE, BELT, USER):
            self.make_room(zone, oid)
        self.clear(oid)
        self.transfer(self.world(), oid, zone, prefer_attribute=prefer_attribute)


def _needed(goal: GoalPredicate) -> list:
    return [s for c in goal.conditions if not isinstance(c, AttributeAt) for s in c.objects()]


def _holds(cond, world: WorldState) -> bool:
    try:
        return cond.holds(world)
    except UnresolvableGoal:
        return False


def plan_moves(snapshot: PerceptionSnapshot, goal: GoalPredicate) -> list:
    p = _Planner(snapshot)
    w = p.world()
    if w.gripper.holding is not None:
        p.moves.append(Move("clear", object_name(w, w.gripper.holding), TABLE, "zone", picks=False))

    hidden = [s for s in _needed(goal) if not selectors.candidates(s, snapshot.objects)]
    if hidden:
        closed = sorted(c.id for c in snapshot.containers if c.kind == "drawer" and not c.open)
        if not closed:
            raise NoPlanFound(f"'{hidden[0]}' is not in the scene")
        p.open_drawer(closed[0])

    for cond in goal.conditions:
        w = p.world()
        if _holds(cond, w):
            continue
        if isinstance(cond, (ObjectIn, Delivered)):
            zone = USER if isinstance(cond, Delivered) else cond.zone
            oid = p.resolve(w, cond.object)
            if oid is None:
                # still behind the drawer in this model; bound when the drawer opens
                subject = selectors.canonical(cond.object)
                p.moves.append(Move("goal", subject, zone, "container" if zone in w.containers else "zone"))
                continue
            p.put(oid, zone)
        elif isinstance(cond, StackOrder):
            ids = [p.resolve(w, s) for s in cond.order]
            if None in ids:
                raise NoPlanFound(f"'{cond.order[ids.index(None)]}' is not visible")
            base = w.objects[ids[0]]
            if base.relation.type != ON_TABLE or base.fallen:
                p.put(ids[0], TABLE)
            for below, above in zip(ids, ids[1:]):
                w = p.world()
                rel = w.objects[above].relation
                if rel.type == ON_TOP_OF and rel.target == below:
                    continue
                p.clear(below)
                p.clear(above)
                p.transfer(p.world(), above, below)
        elif isinstance(cond, BeltOrder):
            for sel in cond.order:
                oid = p.resolve(p.world(), sel)
                if oid is None:
                    raise NoPlanFound(f"'{sel}' is not visible")
                p.put(oid, BELT)
        elif isinstance(cond, AttributeAt):
            carriers = [i for i in cond.carriers(w) if not w.is_hidden(i)]
            if not carriers:
                raise NoPlanFound(f"no visible object is {cond.attribute}")
            for oid in carriers:
                if not in_zone(p.world(), oid, cond.zone):
                    p.put(oid, cond.zone, prefer_attribute=cond.attribute)
    if not p.moves:
        p.moves.append(Move("idle", ""))
    return p.moves


def _flatten(moves: list) -> tuple:
    lines = [line for m in moves for line in m.lines()]
    program = ActionProgram(tuple(c for m in moves for c in m.calls()))
    return lines, program


def plan_oracle(snapshot: PerceptionSnapshot, goal: GoalPredicate) -> tuple:
    """Return (plan lines, ActionProgram); plan lines match calls one to one."""
    return _flatten(plan_moves(snapshot, goal))


# -- response text ------------------------------------------------------------------


def format_decision(plan, code: str) -> str:
    numbered = "\n".join(f"{i}. {line}" for i, line in enumerate(plan, 1))
    return f"PLAN:\n{numbered}\nCODE:\n```\n{code}\n```"


def format_verdict(verdict: str, reason: str, code: str | None = None) -> str:
    text = f"VERDICT: {verdict}\nREASON: {reason}"
    if code is not None:
        text += f"\nCODE:\n```\n{code}\n```"
    return text


# -- faults ---------------------------------------------------------------------------


def _wrong_object(moves: list, snapshot: PerceptionSnapshot, rng) -> list:
    world = world_from_snapshot(snapshot)
    for i, m in enumerate(moves):
        if m.tag != "goal" or not m.picks:
            continue
        others = sorted(
            object_name(world, o.id) for o in _visible(world) if object_name(world, o.id) != m.subject
        )
        if not others:
            return moves
        swapped = Move(m.tag, rng.choice(others), m.dest, m.dest_kind, m.picks)
        return moves[:i] + [swapped] + moves[i + 1 :]
    return moves


def apply_decision_faults(moves: list, fired: list, snapshot: PerceptionSnapshot, rng) -> str:
    """Corrupted Decision response text for the faults that fired."""
    if "empty_output" in fired:
        return ""
    if "omit_blocker_step" in fired:
        moves = [m for m in moves if m.tag not in ("clear", "open")] or [Move("idle", "")]
    if "wrong_object" in fired:
        moves = _wrong_object(moves, snapshot, rng)
    plan, program = _flatten(moves)
    code = print_program(program)
    if "plan_code_mismatch" in fired:
        first = next((i for i, m in enumerate(moves) if m.picks and m.tag != "idle" and m.tag != "open"), None)
        if first is not None:
            code = print_program(_flatten(moves[:first] + moves[first + 1 :])[1])
    if "malformed_code" in fired:
        subject = next((m.subject for m in moves if m.tag == "goal"), "object")
        code = f"grab the {subject} and put it where it belongs"
    return format_decision(plan, code)


# -- reviewers ------------------------------------------------------------------------


def review_oracle(plan, code: str, snapshot: PerceptionSnapshot, goal: GoalPredicate) -> tuple:
    """Inner Bot: regenerate independently and compare effects.
    Returns (verdict, reason, regenerated code)."""
    try:
        _, reference = plan_oracle(snapshot, goal)
    except NoPlanFound as e:
        return "no", f"no plan reaches the goal: {e}", None
    ref_code = print_program(reference)
    try:
        program = parse(code)
    except DslError as e:
        return "no", f"the code is not valid skill code: {e}", ref_code
    report = effect_equivalent(program, reference, snapshot)
    if report:
        return "yes", "", ref_code
    return "no", f"the code does not do what the request needs: {report.summary()}", ref_code


def _blocker_hints(goal: GoalPredicate, world: WorldState) -> list:
    hints = []
    for cond in goal.conditions:
        if _holds(cond, world):
            continue
        for sel in cond.objects():
            try:
                oid = selectors.resolve(sel, world.objects.values(), world.gripper.pose)
            except UnresolvableSelector:
                continue
            top = world.on_top_of(oid)
            if top is not None:
                hints.append(f"the {world.objects[top].describe()} must be removed from the {world.objects[oid].describe()} first")
    return hints


def assess_oracle(before: PerceptionSnapshot, after: PerceptionSnapshot, goal: GoalPredicate) -> tuple:
    """Extra Bot: judge the after-scene against the goal. Returns (verdict, reason)."""
    world = world_from_snapshot(after)
    try:
        ok, _ = eval_goal(goal, world)
    except UnresolvableGoal:
        ok = False
    if ok:
        return "yes", ""
    reasons = unmet_reasons(goal, world) + _blocker_hints(goal, world)
    changes = diff_snapshots(before, after).lines()
    observed = "observed changes: " + ", ".join(changes) if changes else "nothing in the scene changed"
    return "no", "; ".join(reasons + [observed])


def _flip(verdict: str, reason: str) -> tuple:
    if verdict == "yes":
        return "no", "the result does not look right"
    return "yes", ""


def oracle_complete(bundle, profile: VlmFaultProfile, ctx: dict) -> str:
    """Answer a bundle from the ground truth in `ctx` (goal, snapshots, the
    Decision output under review), then corrupt it per the fault profile."""
    fired = profile.draw(bundle.bot, ctx)
    if fired:
        logger.debug("vlm faults fired for %s: %s", bundle.bot, ", ".join(fired))
    goal = ctx["goal"]
    if bundle.bot == DECISION:
        snap = ctx["snapshot"]
        try:
            moves = plan_moves(snap, goal)
        except NoPlanFound as e:
            return format_decision([f"No plan: {e}"], "")
        rng = keyed_rng("vlm-pick", profile.seed, ctx.get("seed", 0), ctx.get("round", 0), ctx.get("cycle", 0))
        return apply_decision_faults(moves, fired, snap, rng)
    if bundle.bot == INNER:
        verdict, reason, ref_code = review_oracle(ctx["plan"], ctx["code"], ctx["snapshot"], goal)
        if fired:
            verdict, reason = _flip(verdict, reason)
        return format_verdict(verdict, reason, ref_code)
    verdict, reason = assess_oracle(ctx["before"], ctx["after"], goal)
    if fired:
        verdict, reason = _flip(verdict, reason)
    return format_verdict(verdict, reason)
