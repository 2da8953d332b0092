"""Deterministic tabletop world: scene state, primitive-step semantics,
conveyor motion, occlusion-aware snapshots, fault injection and diffs."""

import math
from dataclasses import dataclass, field, replace

from replanvlm.errors import GripperBusy, ReplanError, UnreachableTarget, VocabularyMismatch
from replanvlm.util import keyed_rng

POSE_TOL_M = 0.01
POSE_TOL_RAD = 0.05
STACK_HEIGHT = 0.05
ARM_HOVER_Z = 0.30

ON_TABLE = "OnTable"
ON_TOP_OF = "OnTopOf"
INSIDE = "Inside"
ON_BELT = "OnBelt"
HELD = "HeldByGripper"
DELIVERED = "Delivered"
RELATION_TYPES = (ON_TABLE, ON_TOP_OF, INSIDE, ON_BELT, HELD, DELIVERED)

PRIMITIVE_KINDS = ("MoveAbove", "Lower", "CloseGripper", "Lift", "Transfer", "OpenGripper")

# Named destinations that are not objects or containers
USER = "user"
PULL = "pull"
HERE = "here"
BELT = "belt"
TABLE = "table"


@dataclass(frozen=True)
class Pose:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    yaw: float = 0.0

    def close_to(self, other: "Pose") -> bool:
        dist = math.dist((self.x, self.y, self.z), (other.x, other.y, other.z))
        return dist < POSE_TOL_M and abs(self.yaw - other.yaw) < POSE_TOL_RAD

    def planar_distance(self, other: "Pose") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def to_dict(self) -> dict:
        return {"x": round(self.x, 6), "y": round(self.y, 6), "z": round(self.z, 6), "yaw": round(self.yaw, 6)}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(float(d.get("x", 0.0)), float(d.get("y", 0.0)), float(d.get("z", 0.0)), float(d.get("yaw", 0.0)))


USER_POSE = Pose(0.0, -0.60, 0.20)
ARM_HOME = Pose(0.0, 0.0, 0.40)
# Free-placement grid on the table
TABLE_SLOTS = tuple(Pose(x, y, 0.0) for x in (0.25, 0.35, 0.45, 0.55) for y in (-0.30, -0.15, 0.0, 0.15, 0.30))
SLOT_CLEARANCE = 0.06


@dataclass(frozen=True)
class Relation:
    type: str
    target: str | None = None
    offset: float | None = None

    def same_as(self, other: "Relation") -> bool:
        """Equality ignoring belt offset (offsets show up as pose changes)."""
        return self.type == other.type and self.target == other.target

    def describe(self) -> str:
        if self.type in (ON_TOP_OF, INSIDE):
            return f"{self.type}({self.target})"
        return self.type

    def to_dict(self) -> dict:
        d = {"type": self.type}
        if self.target is not None:
            d["target"] = self.target
        if self.offset is not None:
            d["offset"] = round(self.offset, 6)
        return d


@dataclass(frozen=True)
class SceneObject:
    id: str
    kind: str
    color: str = ""
    attributes: frozenset = frozenset()
    pose: Pose = field(default_factory=Pose)
    relation: Relation = field(default_factory=lambda: Relation(ON_TABLE))
    fallen: bool = False

    def describe(self) -> str:
        return f"{self.color} {self.kind}".strip()

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "kind": self.kind,
            "color": self.color,
            "attributes": sorted(self.attributes),
            "pose": self.pose.to_dict(),
            "relation": self.relation.to_dict(),
        }
        if self.fallen:
            d["fallen"] = True
        return d


@dataclass(frozen=True)
class ContainerState:
    id: str
    kind: str  # drawer | box | plate
    open: bool = True
    capacity: int = 1
    pose: Pose = field(default_factory=Pose)

    def to_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind, "open": self.open, "capacity": self.capacity, "pose": self.pose.to_dict()}


@dataclass(frozen=True)
class ConveyorBelt:
    axis: tuple = (1.0, 0.0)
    speed: float = 0.005
    span: tuple = (0.0, 1.0)
    active: bool = True
    origin: Pose = field(default_factory=lambda: Pose(-0.5, 0.45, 0.05))

    def pose_at(self, offset: float) -> Pose:
        return Pose(self.origin.x + self.axis[0] * offset, self.origin.y + self.axis[1] * offset, self.origin.z)

    def to_dict(self) -> dict:
        return {
            "axis": list(self.axis),
            "speed": self.speed,
            "span": list(self.span),
            "active": self.active,
            "origin": self.origin.to_dict(),
        }


@dataclass(frozen=True)
class Gripper:
    holding: str | None = None
    handle: str | None = None  # drawer whose handle is gripped
    at: str | None = None
    pose: Pose = ARM_HOME
    lowered: bool = False
    slip_pending: bool = False


@dataclass
class WorldState:
    tick: int = 0
    objects: dict = field(default_factory=dict)
    containers: dict = field(default_factory=dict)
    belt: ConveyorBelt | None = None
    gripper: Gripper = field(default_factory=Gripper)
    seed: int = 0

    def clone(self) -> "WorldState":
        return WorldState(self.tick, dict(self.objects), dict(self.containers), self.belt, self.gripper, self.seed)

    def on_top_of(self, object_id: str) -> str | None:
        for o in self.objects.values():
            if o.relation.type == ON_TOP_OF and o.relation.target == object_id:
                return o.id
        return None

    def occupants(self, container_id: str) -> list:
        return sorted(o.id for o in self.objects.values() if o.relation.type == INSIDE and o.relation.target == container_id)

    def is_hidden(self, object_id: str) -> bool:
        rel = self.objects[object_id].relation
        if rel.type != INSIDE:
            return False
        c = self.containers.get(rel.target)
        return c is not None and c.kind == "drawer" and not c.open

    def same_vocabulary(self, other: "WorldState") -> bool:
        return set(self.objects) == set(other.objects) and set(self.containers) == set(other.containers)

    def to_dict(self) -> dict:
        g = self.gripper
        return {
            "tick": self.tick,
            "objects": [self.objects[k].to_dict() for k in sorted(self.objects)],
            "containers": [self.containers[k].to_dict() for k in sorted(self.containers)],
            "belt": self.belt.to_dict() if self.belt else None,
            "gripper": {"holding": g.holding, "handle": g.handle, "at": g.at, "pose": g.pose.to_dict()},
        }


@dataclass(frozen=True)
class PerceptionSnapshot:
    taken_at_tick: int
    objects: tuple  # visible SceneObjects
    containers: tuple  # ContainerState, with open flags as seen
    arm_pose: Pose = ARM_HOME
    holding: str | None = None
    belt: ConveyorBelt | None = None

    def visible_ids(self) -> set:
        return {o.id for o in self.objects}

    def object(self, object_id: str) -> SceneObject | None:
        for o in self.objects:
            if o.id == object_id:
                return o
        return None

    def container(self, container_id: str) -> ContainerState | None:
        for c in self.containers:
            if c.id == container_id:
                return c
        return None

    def to_dict(self) -> dict:
        return {
            "tick": self.taken_at_tick,
            "objects": [o.to_dict() for o in self.objects],
            "containers": [{"id": c.id, "kind": c.kind, "open": c.open} for c in self.containers],
            "holding": self.holding,
        }

    def describe(self) -> str:
        """Scene text handed to the bots in place of a camera image."""
        lines = [f"t={self.taken_at_tick}"]
        for o in self.objects:
            attrs = f" [{', '.join(sorted(o.attributes))}]" if o.attributes else ""
            extra = " (fallen)" if o.fallen else ""
            lines.append(f"- {o.id}: {o.describe()}{attrs} at ({o.pose.x:.2f}, {o.pose.y:.2f}, {o.pose.z:.2f}) {o.relation.describe()}{extra}")
        for c in self.containers:
            lines.append(f"- {c.id}: {c.kind} {'open' if c.open else 'closed'}")
        if self.holding:
            lines.append(f"- gripper holds {self.holding}")
        return "\n".join(lines)


@dataclass(frozen=True)
class WorldFaultSpec:
    kind: str  # GripSlip | Displace | DropDuringTransfer
    at_step: int | None = None
    probability: float | None = None
    displacement: tuple = (0.08, 0.0)
    seed: int = 0

    KINDS = ("GripSlip", "Displace", "DropDuringTransfer")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ReplanError(f"unknown world fault kind '{self.kind}'")
        if self.at_step is None and self.probability is None:
            raise ReplanError("world fault needs at_step or probability")
        if self.probability is not None and not 0.0 <= self.probability <= 1.0:
            raise ReplanError(f"world fault probability {self.probability} outside [0,1]")

    @property
    def primitive(self) -> str:
        return {"GripSlip": "CloseGripper", "Displace": "OpenGripper", "DropDuringTransfer": "Transfer"}[self.kind]

    def triggers(self, step_index: int, round_index: int = 0) -> bool:
        if self.at_step is not None:
            return step_index == self.at_step
        return keyed_rng("world", self.seed, round_index, step_index).random() < (self.probability or 0.0)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "at_step": self.at_step,
            "probability": self.probability,
            "displacement": list(self.displacement),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorldFaultSpec":
        return cls(
            kind=d["kind"],
            at_step=d.get("at_step"),
            probability=d.get("probability"),
            displacement=tuple(d.get("displacement") or (0.08, 0.0)),
            seed=int(d.get("seed", 0)),
        )


@dataclass(frozen=True)
class WorldEvent:
    tick: int
    kind: str  # Collision | Drop | Fallen | Spill | EmptyGrasp | Slip | FaultInjected | DrawerOpened
    object_id: str | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {"tick": self.tick, "kind": self.kind, "object": self.object_id, "detail": self.detail}


@dataclass(frozen=True)
class PrimitiveStep:
    kind: str
    target: str | None = None

    def __str__(self) -> str:
        return f"{self.kind}({self.target})" if self.target is not None else self.kind


@dataclass
class StepResult:
    world: WorldState
    events: list


@dataclass(frozen=True)
class StateDiff:
    moved: tuple = ()  # (id, old pose, new pose)
    relation_changes: tuple = ()  # (id, old relation, new relation)
    container_changes: tuple = ()  # (id, open before, open after)
    appeared: tuple = ()
    vanished: tuple = ()

    def is_empty(self) -> bool:
        return not (self.moved or self.relation_changes or self.container_changes or self.appeared or self.vanished)

    def lines(self) -> list:
        out = []
        for oid, old, new in self.relation_changes:
            out.append(f"{oid}: {old.describe()} -> {new.describe()}")
        for oid, old, new in self.moved:
            out.append(f"{oid}: moved ({old.x:.2f}, {old.y:.2f}) -> ({new.x:.2f}, {new.y:.2f})")
        for cid, before, after in self.container_changes:
            out.append(f"{cid}: {'open' if before else 'closed'} -> {'open' if after else 'closed'}")
        out.extend(f"{oid}: came into view" for oid in self.appeared)
        out.extend(f"{oid}: no longer visible" for oid in self.vanished)
        return out


# -- snapshots -----------------------------------------------------------------


def snapshot(world: WorldState) -> PerceptionSnapshot:
    visible = tuple(world.objects[k] for k in sorted(world.objects) if not world.is_hidden(k))
    return PerceptionSnapshot(
        taken_at_tick=world.tick,
        objects=visible,
        containers=tuple(world.containers[k] for k in sorted(world.containers)),
        arm_pose=world.gripper.pose,
        holding=world.gripper.holding,
        belt=world.belt,
    )


def world_from_snapshot(snap: PerceptionSnapshot, phantoms: dict | None = None) -> WorldState:
    """Rebuild a world from what the camera saw. `phantoms` maps a placeholder
    id to (drawer id, SceneObject template) for objects that are expected
    behind a closed drawer."""
    objects = {o.id: o for o in snap.objects}
    containers = {c.id: c for c in snap.containers}
    for pid, (drawer_id, template) in sorted((phantoms or {}).items()):
        pose = containers[drawer_id].pose if drawer_id in containers else Pose()
        objects[pid] = replace(template, id=pid, pose=pose, relation=Relation(INSIDE, drawer_id))
    holding = snap.holding if snap.holding in objects else None
    return WorldState(
        tick=snap.taken_at_tick,
        objects=objects,
        containers=containers,
        belt=snap.belt,
        gripper=Gripper(holding=holding, pose=snap.arm_pose),
    )


# -- primitive steps -------------------------------------------------------------


def _target_pose(world: WorldState, target: str | None) -> Pose:
    if target is None or target == HERE:
        return world.gripper.pose
    if target == USER:
        return USER_POSE
    if target == PULL:
        g = world.gripper.pose
        return Pose(g.x, g.y - 0.15, g.z)
    if target == BELT:
        if world.belt is None:
            return world.gripper.pose
        return world.belt.pose_at(world.belt.span[0])
    if target.startswith(TABLE + "@"):
        x, y = (float(v) for v in target.split("@", 1)[1].split(","))
        return Pose(x, y, 0.0)
    if target == TABLE:
        return Pose(world.gripper.pose.x, world.gripper.pose.y, 0.0)
    if target in world.objects:
        return world.objects[target].pose
    if target in world.containers:
        return world.containers[target].pose
    raise UnreachableTarget(f"unknown target '{target}'", target)


def _check_reachable(world: WorldState, target: str | None) -> None:
    if target is None or target in (USER, PULL, HERE, BELT, TABLE) or target.startswith(TABLE + "@"):
        return
    if target in world.containers:
        return
    if target not in world.objects:
        raise UnreachableTarget(f"target '{target}' does not exist", target)
    if world.is_hidden(target):
        raise UnreachableTarget(f"target '{target}' is inside a closed container", target)


def _set_object(world: WorldState, object_id: str, **changes) -> None:
    world.objects[object_id] = replace(world.objects[object_id], **changes)


def _drop_held(world: WorldState, events: list, kind: str, detail: str) -> None:
    g = world.gripper
    oid = g.holding
    if oid is None:
        return
    _set_object(world, oid, relation=Relation(ON_TABLE), pose=Pose(g.pose.x, g.pose.y, 0.0))
    world.gripper = replace(g, holding=None, slip_pending=False)
    events.append(WorldEvent(world.tick, kind, oid, detail))


def _resolve_slip(world: WorldState, events: list) -> None:
    g = world.gripper
    if not g.slip_pending:
        return
    if g.holding is not None:
        _drop_held(world, events, "Drop", "object slipped from the gripper")
    elif g.handle is not None:
        events.append(WorldEvent(world.tick, "Slip", g.handle, "drawer handle slipped"))
        world.gripper = replace(g, handle=None, slip_pending=False)


def _release(world: WorldState, events: list, fault: WorldFaultSpec | None) -> None:
    g = world.gripper
    oid = g.holding
    target = g.at
    world.gripper = replace(g, holding=None, slip_pending=False)
    if fault is not None and fault.kind == "Displace":
        dx, dy = fault.displacement
        _set_object(world, oid, relation=Relation(ON_TABLE), pose=Pose(g.pose.x + dx, g.pose.y + dy, 0.0))
        events.append(WorldEvent(world.tick, "FaultInjected", oid, "Displace"))
        return

    def spill(detail: str):
        _set_object(world, oid, relation=Relation(ON_TABLE), pose=Pose(g.pose.x, g.pose.y + 0.08, 0.0))
        events.append(WorldEvent(world.tick, "Spill", oid, detail))

    if target == USER:
        _set_object(world, oid, relation=Relation(DELIVERED), pose=USER_POSE)
    elif target == BELT:
        if world.belt is None:
            spill("no belt")
            return
        start = world.belt.span[0]
        _set_object(world, oid, relation=Relation(ON_BELT, offset=start), pose=world.belt.pose_at(start))
    elif target is not None and target.startswith(TABLE + "@"):
        _set_object(world, oid, relation=Relation(ON_TABLE), pose=_target_pose(world, target))
    elif target in world.containers:
        c = world.containers[target]
        if not c.open:
            spill(f"{c.id} is closed")
        elif len(world.occupants(c.id)) >= c.capacity:
            spill(f"{c.id} is full")
        else:
            _set_object(world, oid, relation=Relation(INSIDE, c.id), pose=Pose(c.pose.x, c.pose.y, c.pose.z + 0.02))
    elif target in world.objects:
        base = world.objects[target]
        blocked = (
            world.on_top_of(target) is not None
            or base.relation.type in (INSIDE, HELD, DELIVERED, ON_BELT)
        )
        if blocked:
            spill(f"cannot stack on {target}")
        else:
            p = base.pose
            _set_object(world, oid, relation=Relation(ON_TOP_OF, target), pose=Pose(p.x, p.y, p.z + STACK_HEIGHT, p.yaw))
    else:
        _set_object(world, oid, relation=Relation(ON_TABLE), pose=Pose(g.pose.x, g.pose.y, 0.0))
        events.append(WorldEvent(world.tick, "Drop", oid, "released away from any support"))


def _advance_belt(world: WorldState, events: list) -> None:
    belt = world.belt
    if belt is None or not belt.active:
        return
    for oid in sorted(world.objects):
        o = world.objects[oid]
        if o.relation.type != ON_BELT:
            continue
        offset = (o.relation.offset or 0.0) + belt.speed
        if offset > belt.span[1]:
            end = belt.pose_at(belt.span[1])
            _set_object(world, oid, relation=Relation(ON_TABLE), pose=Pose(end.x, end.y, 0.0), fallen=True)
            events.append(WorldEvent(world.tick, "Fallen", oid, "carried past the end of the belt"))
        else:
            _set_object(world, oid, relation=Relation(ON_BELT, offset=offset), pose=belt.pose_at(offset))


def apply_step(world: WorldState, step: PrimitiveStep, fault: WorldFaultSpec | None = None) -> StepResult:
    """Apply one primitive. `fault` is applied only when it matches this
    primitive (GripSlip on CloseGripper, Displace on OpenGripper,
    DropDuringTransfer on Transfer)."""
    if step.kind not in PRIMITIVE_KINDS:
        raise ReplanError(f"unknown primitive '{step.kind}'")
    if fault is not None and fault.primitive != step.kind:
        fault = None
    w = world.clone()
    events: list = []
    g = w.gripper

    if step.kind == "MoveAbove":
        _check_reachable(w, step.target)
        _resolve_slip(w, events)
        p = _target_pose(w, step.target)
        at = g.at if step.target in (None, HERE) else step.target
        w.gripper = replace(w.gripper, at=at, pose=Pose(p.x, p.y, p.z + ARM_HOVER_Z), lowered=False)
    elif step.kind == "Lower":
        w.gripper = replace(g, lowered=True, pose=Pose(g.pose.x, g.pose.y, max(g.pose.z - ARM_HOVER_Z, 0.0)))
    elif step.kind == "CloseGripper":
        if g.holding is not None or g.handle is not None:
            raise GripperBusy(f"gripper already holds {g.holding or g.handle}")
        target = g.at
        if target in w.objects:
            _check_reachable(w, target)
            obj = w.objects[target]
            blocker = w.on_top_of(target)
            if blocker is not None:
                events.append(WorldEvent(w.tick, "Collision", target, f"{blocker} is on top of {target}"))
            elif obj.relation.type == DELIVERED:
                events.append(WorldEvent(w.tick, "EmptyGrasp", target, "object is with the user"))
            else:
                _set_object(w, target, relation=Relation(HELD), fallen=False)
                w.gripper = replace(g, holding=target, slip_pending=fault is not None)
                if fault is not None:
                    events.append(WorldEvent(w.tick, "FaultInjected", target, fault.kind))
        elif target in w.containers and w.containers[target].kind == "drawer":
            w.gripper = replace(g, handle=target, slip_pending=fault is not None)
            if fault is not None:
                events.append(WorldEvent(w.tick, "FaultInjected", target, fault.kind))
        else:
            events.append(WorldEvent(w.tick, "EmptyGrasp", target, "nothing to grasp"))
    elif step.kind == "Lift":
        _resolve_slip(w, events)
        g = w.gripper
        w.gripper = replace(g, lowered=False, pose=Pose(g.pose.x, g.pose.y, g.pose.z + ARM_HOVER_Z))
    elif step.kind == "Transfer":
        _check_reachable(w, step.target)
        if fault is not None and g.holding is not None:
            events.append(WorldEvent(w.tick, "FaultInjected", g.holding, fault.kind))
            _drop_held(w, events, "Drop", "object dropped during transfer")
        _resolve_slip(w, events)
        g = w.gripper
        if step.target == PULL and g.handle is not None:
            w.containers[g.handle] = replace(w.containers[g.handle], open=True)
            events.append(WorldEvent(w.tick, "DrawerOpened", g.handle))
        p = _target_pose(w, step.target)
        at = g.at if step.target == PULL else step.target
        w.gripper = replace(g, at=at, pose=Pose(p.x, p.y, p.z + ARM_HOVER_Z), lowered=False)
    elif step.kind == "OpenGripper":
        if g.handle is not None:
            w.gripper = replace(g, handle=None, slip_pending=False)
        elif g.holding is not None:
            _release(w, events, fault)

    held = w.gripper.holding
    if held is not None:
        gp = w.gripper.pose
        _set_object(w, held, pose=Pose(gp.x, gp.y, max(gp.z - 0.02, 0.0), w.objects[held].pose.yaw))
    _advance_belt(w, events)
    w.tick += 1
    return StepResult(w, events)


# -- diffs -------------------------------------------------------------------------


def diff(before: WorldState, after: WorldState, strict: bool = True) -> StateDiff:
    """Differences between two states of one scenario. With strict=False the
    object sets may differ (snapshot comparisons across an opened drawer)."""
    if strict and not before.same_vocabulary(after):
        raise VocabularyMismatch("states come from different scenario vocabularies")
    common = sorted(set(before.objects) & set(after.objects))
    moved, changed = [], []
    for oid in common:
        a, b = before.objects[oid], after.objects[oid]
        if not a.relation.same_as(b.relation):
            changed.append((oid, a.relation, b.relation))
        if not a.pose.close_to(b.pose):
            moved.append((oid, a.pose, b.pose))
    containers = []
    for cid in sorted(set(before.containers) & set(after.containers)):
        if before.containers[cid].open != after.containers[cid].open:
            containers.append((cid, before.containers[cid].open, after.containers[cid].open))
    return StateDiff(
        moved=tuple(moved),
        relation_changes=tuple(changed),
        container_changes=tuple(containers),
        appeared=tuple(sorted(set(after.objects) - set(before.objects))),
        vanished=tuple(sorted(set(before.objects) - set(after.objects))),
    )


def diff_snapshots(before: PerceptionSnapshot, after: PerceptionSnapshot) -> StateDiff:
    return diff(world_from_snapshot(before), world_from_snapshot(after), strict=False)


def check_invariants(world: WorldState) -> None:
    """Raise InvariantViolation naming the first offending object."""
    from replanvlm.errors import InvariantViolation

    holders = [o.id for o in world.objects.values() if o.relation.type == HELD]
    if len(holders) > 1:
        raise InvariantViolation(f"more than one object held: {', '.join(sorted(holders))}", holders[0])
    tops: dict = {}
    for oid in sorted(world.objects):
        rel = world.objects[oid].relation
        if rel.type not in RELATION_TYPES:
            raise InvariantViolation(f"{oid}: unknown relation '{rel.type}'", oid)
        if rel.type in (ON_TOP_OF, INSIDE) and rel.target is None:
            raise InvariantViolation(f"{oid}: relation {rel.type} needs a target", oid)
        if rel.type == ON_TOP_OF:
            if rel.target not in world.objects:
                raise InvariantViolation(f"{oid}: OnTopOf unknown object '{rel.target}'", oid)
            if rel.target in tops:
                raise InvariantViolation(f"{oid}: {rel.target} already carries {tops[rel.target]}", oid)
            tops[rel.target] = oid
            if world.objects[rel.target].relation.type == INSIDE:
                raise InvariantViolation(f"{oid}: cannot rest on {rel.target}, which is inside a container", oid)
        if rel.type == INSIDE and rel.target not in world.containers:
            raise InvariantViolation(f"{oid}: Inside unknown container '{rel.target}'", oid)
        if rel.type == ON_BELT:
            if world.belt is None:
                raise InvariantViolation(f"{oid}: OnBelt but the scenario has no belt", oid)
            lo, hi = world.belt.span
            if rel.offset is None or not lo <= rel.offset <= hi:
                raise InvariantViolation(f"{oid}: belt offset {rel.offset} outside span {lo}..{hi}", oid)
    for oid in sorted(world.objects):
        seen = {oid}
        cur = world.objects[oid].relation
        while cur.type == ON_TOP_OF:
            if cur.target in seen:
                raise InvariantViolation(f"{oid}: OnTopOf chain forms a cycle", oid)
            seen.add(cur.target)
            cur = world.objects[cur.target].relation
    for cid in sorted(world.containers):
        c = world.containers[cid]
        n = len(world.occupants(cid))
        if n > c.capacity:
            raise InvariantViolation(f"{cid}: {n} occupants exceed capacity {c.capacity}", cid)
    if world.gripper.holding is not None and world.gripper.holding not in holders:
        raise InvariantViolation(f"gripper holds '{world.gripper.holding}' but it is not marked held", world.gripper.holding)
