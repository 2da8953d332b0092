"""Goal predicates: conjunctions of atomic conditions over a WorldState."""

from dataclasses import dataclass

from replanvlm import selectors
from replanvlm.errors import ScenarioError, UnresolvableGoal, UnresolvableSelector
from replanvlm.world import DELIVERED, INSIDE, ON_BELT, ON_TABLE, ON_TOP_OF, WorldState

ZONES = ("table", "user", "belt")


def in_zone(world: WorldState, object_id: str, zone: str) -> bool:
    o = world.objects[object_id]
    rel = o.relation
    if zone == "table":
        return rel.type == ON_TABLE and not o.fallen
    if zone == "user":
        return rel.type == DELIVERED
    if zone == "belt":
        return rel.type == ON_BELT
    return rel.type == INSIDE and rel.target == zone


def zone_relation(zone: str) -> str:
    return {"table": ON_TABLE, "user": DELIVERED, "belt": ON_BELT}.get(zone, f"{INSIDE}({zone})")


def _resolve(world: WorldState, selector: str) -> str:
    try:
        return selectors.resolve(selector, world.objects.values(), world.gripper.pose)
    except UnresolvableSelector:
        raise UnresolvableGoal(f"goal selector '{selector}' matches no object in the scene")


def _found(world: WorldState, object_id: str) -> str:
    o = world.objects[object_id]
    return o.relation.describe() + (" (fallen)" if o.fallen else "")


@dataclass(frozen=True)
class ObjectIn:
    object: str
    zone: str

    def holds(self, world: WorldState) -> bool:
        return in_zone(world, _resolve(world, self.object), self.zone)

    def objects(self) -> tuple:
        return (self.object,)

    def explain(self, world: WorldState) -> list:
        oid = _resolve(world, self.object)
        return [f"{world.objects[oid].describe()}: expected {zone_relation(self.zone)}, found {_found(world, oid)}"]

    def describe(self) -> str:
        return f"ObjectIn({self.object}, {self.zone})"

    def to_dict(self) -> dict:
        return {"type": "ObjectIn", "object": self.object, "container": self.zone}


@dataclass(frozen=True)
class Delivered:
    object: str

    def holds(self, world: WorldState) -> bool:
        return world.objects[_resolve(world, self.object)].relation.type == DELIVERED

    def objects(self) -> tuple:
        return (self.object,)

    def explain(self, world: WorldState) -> list:
        oid = _resolve(world, self.object)
        return [f"{world.objects[oid].describe()}: expected {DELIVERED}, found {_found(world, oid)}"]

    def describe(self) -> str:
        return f"Delivered({self.object})"

    def to_dict(self) -> dict:
        return {"type": "Delivered", "object": self.object}


@dataclass(frozen=True)
class StackOrder:
    order: tuple  # base first

    def holds(self, world: WorldState) -> bool:
        ids = [_resolve(world, s) for s in self.order]
        if not ids:
            return True
        base = world.objects[ids[0]]
        if base.relation.type != ON_TABLE or base.fallen:
            return False
        for below, above in zip(ids, ids[1:]):
            rel = world.objects[above].relation
            if rel.type != ON_TOP_OF or rel.target != below:
                return False
        return True

    def objects(self) -> tuple:
        return tuple(self.order)

    def explain(self, world: WorldState) -> list:
        ids = [_resolve(world, s) for s in self.order]
        out = []
        if ids and (world.objects[ids[0]].relation.type != ON_TABLE or world.objects[ids[0]].fallen):
            out.append(f"{world.objects[ids[0]].describe()}: expected {ON_TABLE} as the base, found {_found(world, ids[0])}")
        for below, above in zip(ids, ids[1:]):
            rel = world.objects[above].relation
            if rel.type != ON_TOP_OF or rel.target != below:
                out.append(f"{world.objects[above].describe()}: expected {ON_TOP_OF}({below}), found {_found(world, above)}")
        return out

    def describe(self) -> str:
        return f"StackOrder([{', '.join(self.order)}])"

    def to_dict(self) -> dict:
        return {"type": "StackOrder", "order": list(self.order)}


@dataclass(frozen=True)
class BeltOrder:
    order: tuple  # furthest downstream first

    def holds(self, world: WorldState) -> bool:
        ids = [_resolve(world, s) for s in self.order]
        rels = [world.objects[i].relation for i in ids]
        if any(r.type != ON_BELT for r in rels):
            return False
        offsets = [r.offset or 0.0 for r in rels]
        return all(a > b for a, b in zip(offsets, offsets[1:]))

    def objects(self) -> tuple:
        return tuple(self.order)

    def explain(self, world: WorldState) -> list:
        ids = [_resolve(world, s) for s in self.order]
        off_belt = [i for i in ids if world.objects[i].relation.type != ON_BELT]
        if off_belt:
            return [f"{world.objects[i].describe()}: expected {ON_BELT}, found {_found(world, i)}" for i in off_belt]
        ranked = sorted(ids, key=lambda i: -(world.objects[i].relation.offset or 0.0))
        seen = ", ".join(world.objects[i].describe() for i in ranked)
        return [f"belt order is {seen}, expected {', '.join(self.order)}"]

    def describe(self) -> str:
        return f"BeltOrder([{', '.join(self.order)}])"

    def to_dict(self) -> dict:
        return {"type": "BeltOrder", "order": list(self.order)}


@dataclass(frozen=True)
class AttributeAt:
    attribute: str
    zone: str

    def carriers(self, world: WorldState) -> list:
        return sorted(o.id for o in world.objects.values() if self.attribute in o.attributes)

    def holds(self, world: WorldState) -> bool:
        ids = self.carriers(world)
        return bool(ids) and all(in_zone(world, i, self.zone) for i in ids)

    def objects(self) -> tuple:
        return (self.attribute,)

    def explain(self, world: WorldState) -> list:
        ids = self.carriers(world)
        if not ids:
            return [f"no visible object is {self.attribute}"]
        return [
            f"{world.objects[i].describe()}: expected {zone_relation(self.zone)}, found {_found(world, i)}"
            for i in ids
            if not in_zone(world, i, self.zone)
        ]

    def describe(self) -> str:
        return f"AttributeAt({self.attribute}, {self.zone})"

    def to_dict(self) -> dict:
        return {"type": "AttributeAt", "attribute": self.attribute, "zone": self.zone}


@dataclass(frozen=True)
class GoalPredicate:
    conditions: tuple = ()

    def to_dict(self) -> dict:
        return {"conditions": [c.to_dict() for c in self.conditions]}

    def describe(self) -> str:
        return " AND ".join(c.describe() for c in self.conditions) or "TRUE"


def parse_condition(d: dict, where: str = "goal"):
    if not isinstance(d, dict):
        raise ScenarioError("condition must be an object", where)
    kind = d.get("type")

    def need(key):
        if key not in d:
            raise ScenarioError(f"{kind} condition needs '{key}'", f"{where}.{key}")
        return d[key]

    if kind == "ObjectIn":
        return ObjectIn(str(need("object")), str(d.get("container") or need("zone")))
    if kind == "Delivered":
        return Delivered(str(need("object")))
    if kind == "StackOrder":
        return StackOrder(tuple(str(s) for s in need("order")))
    if kind == "BeltOrder":
        return BeltOrder(tuple(str(s) for s in need("order")))
    if kind == "AttributeAt":
        return AttributeAt(str(need("attribute")), str(need("zone")))
    raise ScenarioError(f"unknown condition type '{kind}'", f"{where}.type")


def parse_goal(d: dict | None) -> GoalPredicate:
    conds = (d or {}).get("conditions") or []
    return GoalPredicate(tuple(parse_condition(c, f"goal.conditions[{i}]") for i, c in enumerate(conds)))


def check_selectors(goal: GoalPredicate, world: WorldState) -> None:
    """Every selector must name an object of the scenario (visible or not)."""
    for cond in goal.conditions:
        if isinstance(cond, AttributeAt):
            if cond.zone not in ZONES and cond.zone not in world.containers:
                raise UnresolvableGoal(f"unknown zone '{cond.zone}'")
            continue
        for sel in cond.objects():
            _resolve(world, sel)
        zone = getattr(cond, "zone", None)
        if zone is not None and zone not in ZONES and zone not in world.containers:
            raise UnresolvableGoal(f"unknown zone '{zone}'")


def eval_goal(goal: GoalPredicate, world: WorldState) -> tuple:
    """Return (satisfied, unmet conditions). Pure."""
    unmet = [c for c in goal.conditions if not c.holds(world)]
    return (not unmet, unmet)


def unmet_reasons(goal: GoalPredicate, world: WorldState) -> list:
    lines = []
    for cond in goal.conditions:
        try:
            if not cond.holds(world):
                lines.extend(cond.explain(world))
        except UnresolvableGoal:
            lines.append(f"{' '.join(cond.objects())}: not visible")
    return lines
