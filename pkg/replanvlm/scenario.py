"""Scenario files: JSON with objects[], containers[], belt{}, goal{}, metadata{}."""

import base64
import json
import math
import mimetypes
import os
from pathlib import Path

from replanvlm.errors import InvariantViolation, ScenarioError, UnresolvableGoal
from replanvlm.goals import check_selectors, parse_goal
from replanvlm.world import (
    HELD,
    ON_BELT,
    RELATION_TYPES,
    ConveyorBelt,
    ContainerState,
    Gripper,
    Pose,
    Relation,
    SceneObject,
    WorldState,
    check_invariants,
)

CONTAINER_KINDS = ("drawer", "box", "plate")


def scenario_dir() -> Path:
    return Path(os.getenv("REPLANVLM_SCENARIO_DIR") or Path(__file__).resolve().parent.parent / "scenarios")


def _is_number(v) -> bool:
    return not isinstance(v, bool) and isinstance(v, (int, float)) and math.isfinite(v)


def _num(d: dict, key: str, where: str, default=None) -> float:
    v = d.get(key, default)
    if not _is_number(v):
        raise ScenarioError(f"'{key}' must be a number", f"{where}.{key}")
    return float(v)


def _pose(d, where: str) -> Pose:
    if d is None:
        return Pose()
    if not isinstance(d, dict):
        raise ScenarioError("pose must be an object", where)
    return Pose(_num(d, "x", where, 0.0), _num(d, "y", where, 0.0), _num(d, "z", where, 0.0), _num(d, "yaw", where, 0.0))


def _str(d: dict, key: str, where: str, default: str | None = None) -> str:
    v = d.get(key, default)
    if not isinstance(v, str) or (default is None and not v):
        raise ScenarioError(f"'{key}' must be a non-empty string", f"{where}.{key}")
    return v


def _relation(d, where: str) -> Relation:
    if d is None:
        return Relation("OnTable")
    if not isinstance(d, dict):
        raise ScenarioError("relation must be an object", where)
    kind = d.get("type")
    if kind not in RELATION_TYPES:
        raise ScenarioError(f"unknown relation type '{kind}'", f"{where}.type")
    target = d.get("target")
    offset = d.get("offset")
    if kind in ("OnTopOf", "Inside") and not isinstance(target, str):
        raise ScenarioError(f"{kind} needs a 'target'", f"{where}.target")
    if kind == ON_BELT:
        offset = _num(d, "offset", where)
    return Relation(kind, target if kind in ("OnTopOf", "Inside") else None, offset)


def _object(d, where: str) -> SceneObject:
    if not isinstance(d, dict):
        raise ScenarioError("object entry must be an object", where)
    attrs = d.get("attributes") or []
    if not isinstance(attrs, list) or not all(isinstance(a, str) for a in attrs):
        raise ScenarioError("attributes must be a list of strings", f"{where}.attributes")
    return SceneObject(
        id=_str(d, "id", where),
        kind=_str(d, "kind", where),
        color=_str(d, "color", where, ""),
        attributes=frozenset(a.lower() for a in attrs),
        pose=_pose(d.get("pose"), f"{where}.pose"),
        relation=_relation(d.get("relation"), f"{where}.relation"),
        fallen=bool(d.get("fallen", False)),
    )


def _container(d, where: str) -> ContainerState:
    if not isinstance(d, dict):
        raise ScenarioError("container entry must be an object", where)
    kind = _str(d, "kind", where)
    if kind not in CONTAINER_KINDS:
        raise ScenarioError(f"container kind must be one of {', '.join(CONTAINER_KINDS)}", f"{where}.kind")
    capacity = d.get("capacity", 1)
    if not isinstance(capacity, int) or capacity < 0:
        raise ScenarioError("capacity must be a non-negative integer", f"{where}.capacity")
    is_open = bool(d.get("open", True)) if kind == "drawer" else True
    return ContainerState(_str(d, "id", where), kind, is_open, capacity, _pose(d.get("pose"), f"{where}.pose"))


def _belt(d, where: str = "belt") -> ConveyorBelt | None:
    if d is None:
        return None
    if not isinstance(d, dict):
        raise ScenarioError("belt must be an object", where)
    axis = d.get("axis", [1.0, 0.0])
    span = d.get("span", [0.0, 1.0])
    if not (isinstance(axis, list) and len(axis) == 2 and all(_is_number(v) for v in axis)):
        raise ScenarioError("axis must be [x, y]", f"{where}.axis")
    norm = math.hypot(*axis)
    if norm == 0:
        raise ScenarioError("axis must not be zero", f"{where}.axis")
    if not (isinstance(span, list) and len(span) == 2 and all(_is_number(v) for v in span) and span[0] < span[1]):
        raise ScenarioError("span must be [start, end] with start < end", f"{where}.span")
    speed = _num(d, "speed", where, 0.005)
    if speed < 0:
        raise ScenarioError("speed must be non-negative", f"{where}.speed")
    origin = _pose(d.get("origin"), f"{where}.origin") if "origin" in d else Pose(-0.5, 0.45, 0.05)
    return ConveyorBelt(
        axis=(axis[0] / norm, axis[1] / norm),
        speed=speed,
        span=(float(span[0]), float(span[1])),
        active=bool(d.get("active", True)),
        origin=origin,
    )


def build_world(doc: dict, seed: int = 0) -> WorldState:
    objects, containers = {}, {}
    for i, od in enumerate(doc.get("objects") or []):
        o = _object(od, f"objects[{i}]")
        if o.id in objects:
            raise InvariantViolation(f"duplicate object id '{o.id}'", o.id)
        objects[o.id] = o
    for i, cd in enumerate(doc.get("containers") or []):
        c = _container(cd, f"containers[{i}]")
        if c.id in containers or c.id in objects:
            raise InvariantViolation(f"duplicate id '{c.id}'", c.id)
        containers[c.id] = c
    belt = _belt(doc.get("belt"))
    # belt objects take their pose from the belt
    if belt is not None:
        for oid, o in list(objects.items()):
            if o.relation.type == ON_BELT:
                p = belt.pose_at(o.relation.offset or 0.0)
                objects[oid] = SceneObject(o.id, o.kind, o.color, o.attributes, Pose(p.x, p.y, p.z, o.pose.yaw), o.relation, o.fallen)
    held = [o.id for o in objects.values() if o.relation.type == HELD]
    world = WorldState(
        tick=0,
        objects=objects,
        containers=containers,
        belt=belt,
        gripper=Gripper(holding=held[0] if held else None),
        seed=seed,
    )
    check_invariants(world)
    return world


def load_images(metadata: dict) -> tuple:
    """(media type, base64) for each path in metadata.images, relative to the
    scenario file."""
    base = Path(metadata.get("path", ".")).parent
    out = []
    for i, rel in enumerate(metadata.get("images") or []):
        p = base / rel
        media_type = mimetypes.guess_type(p.name)[0] or "image/png"
        try:
            out.append((media_type, base64.b64encode(p.read_bytes()).decode("ascii")))
        except OSError as e:
            raise ScenarioError(f"cannot read image: {e}", f"metadata.images[{i}]")
    return tuple(out)


def load_scenario(path) -> tuple:
    """Return (world, goal, metadata) for a scenario file."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioError(f"cannot read scenario: {e}", str(p))
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"invalid JSON: {e.msg}", f"line {e.lineno}, column {e.colno}")
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object", "line 1")
    metadata = dict(doc.get("metadata") or {})
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ScenarioError("'seed' must be an integer", "seed")
    world = build_world(doc, seed=seed)
    goal = parse_goal(doc.get("goal"))
    try:
        check_selectors(goal, world)
    except UnresolvableGoal as e:
        raise ScenarioError(str(e), "goal")
    metadata.setdefault("task_id", None)
    metadata.setdefault("instruction", "")
    metadata.setdefault("ms_expected", None)
    metadata["path"] = str(p)
    return world, goal, metadata
