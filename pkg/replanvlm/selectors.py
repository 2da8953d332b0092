"""Object selectors: "red cube", "evil toy", "apple" or an exact id."""

from replanvlm.errors import AmbiguousSelector, UnresolvableSelector
from replanvlm.vocab import normalize_word

_STOP_WORDS = {"the", "a", "an", "of", "with", "that", "is", "which", "attribute", "attributes", "object", "item", "thing", "one"}


def selector_words(selector: str) -> tuple:
    words = [normalize_word(w) for w in str(selector).replace("_", " ").split()]
    return tuple(w for w in words if w and w not in _STOP_WORDS)


def object_words(obj) -> set:
    words = {normalize_word(obj.kind), normalize_word(obj.color), obj.id.lower()}
    words.update(normalize_word(a) for a in obj.attributes)
    words.discard("")
    return words


def matches(obj, selector: str) -> bool:
    if str(selector).strip().lower() == obj.id.lower():
        return True
    words = selector_words(selector)
    return bool(words) and set(words) <= object_words(obj)


def candidates(selector: str, objects) -> list:
    exact = [o for o in objects if o.id.lower() == str(selector).strip().lower()]
    if exact:
        return exact
    return [o for o in objects if matches(o, selector)]


def resolve(selector: str, objects, arm_pose=None, strict: bool = False) -> str:
    """Return the id of the object the selector names.

    Ties go to the object nearest the gripper, then to the smallest id;
    with strict=True a tie raises AmbiguousSelector instead.
    """
    found = candidates(selector, list(objects))
    if not found:
        raise UnresolvableSelector(str(selector))
    if len(found) == 1:
        return found[0].id
    if strict:
        raise AmbiguousSelector(str(selector), sorted(o.id for o in found))
    if arm_pose is None:
        return min(o.id for o in found)
    return min(found, key=lambda o: (round(o.pose.planar_distance(arm_pose), 9), o.id)).id


def canonical(selector: str) -> str:
    return " ".join(selector_words(selector))
