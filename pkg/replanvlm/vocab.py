from typing import Dict, List, Tuple

# Skill repository shown to the Decision Bot: (name, signature, arity, meaning)
_SKILLS: List[Tuple[str, str, int, str]] = [
    ("pick", "pick(object)", 1, "move above the object, lower, close the gripper and lift it"),
    ("place", "place(target)", 1, "carry the held object to a free spot on/in the target (container, object, 'table' or 'belt') and release it"),
    ("give", "give()", 0, "hand the held object to the user at the fixed delivery pose"),
    ("open_drawer", "open_drawer(drawer)", 1, "grip the drawer handle, pull the drawer open and release it"),
    ("wait", "wait(steps)", 1, "hold position for the given number of steps while the belt moves"),
]

# Words that mean the same kind of object
KIND_SYNONYMS: Dict[str, str] = {
    "block": "cube",
    "blocks": "cube",
    "cubes": "cube",
    "brick": "cube",
    "toys": "toy",
    "figure": "toy",
    "apples": "apple",
    "bananas": "banana",
    "cups": "cup",
    "mug": "cup",
}


# Verbs a plan line may use, and the skill each one names
PLAN_VERBS: Dict[str, str] = {
    "pick": "pick",
    "grab": "pick",
    "grasp": "pick",
    "take": "pick",
    "place": "place",
    "put": "place",
    "drop": "place",
    "stack": "place",
    "set": "place",
    "give": "give",
    "hand": "give",
    "deliver": "give",
    "bring": "give",
    "open": "open_drawer",
    "pull": "open_drawer",
    "wait": "wait",
}

ARITY: Dict[str, int] = {name: arity for name, _, arity, _ in _SKILLS}
SIGNATURES: Dict[str, str] = {name: sig for name, sig, _, _ in _SKILLS}
MEANINGS: Dict[str, str] = {name: meaning for name, _, _, meaning in _SKILLS}


def normalize_word(word: str) -> str:
    w = word.strip().lower().strip(".,;:!?'\"")
    return KIND_SYNONYMS.get(w, w)


def skill_repository() -> List[str]:
    """Signature and docstring lines for the code repository prompt part."""
    return [f"{SIGNATURES[name]}  # {MEANINGS[name]}" for name, _, _, _ in _SKILLS]
