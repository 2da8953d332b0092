"""Prompt assembly for the three bots.

A Decision bundle has five parts (role-playing, error messages, code
repository, chain-of-thought directive, examples) plus the scene and the
instruction. Inner and Extra bundles carry role-playing, the scene(s) and the
Decision Bot's output.
"""

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

from replanvlm.util import hash_obj
from replanvlm.vocab import skill_repository

DECISION = "Decision"
INNER = "Inner"
EXTRA = "Extra"
BOTS = (DECISION, INNER, EXTRA)

EXEMPLAR_PATH = Path(__file__).resolve().parent.parent / "data" / "exemplars.json"

ROLE_DECISION = (
    "You are the Decision Bot of a robot arm working at a table. You read the user's "
    "request and the scene, write a numbered task plan and then code that calls only "
    "the skills in the code repository."
)
ROLE_INNER = (
    "You are the Inner Bot. Before anything runs you review the Decision Bot's plan "
    "and code: is the code well-formed, does it do every plan step in order, and does "
    "it achieve the same result as code you would write yourself for this scene?"
)
ROLE_EXTRA = (
    "You are the Extra Bot. You compare the scene before and after the robot ran the "
    "code and judge whether the user's request has been fulfilled. If not, say what "
    "went wrong so the Decision Bot can replan."
)
COT = (
    "Think step by step: identify the objects the request refers to, check whether "
    "anything blocks or hides them, then order the skill calls so every object is "
    "free before it is grasped."
)

FORMAT_DECISION = "Answer with\nPLAN:\n1. <step>\n2. <step>\nCODE:\n```\n<one skill call per line>\n```"
FORMAT_VERDICT = "Answer with\nVERDICT: yes|no\nREASON: <one or two sentences>"
FORMAT_INNER = FORMAT_VERDICT + "\nCODE:\n```\n<your own code for the same request>\n```"


@dataclass(frozen=True)
class PromptBundle:
    bot: str
    role_playing: str
    instruction: str
    scene: tuple  # scene texts; before and after for the Extra Bot
    error_messages: tuple = ()
    code_repository: tuple = ()
    cot: str = ""
    examples: tuple = ()  # (input, plan lines, code)
    decision_info: str = ""
    images: tuple = ()  # (media type, base64 data)

    def to_dict(self) -> dict:
        return {
            "bot": self.bot,
            "role_playing": self.role_playing,
            "instruction": self.instruction,
            "scene": list(self.scene),
            "error_messages": list(self.error_messages),
            "code_repository": list(self.code_repository),
            "cot": self.cot,
            "examples": [{"input": i, "plan": list(p), "code": c} for i, p, c in self.examples],
            "decision_info": self.decision_info,
            "images": [hash_obj(data) for _, data in self.images],
        }

    def digest(self) -> str:
        return hash_obj(self.to_dict())

    def render(self) -> str:
        parts = [f"# Role\n{self.role_playing}"]
        if self.bot == DECISION:
            errors = "\n".join(f"- {m}" for m in self.error_messages) or "(none)"
            parts.append(f"# Error messages\n{errors}")
            parts.append("# Code repository\n" + "\n".join(self.code_repository))
            parts.append(f"# Reasoning\n{self.cot}")
            shots = []
            for inp, plan, code in self.examples:
                numbered = "\n".join(f"{i}. {line}" for i, line in enumerate(plan, 1))
                shots.append(f"Request: {inp}\nPLAN:\n{numbered}\nCODE:\n```\n{code}\n```")
            parts.append("# Examples\n" + "\n\n".join(shots))
        if self.bot == EXTRA and len(self.scene) == 2:
            parts.append(f"# Scene before execution\n{self.scene[0]}")
            parts.append(f"# Scene after execution\n{self.scene[1]}")
        else:
            parts.extend(f"# Scene\n{text}" for text in self.scene)
        if self.decision_info:
            parts.append(f"# Decision Bot output\n{self.decision_info}")
        parts.append(f"# Request\n{self.instruction}")
        fmt = {DECISION: FORMAT_DECISION, INNER: FORMAT_INNER}.get(self.bot, FORMAT_VERDICT)
        parts.append(f"# Response format\n{fmt}")
        return "\n\n".join(parts)


@lru_cache(maxsize=4)
def _load_exemplars(path: str) -> tuple:
    p = Path(path)
    if not p.exists():
        return ()
    items = json.loads(p.read_text(encoding="utf-8"))
    return tuple((e["input"], tuple(e["plan"]), e["code"]) for e in items)


def load_exemplars(path=None) -> tuple:
    return _load_exemplars(str(path or EXEMPLAR_PATH))


def decision_info(plan, code: str) -> str:
    numbered = "\n".join(f"{i}. {line}" for i, line in enumerate(plan, 1))
    return f"PLAN:\n{numbered}\nCODE:\n```\n{code}\n```"


def build_decision_prompt(instruction: str, snapshot, feedback=(), exemplars=None) -> PromptBundle:
    """Bundle for the Decision Bot. `feedback` is the episode's Feedback list,
    oldest first; only the reasons go into the prompt."""
    return PromptBundle(
        bot=DECISION,
        role_playing=ROLE_DECISION,
        instruction=instruction,
        scene=(snapshot.describe(),),
        error_messages=tuple(f"[{f.source} bot, round {f.round}] {f.reason}" for f in feedback),
        code_repository=tuple(skill_repository()),
        cot=COT,
        examples=load_exemplars() if exemplars is None else tuple(exemplars),
    )


def build_inner_prompt(instruction: str, snapshot, plan, code: str, images=()) -> PromptBundle:
    return PromptBundle(
        bot=INNER,
        role_playing=ROLE_INNER,
        instruction=instruction,
        scene=(snapshot.describe(),),
        code_repository=tuple(skill_repository()),
        decision_info=decision_info(plan, code),
        images=tuple(images),
    )


def build_extra_prompt(instruction: str, before, after, plan, code: str, images=()) -> PromptBundle:
    return PromptBundle(
        bot=EXTRA,
        role_playing=ROLE_EXTRA,
        instruction=instruction,
        scene=(before.describe(), after.describe()),
        decision_info=decision_info(plan, code),
        images=tuple(images),
    )
