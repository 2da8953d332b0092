"""One interface to the three bots' backends: scripted replay, the rule-based
oracle, and a remote VLM."""

import json
import os
import re
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

from replanvlm import providers
from replanvlm.errors import BackendError, ConfigError, CredentialMissing, GarbledVerdict, MissingSection, ReplayMiss, ResponseParseError
from replanvlm.oracle import VlmFaultProfile, oracle_complete
from replanvlm.prompts import DECISION, EXTRA, INNER
from replanvlm.util import explain

KINDS = ("scripted", "oracle", "remote")


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "oracle"
    faults: VlmFaultProfile = field(default_factory=VlmFaultProfile)
    # scripted
    replay_path: str | None = None
    replay: dict | None = field(default=None, compare=False)
    # remote
    provider: str | None = None
    endpoint: str | None = None
    model: str | None = None
    credential_env: str = "REPLANVLM_API_KEY"
    timeout: float = 60.0
    retries: int = 3
    backoff: float = 0.5
    temperature: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"backend kind must be one of {', '.join(KINDS)}, got '{self.kind}'")
        if self.kind == "scripted" and not (self.replay_path or self.replay):
            raise ConfigError("scripted backend needs 'replay_path' or 'replay'")
        if self.kind != "oracle" and not self.faults.is_zero():
            raise ConfigError("vlm faults apply to the oracle backend only")
        if self.timeout <= 0:
            raise ConfigError(f"backend timeout must be positive, got {self.timeout}")
        if self.retries < 0 or self.backoff < 0:
            raise ConfigError("backend retries and backoff must be non-negative")

    @classmethod
    def from_dict(cls, d: dict | None, faults: dict | None = None) -> "BackendConfig":
        d = dict(d or {})
        known = {"kind", "replay_path", "replay", "provider", "endpoint", "model", "credential_env", "timeout", "retries", "backoff", "temperature", "seed", "faults"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown backend field(s): {', '.join(unknown)}")
        profile = VlmFaultProfile.from_dict(d.pop("faults", None) or faults)
        timeout = d.pop("timeout", None) or os.getenv("REPLANVLM_HTTP_TIMEOUT") or 60.0
        try:
            timeout = float(timeout)
        except ValueError:
            raise ConfigError(f"backend timeout must be a number, got {timeout!r}")
        return cls(faults=profile, timeout=timeout, **d)

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "faults": self.faults.to_dict(),
            "seed": self.seed,
        }
        if self.kind == "scripted":
            d["replay_path"] = self.replay_path
        if self.kind == "remote":
            provider, model = providers.get_provider(self.provider, self.model)
            d.update({"provider": provider, "model": model, "endpoint": self.endpoint, "timeout": self.timeout, "retries": self.retries})
        return d


@dataclass(frozen=True)
class BotResponse:
    bot: str
    plan: tuple = ()
    code: str = ""
    verdict: str | None = None
    reason: str = ""
    code_given: bool = False

    def to_dict(self) -> dict:
        if self.bot == DECISION:
            return {"bot": self.bot, "plan": list(self.plan), "code": self.code}
        d = {"bot": self.bot, "verdict": self.verdict, "reason": self.reason}
        if self.code_given:
            d["code"] = self.code
        return d


@dataclass
class TranscriptEntry:
    bot: str
    digest: str
    raw: str | None  # None when the backend itself failed
    response: BotResponse | None
    latency_ms: int
    backend: str
    error: str | None = None

    def to_dict(self, include_latency: bool = False) -> dict:
        d = {
            "bot": self.bot,
            "digest": self.digest,
            "raw": self.raw,
            "response": self.response.to_dict() if self.response else None,
            "backend": self.backend,
            "error": self.error,
        }
        if include_latency:
            d["ms"] = self.latency_ms
        return d


@dataclass
class Transcript:
    entries: list = field(default_factory=list)

    def record(self, entry: TranscriptEntry) -> None:
        self.entries.append(entry)

    def to_list(self, include_latency: bool = False) -> list:
        return [e.to_dict(include_latency) for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


# -- response parsing ------------------------------------------------------------------

_HEADER = re.compile(r"^[ \t]*(PLAN|CODE|VERDICT|REASON)[ \t]*:", re.M | re.I)
_FENCE = re.compile(r"```[A-Za-z0-9_+-]*[ \t]*\n?(.*?)```", re.S)
_NUMBERING = re.compile(r"^\s*(?:\d+[.)]|[-*])\s*")


def _sections(raw: str) -> dict:
    found = list(_HEADER.finditer(raw or ""))
    out: dict = {}
    for i, m in enumerate(found):
        end = found[i + 1].start() if i + 1 < len(found) else len(raw)
        out.setdefault(m.group(1).upper(), []).append(raw[m.end() : end])
    return out


def _code_body(body: str) -> str:
    m = _FENCE.search(body)
    if m:
        return m.group(1).strip()
    return body.strip().strip("`").strip()


def parse_bot_response(raw: str, bot: str) -> BotResponse:
    sections = _sections(raw or "")
    if bot == DECISION:
        for name in ("PLAN", "CODE"):
            if name not in sections:
                raise MissingSection(name)
        plan = []
        for line in sections["PLAN"][0].splitlines():
            line = _NUMBERING.sub("", line).strip()
            if line:
                plan.append(line)
        return BotResponse(bot, plan=tuple(plan), code=_code_body(sections["CODE"][0]), code_given=True)
    if bot not in (INNER, EXTRA):
        raise ResponseParseError(f"unknown bot '{bot}'")
    if "VERDICT" not in sections:
        raise MissingSection("VERDICT")
    verdicts = set()
    for body in sections["VERDICT"]:
        words = body.split()
        verdicts.add(words[0].strip(".,;:!*'\"").lower() if words else "")
    if len(verdicts) > 1:
        raise GarbledVerdict(f"conflicting verdicts: {', '.join(sorted(verdicts))}")
    verdict = verdicts.pop()
    if verdict not in ("yes", "no"):
        raise GarbledVerdict(f"verdict must be yes or no, got '{verdict}'")
    if "REASON" not in sections:
        raise MissingSection("REASON")
    code = _code_body(sections["CODE"][0]) if "CODE" in sections else ""
    return BotResponse(bot, verdict=verdict, reason=sections["REASON"][0].strip(), code=code, code_given="CODE" in sections)


# -- backends ----------------------------------------------------------------------------


@lru_cache(maxsize=16)
def _load_replay(path: str) -> dict:
    p = Path(path)
    try:
        items = json.loads(p.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read replay table {p}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"replay table {p} is not valid JSON: {e.msg} (line {e.lineno})")
    return {str(r["digest"]): str(r["response"]) for r in items}


def replay_table(config: BackendConfig) -> dict:
    table = dict(_load_replay(config.replay_path)) if config.replay_path else {}
    table.update(config.replay or {})
    return table


def complete(bundle, config: BackendConfig, ctx: dict | None = None) -> str:
    """Raw completion text for a bundle.

    Scripted tables are keyed by bundle digest; a key equal to a bot name
    ("Decision", "Inner", "Extra") answers any bundle of that bot that has no
    digest entry.
    """
    if config.kind == "scripted":
        table = replay_table(config)
        digest = bundle.digest()
        if digest in table:
            return table[digest]
        if bundle.bot in table:
            return table[bundle.bot]
        raise ReplayMiss(digest)
    if config.kind == "oracle":
        if ctx is None or "goal" not in ctx:
            raise BackendError("the oracle backend needs the scene context")
        return oracle_complete(bundle, config.faults, ctx)
    return providers.remote_complete(bundle, config)


def ask(bundle, config: BackendConfig, ctx: dict | None, transcript: Transcript) -> BotResponse:
    """complete + parse, recorded in the transcript. Parse errors are
    recorded, then raised."""
    digest = bundle.digest()
    t0 = time.time()
    try:
        raw = complete(bundle, config, ctx)
    except BackendError as e:
        transcript.record(TranscriptEntry(bundle.bot, digest, None, None, int((time.time() - t0) * 1000), config.kind, str(e)))
        raise
    ms = int((time.time() - t0) * 1000)
    try:
        response = parse_bot_response(raw, bundle.bot)
    except ResponseParseError as e:
        transcript.record(TranscriptEntry(bundle.bot, digest, raw, None, ms, config.kind, str(e)))
        explain({"bot": bundle.bot, "digest": digest, "parse_error": str(e), "ms": ms})
        raise
    transcript.record(TranscriptEntry(bundle.bot, digest, raw, response, ms, config.kind))
    explain({"bot": bundle.bot, "digest": digest, "backend": config.kind, "response": response.to_dict(), "ms": ms})
    return response


class Gateway:
    """A backend shared by many episodes; holds no per-episode state."""

    def __init__(self, config: BackendConfig):
        self.config = config

    def ask(self, bundle, ctx: dict | None, transcript: Transcript) -> BotResponse:
        return ask(bundle, self.config, ctx, transcript)

    def check(self) -> None:
        """Fail fast on setup problems: a missing credential or an unreadable
        replay table."""
        if self.config.kind == "remote" and not os.getenv(self.config.credential_env):
            raise CredentialMissing(self.config.credential_env)
        if self.config.kind == "scripted":
            replay_table(self.config)
