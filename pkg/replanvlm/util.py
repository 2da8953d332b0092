import hashlib
import json
import os
import random
import sys


def canonical_json(o) -> str:
    return json.dumps(o, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def hash_obj(o, length: int = 16) -> str:
    return "h:" + hashlib.sha256(canonical_json(o).encode()).hexdigest()[:length]


def keyed_rng(*parts) -> random.Random:
    # str seeds are hashed with sha512 by random.Random, stable across runs
    return random.Random("/".join(str(p) for p in parts))


def env_flag(name: str, default: str = "0") -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes")


def explain(payload: dict) -> None:
    """Print one JSON line to stderr when REPLANVLM_EXPLAIN is set."""
    if not env_flag("REPLANVLM_EXPLAIN"):
        return
    try:
        print(json.dumps(payload, sort_keys=True, default=str), file=sys.stderr)
    except Exception:
        pass
