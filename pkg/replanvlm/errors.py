"""Exception hierarchy.

Everything derives from RuntimeError so code that only knows about plain
runtime failures keeps working.
"""


class ReplanError(RuntimeError):
    pass


class ConfigError(ReplanError):
    pass


# world


class ScenarioError(ReplanError):
    """Malformed scenario file; `where` is a line number or a field path."""

    def __init__(self, message: str, where: str | int | None = None):
        self.where = where
        super().__init__(f"{message} (at {where})" if where is not None else message)


class InvariantViolation(ReplanError):
    def __init__(self, message: str, object_id: str | None = None):
        self.object_id = object_id
        super().__init__(message)


class VocabularyMismatch(ReplanError):
    pass


class UnresolvableGoal(ReplanError):
    pass


class UnreachableTarget(ReplanError):
    """Raised by a primitive step. `world` and `events` carry partial progress
    when the error escapes an interpreter run."""

    def __init__(self, message: str, target: str | None = None):
        self.target = target
        self.world = None
        self.events: list = []
        super().__init__(message)


class GripperBusy(ReplanError):
    def __init__(self, message: str):
        self.world = None
        self.events: list = []
        super().__init__(message)


# skill language


class DslError(ReplanError):
    pass


class DslSyntaxError(DslError):
    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} at position {position}")


class UnknownSkill(DslError):
    def __init__(self, name: str, position: int = 0):
        self.name = name
        self.position = position
        super().__init__(f"unknown skill '{name}' at position {position}")


class ArityError(DslError):
    pass


class UnresolvableSelector(DslError):
    def __init__(self, selector: str, message: str | None = None):
        self.selector = selector
        super().__init__(message or f"no visible object matches '{selector}'")


class AmbiguousSelector(DslError):
    def __init__(self, selector: str, candidates: list[str]):
        self.selector = selector
        self.candidates = candidates
        super().__init__(f"'{selector}' matches several objects: {', '.join(candidates)}")


# bot responses


class ResponseParseError(ReplanError):
    pass


class MissingSection(ResponseParseError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"response is missing the {name} section")


class GarbledVerdict(ResponseParseError):
    pass


class NoPlanFound(ReplanError):
    pass


# backends


class BackendError(ReplanError):
    pass


class ReplayMiss(BackendError):
    def __init__(self, digest: str):
        self.digest = digest
        super().__init__(f"no recorded response for bundle {digest}")


class RemoteTimeout(BackendError):
    pass


class RemoteHTTP(BackendError):
    def __init__(self, status: int, body: str = ""):
        self.status = status
        super().__init__(f"HTTP {status}: {body[:300]}")


class CredentialMissing(BackendError):
    def __init__(self, env_var: str):
        self.env_var = env_var
        super().__init__(f"credential env var {env_var} is not set")


class SuiteAborted(ReplanError):
    """A suite stopped on a setup error; `completed` holds the episodes run so far."""

    def __init__(self, message: str, completed: list):
        self.completed = completed
        super().__init__(f"{message} ({len(completed)} episode(s) completed)")
