import pytest

from replanvlm.bench import load_task
from replanvlm.engine import EngineConfig
from replanvlm.gateway import BackendConfig, Gateway
from replanvlm.oracle import VlmFaultProfile
from replanvlm.scenario import load_scenario, scenario_dir


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    for name in (
        "REPLANVLM_EXPLAIN", "REPLANVLM_SCENARIO_DIR", "REPLANVLM_API_KEY", "REPLANVLM_HTTP_TIMEOUT",
        "REPLANVLM_MODEL_PROVIDER", "REPLANVLM_MODEL", "REPLANVLM_BASE_URL",
    ):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def scene():
    """scene(n) -> (world, goal, metadata) for a shipped task."""

    def load(task_id):
        return load_scenario(scenario_dir() / f"task{task_id}.json")

    return load


@pytest.fixture
def task():
    return load_task


def oracle_engine(variant: str = "full", seed: int = 0, **faults) -> EngineConfig:
    backend = BackendConfig(kind="oracle", faults=VlmFaultProfile(**faults))
    return EngineConfig(seed=seed, backend=backend).with_variant(variant)


def scripted_engine(table: dict, variant: str = "full", **kw) -> EngineConfig:
    return EngineConfig(backend=BackendConfig(kind="scripted", replay=table), **kw).with_variant(variant)


@pytest.fixture
def engine():
    return oracle_engine


@pytest.fixture
def gateway():
    def make(config: EngineConfig) -> Gateway:
        return Gateway(config.backend)

    return make
