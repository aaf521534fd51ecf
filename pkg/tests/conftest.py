from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from skillloop import (
    ChatClient,
    HashedBagProvider,
    ScriptedDeskBackend,
    TaskSpec,
    TrainConfig,
    open_env,
    train,
)


@pytest.fixture
def provider():
    return HashedBagProvider(64)


@pytest.fixture
def desk_client():
    return ChatClient(ScriptedDeskBackend())


def suite_tasks(suite_name: str) -> list[TaskSpec]:
    with open_env(f"builtin:{suite_name}") as env:
        return [TaskSpec(t["task_id"], t["description"]) for t in env.describe()["tasks"]]


def run_training(suite_name: str, mode: str, *, global_seed: int = 0, client: ChatClient | None = None):
    tasks = suite_tasks(suite_name)
    client = client or ChatClient(ScriptedDeskBackend())
    provider = HashedBagProvider(64)
    cfg = TrainConfig(tasks=tuple(tasks), mode=mode, global_seed=global_seed)
    with open_env(f"builtin:{suite_name}") as env:
        result = train(cfg, env, client, provider)
    return result, client, tasks


@pytest.fixture(scope="session")
def vireskill_run():
    return run_training("deterministic-tabletop", "vireskill")


@pytest.fixture(scope="session")
def retry_run():
    return run_training("deterministic-tabletop", "retry")
