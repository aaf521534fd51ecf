"""Run configuration: JSON file plus CLI overrides, validated field by field."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .clients import (
    Backend,
    ChatClient,
    FixtureBackend,
    RecordReplayCache,
    RemoteBackend,
    TemplateSet,
)
from .errors import ConfigError
from .planning import TaskSpec
from .retrieval import DEFAULT_DIM, EmbeddingProvider, RetrievalConfig, make_provider
from .scripted import ScriptedDeskBackend
from .trainer import MODES


@dataclass
class RunConfig:
    mode: str = "vireskill"
    env: str = "builtin:deterministic"
    backend: str = "scripted:desk"
    tasks: list[dict] | None = None      # [{"id":..., "description":...}]; None = ask the env
    rounds: int = 2
    iters_per_round: int = 5
    retrieval: dict = field(default_factory=dict)   # k, threshold, exclude_self
    embedding: dict = field(default_factory=dict)   # provider, dim
    global_seed: int = 0
    trials: int = 5
    jobs: int = 1
    timeout: float = 120.0
    out: str = "runs"

    def resolved(self) -> dict:
        return {
            "mode": self.mode,
            "env": self.env,
            "backend": self.backend,
            "tasks": self.tasks,
            "rounds": self.rounds,
            "iters_per_round": self.iters_per_round,
            "retrieval": dict(self.retrieval),
            "embedding": dict(self.embedding),
            "global_seed": self.global_seed,
            "trials": self.trials,
            "jobs": self.jobs,
            "timeout": self.timeout,
        }

    def config_hash(self) -> str:
        canonical = json.dumps(self.resolved(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


_INT_FIELDS = ("rounds", "iters_per_round", "global_seed", "trials", "jobs")


def load_run_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        source = Path(path)
        if not source.exists():
            raise ConfigError(f"config file {source} does not exist", field="config")
        try:
            raw = json.loads(source.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc.msg}", field="config")
        if not isinstance(raw, dict):
            raise ConfigError("config top level must be an object", field="config")

    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value

    cfg = RunConfig()
    known = set(cfg.resolved()) | {"out"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}", field=key)

    for name in _INT_FIELDS:
        if name in raw:
            if not isinstance(raw[name], int) or isinstance(raw[name], bool):
                raise ConfigError("must be an integer", field=name)
            setattr(cfg, name, raw[name])
    for name in ("mode", "env", "backend", "out"):
        if name in raw:
            if not isinstance(raw[name], str):
                raise ConfigError("must be a string", field=name)
            setattr(cfg, name, raw[name])
    if "timeout" in raw:
        if not isinstance(raw["timeout"], (int, float)) or isinstance(raw["timeout"], bool):
            raise ConfigError("must be a number", field="timeout")
        cfg.timeout = float(raw["timeout"])
    for name in ("retrieval", "embedding"):
        if name in raw:
            if not isinstance(raw[name], dict):
                raise ConfigError("must be an object", field=name)
            setattr(cfg, name, raw[name])
    if "tasks" in raw and raw["tasks"] is not None:
        if not isinstance(raw["tasks"], list):
            raise ConfigError("must be an array of {id, description}", field="tasks")
        cfg.tasks = raw["tasks"]

    if cfg.mode not in MODES:
        raise ConfigError(f"must be one of {MODES}", field="mode")
    if cfg.rounds < 1:
        raise ConfigError("must be >= 1", field="rounds")
    if cfg.iters_per_round < 1:
        raise ConfigError("must be >= 1", field="iters_per_round")
    if cfg.trials < 1:
        raise ConfigError("must be >= 1", field="trials")
    if cfg.jobs < 1:
        raise ConfigError("must be >= 1", field="jobs")
    return cfg


def retrieval_config(cfg: RunConfig) -> RetrievalConfig:
    try:
        return RetrievalConfig(**cfg.retrieval)
    except TypeError as exc:
        raise ConfigError(str(exc), field="retrieval")


def embedding_provider(cfg: RunConfig) -> EmbeddingProvider:
    name = cfg.embedding.get("provider", "hashed-bag")
    dim = cfg.embedding.get("dim", DEFAULT_DIM)
    if not isinstance(dim, int):
        raise ConfigError("must be an integer", field="embedding.dim")
    return make_provider(name, dim)


def make_backend(spec: str) -> Backend:
    """Parse a backend selector.

    scripted:desk            bundled scripted suite backend
    fixture:<path>           fingerprint -> response table from a file
    remote                   HTTP endpoint from MODEL_* environment variables
    record:<path>[+<inner>]  record/replay cache around inner (default remote)
    replay:<path>            serve a recording; never calls out
    """
    if spec == "scripted:desk":
        return ScriptedDeskBackend()
    if spec == "remote":
        return RemoteBackend()
    if spec.startswith("fixture:"):
        return FixtureBackend.from_file(spec[len("fixture:"):])
    if spec.startswith("replay:"):
        return RecordReplayCache(spec[len("replay:"):], None, mode="replay")
    if spec.startswith("record:"):
        rest = spec[len("record:"):]
        if "+" in rest:
            path, inner_spec = rest.split("+", 1)
            inner = make_backend(inner_spec)
        else:
            path, inner = rest, RemoteBackend()
        return RecordReplayCache(path, inner, mode="record")
    raise ConfigError(f"unknown backend spec {spec!r}", field="backend")


def make_client(cfg: RunConfig) -> ChatClient:
    return ChatClient(make_backend(cfg.backend), TemplateSet.bundled())


def resolve_tasks(cfg: RunConfig, describe_reply: dict | None) -> list[TaskSpec]:
    if cfg.tasks is not None:
        try:
            return [TaskSpec(id=t["id"], description=t["description"]) for t in cfg.tasks]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad task entry: {exc}", field="tasks")
    if describe_reply is None:
        raise ConfigError("no tasks configured and the environment was not asked", field="tasks")
    tasks = describe_reply.get("tasks")
    if not isinstance(tasks, list) or not tasks:
        raise ConfigError("environment describe reply lists no tasks", field="tasks")
    return [TaskSpec(id=t["task_id"], description=t["description"]) for t in tasks]
