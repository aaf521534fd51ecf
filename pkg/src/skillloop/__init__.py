"""Lifelong skill-learning loop with replayable skill memory."""

from .clients import ChatClient, ChatRequest, FixtureBackend, RecordReplayCache, TemplateSet
from .envs import DeterministicEnv, LocalEnvHandle, StochasticEnv, load_suite, open_env
from .evaluator import EvalReport, evaluate
from .memory import Skill, SkillMemory, SkillStamp, SnapshotStore, load_memory, save_memory
from .planning import TaskSpec
from .retrieval import HashedBagProvider, RetrievalConfig, retrieve
from .scripted import ScriptedDeskBackend
from .trainer import TrainConfig, TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "ChatClient",
    "ChatRequest",
    "DeterministicEnv",
    "EvalReport",
    "FixtureBackend",
    "HashedBagProvider",
    "LocalEnvHandle",
    "RecordReplayCache",
    "RetrievalConfig",
    "ScriptedDeskBackend",
    "Skill",
    "SkillMemory",
    "SkillStamp",
    "SnapshotStore",
    "StochasticEnv",
    "TaskSpec",
    "TemplateSet",
    "TrainConfig",
    "TrainResult",
    "evaluate",
    "load_memory",
    "load_suite",
    "open_env",
    "retrieve",
    "save_memory",
    "train",
]
