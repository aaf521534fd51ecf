"""Lifelong training loop: reuse-or-plan, rollout, replan on failure, commit on success.

Each round starts a task from its stored skill when one exists (exploitation)
and from fresh planning otherwise (exploration). Within a round of n
iterations, a failure triggers replanning unless it happens on the last
iteration, so at most n-1 replanning attempts occur per round. Success
commits the current code to memory and leaves it unchanged for the remaining
iterations; the snapshot store captures the task's entry after every
iteration.

Modes:
  vireskill         -- full reflection pipeline plus retrieval-augmented replanning
  retry             -- blind regeneration from scratch on failure; no reflection,
                       no retrieval anywhere
  no_skill_transfer -- reflection intact, but replanning receives an empty
                       example list (the skill-transfer ablation)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .clients import ChatClient
from .envs import EnvHandle
from .errors import (
    CompositionError,
    ModelResponseError,
    PlanningError,
    TransportError,
    ValidationError,
)
from .memory import Skill, SkillMemory, SkillStamp, SnapshotStore
from .planning import TaskSpec, assemble, compose_plan
from .planning import plan as plan_task
from .protocol import RolloutRecord
from .reflection import VideoRef, reflect_and_replan
from .retrieval import EmbeddingProvider, RetrievalCandidate, RetrievalConfig, retrieve
from .seeds import derive_seed

MODES = ("vireskill", "retry", "no_skill_transfer")

# Template id -> accounting category; replanning calls group together no
# matter which template produced them.
CALL_CATEGORIES = {
    "plan": "plan",
    "compose": "compose",
    "summarize": "summarize",
    "localize": "localize",
    "diagnose": "diagnose",
    "logical_reflect": "logical_reflect",
    "retry_plan": "replan",
    "replan_execution": "replan",
    "replan_logical": "replan",
}


@dataclass
class TrainConfig:
    tasks: tuple[TaskSpec, ...]
    rounds: int = 2
    iters_per_round: int = 5
    mode: str = "vireskill"
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    global_seed: int = 0
    transport_retries: int = 2

    def __post_init__(self) -> None:
        if not self.tasks:
            raise ValidationError("training needs at least one task")
        ids = [t.id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ValidationError("task ids must be unique")
        if self.rounds < 1 or self.iters_per_round < 1:
            raise ValidationError("rounds and iters_per_round must be >= 1")
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}; expected one of {MODES}")

    @property
    def total_iterations(self) -> int:
        return self.rounds * self.iters_per_round


@dataclass
class TrainLogEntry:
    task_id: str
    round: int
    iteration: int                      # global index, 1..rounds*iters_per_round
    action: str                         # reused | planned | replanned | kept
    success: int | None                 # null when the iteration was aborted
    halted_at_step: int | None
    env_note: str
    skill_hash: str
    committed: bool
    model_calls: int
    model_calls_by_template: dict[str, int]
    diagnosis_kind: str | None = None
    diagnosis_chunk: int | None = None
    diagnosis_reason: str | None = None
    replan_template: str | None = None
    error: str | None = None

    def to_obj(self) -> dict:
        return {
            "task_id": self.task_id,
            "round": self.round,
            "iteration": self.iteration,
            "action": self.action,
            "success": self.success,
            "halted_at_step": self.halted_at_step,
            "env_note": self.env_note,
            "skill_hash": self.skill_hash,
            "committed": self.committed,
            "model_calls": self.model_calls,
            "model_calls_by_template": dict(sorted(self.model_calls_by_template.items())),
            "diagnosis_kind": self.diagnosis_kind,
            "diagnosis_chunk": self.diagnosis_chunk,
            "diagnosis_reason": self.diagnosis_reason,
            "replan_template": self.replan_template,
            "error": self.error,
        }


class TrainLog:
    """Append-only, one entry per (task, iteration)."""

    def __init__(self) -> None:
        self.entries: list[TrainLogEntry] = []

    def append(self, entry: TrainLogEntry) -> None:
        if any(
            e.task_id == entry.task_id and e.iteration == entry.iteration for e in self.entries
        ):
            raise ValidationError(
                f"duplicate log entry for ({entry.task_id!r}, iteration {entry.iteration})"
            )
        self.entries.append(entry)

    def for_task(self, task_id: str) -> list[TrainLogEntry]:
        return [e for e in self.entries if e.task_id == task_id]

    def to_ndjson(self) -> str:
        return "".join(
            json.dumps(e.to_obj(), sort_keys=True, ensure_ascii=False) + "\n"
            for e in self.entries
        )

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_ndjson(), encoding="utf-8")


@dataclass
class TrainResult:
    memory: SkillMemory
    store: SnapshotStore
    log: TrainLog
    config: TrainConfig


def train_seed(task_id: str, round_index: int, iteration: int, global_seed: int) -> int:
    return derive_seed("train", task_id, round_index, iteration, global_seed)


def build_corpus(memory: SkillMemory, tasks: Sequence[TaskSpec]) -> list[RetrievalCandidate]:
    corpus = []
    for task in tasks:
        skill = memory.get(task.id)
        if skill is not None:
            corpus.append(RetrievalCandidate(task.id, task.description, skill))
    return corpus


def _rollout_with_retries(
    env: EnvHandle, task_id: str, skill: Skill, seed: int, retries: int
) -> RolloutRecord:
    last: TransportError | None = None
    for _ in range(retries + 1):
        try:
            return env.rollout(task_id, skill, seed)
        except TransportError as exc:
            last = exc
    raise last if last is not None else TransportError("rollout failed")


def train(
    cfg: TrainConfig,
    env: EnvHandle,
    client: ChatClient,
    provider: EmbeddingProvider,
) -> TrainResult:
    memory = SkillMemory()
    for task in cfg.tasks:
        memory.ensure(task.id)
    store = SnapshotStore()
    log = TrainLog()
    program_caches: dict[str, dict[str, str]] = {t.id: {} for t in cfg.tasks}

    for round_index in range(1, cfg.rounds + 1):
        for task in cfg.tasks:
            _train_task_round(
                cfg, env, client, provider, memory, store, log,
                task, round_index, program_caches[task.id],
            )
    return TrainResult(memory=memory, store=store, log=log, config=cfg)


def _train_task_round(
    cfg: TrainConfig,
    env: EnvHandle,
    client: ChatClient,
    provider: EmbeddingProvider,
    memory: SkillMemory,
    store: SnapshotStore,
    log: TrainLog,
    task: TaskSpec,
    round_index: int,
    program_cache: dict[str, str],
) -> None:
    first_global = (round_index - 1) * cfg.iters_per_round + 1
    calls_before = client.calls_by_template()

    stored = memory.get(task.id)
    init_error: str | None = None
    if stored is not None:
        code: Skill | None = stored
        next_action = "reused"
    else:
        next_action = "planned"
        try:
            examples = ()
            if cfg.mode != "retry":
                examples = retrieve(
                    task.id, task.description, (), build_corpus(memory, cfg.tasks),
                    cfg.retrieval, provider,
                )
            instructions = plan_task(task, client, examples)
            units = compose_plan(instructions, client, program_cache=program_cache)
            code = assemble(
                task, instructions, units,
                origin="planned",
                created_at=SkillStamp(round=round_index, iteration=first_global),
            )
        except (PlanningError, CompositionError, ModelResponseError, ValidationError) as exc:
            code = None
            init_error = f"initial planning failed: {exc}"

    aborted: str | None = None
    for k in range(1, cfg.iters_per_round + 1):
        iteration = first_global + k - 1
        entry = TrainLogEntry(
            task_id=task.id,
            round=round_index,
            iteration=iteration,
            action=next_action,
            success=None,
            halted_at_step=None,
            env_note="",
            skill_hash=code.content_hash() if code is not None else "",
            committed=False,
            model_calls=0,
            model_calls_by_template={},
        )
        if init_error and k == 1:
            entry.error = init_error
        next_action = "kept"

        if aborted is not None or code is None:
            entry.error = entry.error or aborted or "no executable code"
            _finish_iteration(entry, client, calls_before, log, store, task.id, iteration, memory)
            calls_before = client.calls_by_template()
            continue

        try:
            record = _rollout_with_retries(
                env, task.id, code, train_seed(task.id, round_index, k, cfg.global_seed),
                cfg.transport_retries,
            )
        except TransportError as exc:
            aborted = f"aborted after transport failure: {exc}"
            entry.error = aborted
            _finish_iteration(entry, client, calls_before, log, store, task.id, iteration, memory)
            calls_before = client.calls_by_template()
            continue

        entry.success = record.success
        entry.halted_at_step = record.halted_at_step
        entry.env_note = record.env_note

        if record.success == 1:
            memory.commit(task.id, code)
            entry.committed = True
        elif k < cfg.iters_per_round:
            # Budget: no replanning on the round's final iteration.
            code, next_action = _replan_step(
                cfg, client, provider, memory, task, code, record, entry,
                round_index, iteration, program_cache,
            )

        _finish_iteration(entry, client, calls_before, log, store, task.id, iteration, memory)
        calls_before = client.calls_by_template()


def _replan_step(
    cfg: TrainConfig,
    client: ChatClient,
    provider: EmbeddingProvider,
    memory: SkillMemory,
    task: TaskSpec,
    code: Skill,
    record: RolloutRecord,
    entry: TrainLogEntry,
    round_index: int,
    iteration: int,
    program_cache: dict[str, str],
) -> tuple[Skill, str]:
    stamp = SkillStamp(round=round_index, iteration=iteration)
    try:
        if cfg.mode == "retry":
            instructions = plan_task(task, client, (), template_id="retry_plan")
            units = compose_plan(instructions, client, program_cache=program_cache)
            revised = assemble(task, instructions, units, origin="replanned", created_at=stamp)
            entry.replan_template = "retry_plan"
            return revised, "replanned"

        if cfg.mode == "no_skill_transfer":
            examples: list = []
        else:
            examples = retrieve(
                task.id, task.description, code.plan, build_corpus(memory, cfg.tasks),
                cfg.retrieval, provider,
            )
        video = VideoRef(frames=record.frames, step_boundaries=record.step_boundaries)
        revised, diagnosis = reflect_and_replan(
            task, code, video, record.scene, record.env_note, examples, client,
            program_cache=program_cache, created_at=stamp,
        )
        entry.diagnosis_kind = diagnosis.kind
        entry.diagnosis_chunk = diagnosis.failing_chunk
        entry.diagnosis_reason = diagnosis.reason
        entry.replan_template = (
            "replan_execution" if diagnosis.kind == "execution_failure" else "replan_logical"
        )
        return revised, "replanned"
    except (PlanningError, CompositionError, ModelResponseError, ValidationError) as exc:
        # The iteration is consumed; the previous code stays in place.
        entry.error = f"replanning failed: {exc}"
        return code, "kept"


def _finish_iteration(
    entry: TrainLogEntry,
    client: ChatClient,
    calls_before: dict[str, int],
    log: TrainLog,
    store: SnapshotStore,
    task_id: str,
    iteration: int,
    memory: SkillMemory,
) -> None:
    calls_after = client.calls_by_template()
    by_template = {
        t: calls_after.get(t, 0) - calls_before.get(t, 0)
        for t in calls_after
        if calls_after.get(t, 0) != calls_before.get(t, 0)
    }
    entry.model_calls_by_template = by_template
    entry.model_calls = sum(by_template.values())
    log.append(entry)
    store.capture(iteration, task_id, memory)


def model_call_accounting(log: TrainLog) -> dict[tuple[str, int], dict[str, int]]:
    """Per (task, iteration) call counters grouped into pipeline categories."""
    out: dict[tuple[str, int], dict[str, int]] = {}
    for entry in log.entries:
        grouped: dict[str, int] = {}
        for template_id, count in entry.model_calls_by_template.items():
            category = CALL_CATEGORIES.get(template_id, template_id)
            grouped[category] = grouped.get(category, 0) + count
        out[(entry.task_id, entry.iteration)] = grouped
    return out


def train_curve_rows(cfg: TrainConfig, log: TrainLog) -> list[dict]:
    """Per-iteration training success bits and their mean across tasks."""
    rows = []
    by_key = {(e.task_id, e.iteration): e for e in log.entries}
    for iteration in range(1, cfg.total_iterations + 1):
        row: dict = {"iteration": iteration}
        bits = []
        for task in cfg.tasks:
            entry = by_key.get((task.id, iteration))
            bit = entry.success if entry is not None else None
            row[task.id] = bit
            if bit is not None:
                bits.append(bit)
        row["mean"] = sum(bits) / len(bits) if bits else 0.0
        rows.append(row)
    return rows
