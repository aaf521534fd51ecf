"""Task-indexed skill memory with per-iteration snapshots and persistence.

A Skill is the unit of storage and replay: an ordered high-level plan paired
one-to-one with low-level program units. Memory entries only ever move
null -> Skill or Skill -> Skill (commits happen on successful rollouts), and
the snapshot store freezes one copy of each task's entry after every training
iteration so evaluation can replay any point of the learning curve.

File format (version 1): a single UTF-8 JSON document

    {
      "version": 1,
      "entries":   {"<task_id>": <skill or null>, ...},
      "snapshots": {"<iteration>": {"<task_id>": <skill or null>, ...}, ...}
    }

with skills serializing plan/programs as arrays of strings and all keys
sorted lexicographically, so saved memories diff cleanly and round-trip
bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Iterator, Mapping

from .errors import MemoryFormatError, ValidationError

MEMORY_FORMAT_VERSION = 1

SKILL_ORIGINS = ("planned", "replanned", "reused")


@dataclass(frozen=True)
class SkillStamp:
    """Provenance of a skill: training round and global iteration index."""

    round: int
    iteration: int


@dataclass(frozen=True)
class Skill:
    task_id: str
    plan: tuple[str, ...]
    programs: tuple[str, ...]
    created_at: SkillStamp
    origin: str

    def __post_init__(self) -> None:
        if not self.task_id:
            raise ValidationError("skill task_id must be non-empty")
        if not self.plan:
            raise ValidationError(f"skill for {self.task_id!r} has an empty plan")
        if len(self.plan) != len(self.programs):
            raise ValidationError(
                f"skill for {self.task_id!r}: plan has {len(self.plan)} steps "
                f"but {len(self.programs)} program units"
            )
        for i, step in enumerate(self.plan):
            if not step or "\n" in step:
                raise ValidationError(
                    f"skill for {self.task_id!r}: plan step {i} is empty or multi-line"
                )
        for i, prog in enumerate(self.programs):
            if not prog:
                raise ValidationError(
                    f"skill for {self.task_id!r}: program unit {i} is empty"
                )
        if self.origin not in SKILL_ORIGINS:
            raise ValidationError(f"unknown skill origin {self.origin!r}")

    def same_content(self, other: "Skill") -> bool:
        """True when plan and programs match; provenance metadata is ignored."""
        return self.plan == other.plan and self.programs == other.programs

    def content_hash(self) -> str:
        payload = json.dumps(
            {"plan": list(self.plan), "programs": list(self.programs)},
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


class SkillMemory:
    """Map task_id -> optional Skill. Single writer; readers see frozen skills."""

    def __init__(self) -> None:
        self._entries: dict[str, Skill | None] = {}

    def ensure(self, task_id: str) -> None:
        """Register a task with a null entry (cold start) if not yet present."""
        if not task_id:
            raise ValidationError("task_id must be non-empty")
        self._entries.setdefault(task_id, None)

    def get(self, task_id: str) -> Skill | None:
        return self._entries.get(task_id)

    def commit(self, task_id: str, skill: Skill) -> None:
        """Replace the entry for task_id. Caller asserts the skill's latest rollout succeeded.

        Re-committing identical content is a no-op (the stored skill, including
        its provenance stamp, is kept) so snapshots taken across repeated
        successes of the same code stay equal.
        """
        if skill.task_id != task_id:
            raise ValidationError(
                f"commit target {task_id!r} does not match skill.task_id {skill.task_id!r}"
            )
        current = self._entries.get(task_id)
        if current is not None and current.same_content(skill):
            return
        self._entries[task_id] = skill

    def entries(self) -> Mapping[str, Skill | None]:
        return MappingProxyType(self._entries)

    def task_ids(self) -> list[str]:
        return sorted(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._entries))


class SnapshotStore:
    """Frozen per-iteration copies of memory entries, keyed (iteration, task_id).

    Cell (k, t) is written exactly once: immediately after task t's k-th
    training iteration. Skills are immutable, so storing the instance gives
    deep-copy semantics without the copy.
    """

    def __init__(self) -> None:
        self._cells: dict[int, dict[str, Skill | None]] = {}

    def capture(self, iteration: int, task_id: str, memory: SkillMemory) -> None:
        if iteration < 1:
            raise ValidationError(f"snapshot iteration must be >= 1, got {iteration}")
        row = self._cells.setdefault(iteration, {})
        if task_id in row:
            raise ValidationError(
                f"snapshot ({iteration}, {task_id!r}) already finalized"
            )
        row[task_id] = memory.get(task_id)

    def get(self, iteration: int, task_id: str) -> Skill | None:
        return self._cells.get(iteration, {}).get(task_id)

    def has(self, iteration: int, task_id: str) -> bool:
        return task_id in self._cells.get(iteration, {})

    def view(self, iteration: int) -> Mapping[str, Skill | None]:
        return MappingProxyType(self._cells.get(iteration, {}))

    def iterations(self) -> list[int]:
        return sorted(self._cells)

    def is_complete(self, task_ids: list[str], iterations: range) -> bool:
        return all(self.has(k, t) for k in iterations for t in task_ids)


# --- serialization ----------------------------------------------------------


def _skill_to_obj(skill: Skill | None) -> dict | None:
    if skill is None:
        return None
    return {
        "task_id": skill.task_id,
        "plan": list(skill.plan),
        "programs": list(skill.programs),
        "created_at": {"round": skill.created_at.round, "iteration": skill.created_at.iteration},
        "origin": skill.origin,
    }


def _skill_from_obj(obj: object, *, field: str, path: str) -> Skill | None:
    if obj is None:
        return None
    if not isinstance(obj, dict):
        raise MemoryFormatError("skill must be an object or null", field=field, path=path)

    def need(key: str, kind: type) -> object:
        if key not in obj:
            raise MemoryFormatError(f"missing {key!r}", field=field, path=path)
        value = obj[key]
        if not isinstance(value, kind):
            raise MemoryFormatError(
                f"{key!r} must be {kind.__name__}", field=f"{field}.{key}", path=path
            )
        return value

    plan = need("plan", list)
    programs = need("programs", list)
    if not all(isinstance(s, str) for s in plan) or not all(isinstance(s, str) for s in programs):
        raise MemoryFormatError("plan/programs must be arrays of strings", field=field, path=path)
    created = need("created_at", dict)
    try:
        stamp = SkillStamp(round=int(created["round"]), iteration=int(created["iteration"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise MemoryFormatError(f"bad created_at: {exc}", field=f"{field}.created_at", path=path)
    try:
        return Skill(
            task_id=str(need("task_id", str)),
            plan=tuple(plan),
            programs=tuple(programs),
            created_at=stamp,
            origin=str(need("origin", str)),
        )
    except ValidationError as exc:
        raise MemoryFormatError(str(exc), field=field, path=path)


def memory_document(memory: SkillMemory, store: SnapshotStore) -> str:
    """Canonical serialized form: sorted keys, 2-space indent, trailing newline."""
    obj = {
        "version": MEMORY_FORMAT_VERSION,
        "entries": {t: _skill_to_obj(s) for t, s in memory.entries().items()},
        "snapshots": {
            str(k): {t: _skill_to_obj(s) for t, s in store.view(k).items()}
            for k in store.iterations()
        },
    }
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def save_memory(path: str | os.PathLike, memory: SkillMemory, store: SnapshotStore) -> None:
    """Atomic write: temp file in the target directory, then rename."""
    target = Path(path)
    tmp = target.with_name(target.name + ".tmp")
    tmp.write_text(memory_document(memory, store), encoding="utf-8")
    tmp.replace(target)


def load_memory(path: str | os.PathLike) -> tuple[SkillMemory, SnapshotStore]:
    """Parse a memory file. Raises MemoryFormatError; never returns partial state."""
    target = Path(path)
    try:
        text = target.read_text(encoding="utf-8")
    except OSError as exc:
        raise MemoryFormatError(f"cannot read file: {exc}", path=str(target))
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MemoryFormatError(
            f"invalid JSON: {exc.msg}", path=str(target), line=exc.lineno
        )
    if not isinstance(obj, dict):
        raise MemoryFormatError("top level must be an object", path=str(target))
    if obj.get("version") != MEMORY_FORMAT_VERSION:
        raise MemoryFormatError(
            f"unsupported version {obj.get('version')!r}", path=str(target), field="version"
        )
    entries = obj.get("entries")
    snapshots = obj.get("snapshots")
    if not isinstance(entries, dict):
        raise MemoryFormatError("entries must be an object", path=str(target), field="entries")
    if not isinstance(snapshots, dict):
        raise MemoryFormatError("snapshots must be an object", path=str(target), field="snapshots")

    memory = SkillMemory()
    for task_id in sorted(entries):
        memory.ensure(task_id)
        skill = _skill_from_obj(entries[task_id], field=f"entries.{task_id}", path=str(target))
        if skill is not None:
            memory.commit(task_id, skill)

    store = SnapshotStore()
    staging = SkillMemory()
    try:
        iteration_keys = sorted(snapshots, key=int)
    except ValueError:
        raise MemoryFormatError(
            "snapshot keys must be integers", path=str(target), field="snapshots"
        )
    for key in iteration_keys:
        row = snapshots[key]
        if not isinstance(row, dict):
            raise MemoryFormatError(
                "snapshot row must be an object", path=str(target), field=f"snapshots.{key}"
            )
        for task_id in sorted(row):
            skill = _skill_from_obj(
                row[task_id], field=f"snapshots.{key}.{task_id}", path=str(target)
            )
            staging.ensure(task_id)
            if skill is not None:
                # Route through a staging memory so stored cells reuse the
                # committed instance exactly like the trainer produced them.
                staging._entries[task_id] = skill
            else:
                staging._entries[task_id] = None
            store.capture(int(key), task_id, staging)
    return memory, store


def equal_state(a: tuple[SkillMemory, SnapshotStore], b: tuple[SkillMemory, SnapshotStore]) -> bool:
    """Structural equality of (memory, snapshots), metadata included."""
    return memory_document(a[0], a[1]) == memory_document(b[0], b[1])
