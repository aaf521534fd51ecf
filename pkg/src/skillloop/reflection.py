"""Hierarchical video-grounded failure reflection.

On a failed rollout the pipeline runs: chunk the executed plan and its video
at "open gripper" boundaries, summarize the chunks (one batched model call),
ask the vision model for the first failing chunk, then either diagnose that
chunk against its video window (execution failure) or reflect on the whole
plan (logical error: every step ran, the logic was wrong), and finally
produce a revised skill with a template chosen by the failure kind.

Per failed iteration this makes exactly one summarize, one localize, one
diagnose XOR one logical_reflect, and one replan call; program units for
revised directives already seen in this task reuse the cached program text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from .clients import ChatClient, ChatRequest
from .errors import ModelResponseError, ValidationError
from .memory import Skill, SkillStamp
from .planning import (
    SubtaskInstruction,
    TaskSpec,
    assemble,
    compose_plan,
    parse_directives,
    render_examples,
)
from .protocol import SceneDescription
from .retrieval import ScoredExample

OPEN_GRIPPER_TOKEN = "open gripper"

DOWNSAMPLE_TARGET = 30


@dataclass(frozen=True)
class VideoRef:
    """Ordered frame references plus per-step frame ranges for the executed prefix."""

    frames: tuple[str, ...]
    step_boundaries: tuple[tuple[int, int, int], ...]  # (step_index, first, last)

    def __post_init__(self) -> None:
        prev_step = -1
        prev_last = -1
        for step, first, last in self.step_boundaries:
            if step != prev_step + 1:
                raise ValidationError(
                    f"step boundaries must cover a prefix in order, got step {step} after {prev_step}"
                )
            if first > last:
                raise ValidationError(f"step {step}: frame_start {first} > frame_end {last}")
            if first <= prev_last:
                raise ValidationError(f"step {step}: frame ranges overlap or regress")
            if last >= len(self.frames):
                raise ValidationError(f"step {step}: frame_end {last} outside video")
            prev_step, prev_last = step, last

    def executed_steps(self) -> int:
        return len(self.step_boundaries)


@dataclass(frozen=True)
class Chunk:
    chunk_index: int
    step_range: tuple[int, int]          # inclusive, indices into the plan
    frame_range: tuple[int, int] | None  # None when nothing in this chunk ran
    steps: tuple[str, ...]
    trailing_steps: tuple[str, ...] = ()  # planned but never executed (final chunk only)


@dataclass(frozen=True)
class ChunkSummary:
    chunk_index: int
    text: str


@dataclass(frozen=True)
class FailureDiagnosis:
    kind: str  # "execution_failure" | "logical_error"
    failing_chunk: int | None
    reason: str

    def __post_init__(self) -> None:
        if self.kind not in ("execution_failure", "logical_error"):
            raise ValidationError(f"unknown diagnosis kind {self.kind!r}")
        if (self.kind == "execution_failure") != (self.failing_chunk is not None):
            raise ValidationError("failing_chunk is present iff kind is execution_failure")
        if not self.reason:
            raise ValidationError("diagnosis reason must be non-empty")


def is_open_gripper(step_text: str) -> bool:
    return OPEN_GRIPPER_TOKEN in step_text.lower()


def downsample(video: VideoRef, target: int = DOWNSAMPLE_TARGET) -> VideoRef:
    """Uniformly downsample to min(target, n) frames.

    Kept indices are round-half-up of i*(n-1)/(target-1), so the first and
    last frames always survive and indices stay strictly increasing. Step
    boundaries are remapped to the nearest kept index (ties toward the earlier
    frame); after remapping, adjacent ranges may share a frame.
    """
    if target < 2:
        raise ValidationError(f"downsample target must be >= 2, got {target}")
    n = len(video.frames)
    if n == 0:
        raise ValidationError("cannot downsample an empty video")
    if n <= target:
        return video

    kept = [((2 * i * (n - 1)) + (target - 1)) // (2 * (target - 1)) for i in range(target)]

    def nearest_position(original: int) -> int:
        best_pos = 0
        best_dist = abs(kept[0] - original)
        for pos, idx in enumerate(kept):
            dist = abs(idx - original)
            if dist < best_dist:
                best_pos, best_dist = pos, dist
        return best_pos

    boundaries = tuple(
        (step, nearest_position(first), nearest_position(last))
        for step, first, last in video.step_boundaries
    )
    frames = tuple(video.frames[i] for i in kept)
    return VideoRef(frames=frames, step_boundaries=_relax_prefix(boundaries))


def _relax_prefix(boundaries: tuple[tuple[int, int, int], ...]) -> tuple[tuple[int, int, int], ...]:
    # After nearest-index remapping adjacent steps can land on the same kept
    # frame; VideoRef forbids overlap, so nudge starts forward minimally.
    out: list[tuple[int, int, int]] = []
    prev_last = -1
    for step, first, last in boundaries:
        first = max(first, prev_last + 1)
        last = max(last, first)
        out.append((step, first, last))
        prev_last = last
    return tuple(out)


def chunk_plan(skill: Skill, video: VideoRef) -> list[Chunk]:
    """Partition the executed plan prefix, splitting after each open-gripper step.

    Steps that never executed (no frame boundary; the run halted early) attach
    to the final chunk as trailing_steps so the localizer can still implicate
    them.
    """
    executed = video.executed_steps()
    if executed > len(skill.plan):
        raise ValidationError(
            f"video reports {executed} executed steps but the plan has {len(skill.plan)}"
        )
    boundary_by_step = {step: (first, last) for step, first, last in video.step_boundaries}

    groups: list[list[int]] = []
    current: list[int] = []
    for step in range(executed):
        current.append(step)
        if is_open_gripper(skill.plan[step]):
            groups.append(current)
            current = []
    if current:
        groups.append(current)

    trailing = tuple(skill.plan[executed:])
    chunks: list[Chunk] = []
    if not groups:
        # Nothing executed at all: a single pending chunk holding the whole plan.
        return [
            Chunk(
                chunk_index=0,
                step_range=(0, len(skill.plan) - 1),
                frame_range=None,
                steps=(),
                trailing_steps=trailing,
            )
        ]
    for index, group in enumerate(groups):
        first_step, last_step = group[0], group[-1]
        frame_range = (boundary_by_step[first_step][0], boundary_by_step[last_step][1])
        is_last = index == len(groups) - 1
        chunks.append(
            Chunk(
                chunk_index=index,
                step_range=(first_step, last_step if not (is_last and trailing) else len(skill.plan) - 1),
                frame_range=frame_range,
                steps=tuple(skill.plan[s] for s in group),
                trailing_steps=trailing if is_last else (),
            )
        )
    return chunks


def slice_video(video: VideoRef, frame_range: tuple[int, int]) -> VideoRef:
    """Window of the video covering [first, last], boundaries rebased to it."""
    first, last = frame_range
    if not (0 <= first <= last < len(video.frames)):
        raise ValidationError(f"frame range {frame_range} outside video of {len(video.frames)}")
    inside = [
        (step, max(f, first) - first, min(l, last) - first)
        for step, f, l in video.step_boundaries
        if not (l < first or f > last)
    ]
    rebased = tuple(
        (i, f, l) for i, (_, f, l) in enumerate(inside)
    )
    return VideoRef(frames=video.frames[first : last + 1], step_boundaries=rebased)


def render_chunks(chunks: Sequence[Chunk]) -> str:
    lines = []
    for chunk in chunks:
        first, last = chunk.step_range
        steps = " | ".join(chunk.steps) if chunk.steps else "(nothing executed)"
        if chunk.trailing_steps:
            steps += " | [not executed] " + " | ".join(chunk.trailing_steps)
        lines.append(f"chunk {chunk.chunk_index} steps {first}-{last}: {steps}")
    return "\n".join(lines)


def render_scene(scene: SceneDescription) -> str:
    if not scene.objects:
        return "(no objects reported)"
    return "\n".join(
        f"{obj.name}: position=({obj.position[0]:g}, {obj.position[1]:g}, {obj.position[2]:g}) "
        f"scale=({obj.scale[0]:g}, {obj.scale[1]:g}, {obj.scale[2]:g})"
        for obj in scene.objects
    )


_SUMMARY_LINE_RE = re.compile(r"^chunk\s+(\d+)\s+\(steps\s+(\d+)-(\d+)\):\s*(.+)$")
_LOCALIZE_FAIL_RE = re.compile(r"failure in chunk\s+(\d+)")
_LOCALIZE_OK = "all actions executed successfully"


def summarize(chunks: Sequence[Chunk], client: ChatClient) -> list[ChunkSummary]:
    """One batched model call; the response carries one summary line per chunk."""
    if not chunks:
        raise ValidationError("cannot summarize zero chunks")
    response = client.complete(
        ChatRequest.build("llm", "summarize", {"chunks": render_chunks(chunks)})
    )
    summaries: list[ChunkSummary] = []
    for line in response.text.splitlines():
        match = _SUMMARY_LINE_RE.match(line.strip())
        if match:
            summaries.append(ChunkSummary(chunk_index=int(match.group(1)), text=line.strip()))
    if [s.chunk_index for s in summaries] != list(range(len(chunks))):
        raise ModelResponseError(
            f"summary response does not cover chunks 0..{len(chunks) - 1} in order",
            raw_response=response.text,
        )
    return summaries


def joined_summaries(summaries: Sequence[ChunkSummary]) -> str:
    return "\n".join(s.text for s in summaries)


def localize_failure(
    summaries: Sequence[ChunkSummary],
    video: VideoRef,
    client: ChatClient,
    *,
    env_note: str = "",
) -> int | None:
    """First failing chunk index, or None meaning every action looked successful."""
    response = client.complete(
        ChatRequest.build(
            "vlm",
            "localize",
            {"summaries": joined_summaries(summaries), "env_note": env_note},
            frames=video.frames,
        )
    )
    text = response.text.strip().lower()
    if _LOCALIZE_OK in text:
        return None
    match = _LOCALIZE_FAIL_RE.search(text)
    if match:
        index = int(match.group(1))
        if 0 <= index < len(summaries):
            return index
    raise ModelResponseError(
        f"localize response outside {{null, 0..{len(summaries) - 1}}}",
        raw_response=response.text,
    )


def diagnose(
    chunk: Chunk,
    chunk_video: VideoRef,
    programs: Sequence[str],
    client: ChatClient,
    *,
    env_note: str = "",
) -> str:
    response = client.complete(
        ChatRequest.build(
            "vlm",
            "diagnose",
            {
                "chunk_steps": " | ".join(chunk.steps),
                "programs": "\n".join(programs),
                "env_note": env_note,
            },
            frames=chunk_video.frames,
        )
    )
    reason = response.text.strip()
    if not reason:
        raise ModelResponseError("empty diagnose response", raw_response=response.text)
    return reason


def logical_reflect(skill: Skill, client: ChatClient, *, env_note: str = "") -> str:
    response = client.complete(
        ChatRequest.build(
            "llm",
            "logical_reflect",
            {"plan": "\n".join(skill.plan), "env_note": env_note},
        )
    )
    reason = response.text.strip()
    if not reason:
        raise ModelResponseError("empty logical reflection", raw_response=response.text)
    return reason


def replan(
    task: TaskSpec,
    skill: Skill,
    diagnosis: FailureDiagnosis,
    scene: SceneDescription,
    examples: Sequence[ScoredExample],
    client: ChatClient,
    *,
    program_cache: dict[str, str],
    created_at: SkillStamp,
) -> Skill:
    """Revised skill from the failure-kind-specific replanning template."""
    template_id = (
        "replan_execution" if diagnosis.kind == "execution_failure" else "replan_logical"
    )
    response = client.complete(
        ChatRequest.build(
            "llm",
            template_id,
            {
                "task": task.description,
                "plan": "\n".join(skill.plan),
                "diagnosis": diagnosis.reason,
                "scene": render_scene(scene),
                "examples": render_examples(examples),
            },
        )
    )
    directives = parse_directives(response.text)
    if not directives:
        raise ModelResponseError(
            f"replan response for task {task.id!r} contains no directives",
            raw_response=response.text,
        )
    instructions = [SubtaskInstruction(d) for d in directives]
    units = compose_plan(instructions, client, program_cache=program_cache)
    return assemble(task, instructions, units, origin="replanned", created_at=created_at)


def reflect_and_replan(
    task: TaskSpec,
    skill: Skill,
    video: VideoRef,
    scene: SceneDescription,
    env_note: str,
    examples: Sequence[ScoredExample],
    client: ChatClient,
    *,
    program_cache: dict[str, str],
    created_at: SkillStamp,
    target_frames: int = DOWNSAMPLE_TARGET,
) -> tuple[Skill, FailureDiagnosis]:
    """Full failure pipeline: chunk -> summarize -> localize -> explain -> replan."""
    chunks = chunk_plan(skill, video)
    summaries = summarize(chunks, client)
    overview = downsample(video, target_frames)
    failing = localize_failure(summaries, overview, client, env_note=env_note)
    if failing is not None:
        chunk = chunks[failing]
        if chunk.frame_range is not None:
            window = downsample(slice_video(video, chunk.frame_range), target_frames)
        else:
            window = overview
        first, last = chunk.step_range
        programs = skill.programs[first : min(last, len(skill.programs) - 1) + 1]
        reason = diagnose(chunk, window, programs, client, env_note=env_note)
        result = FailureDiagnosis(kind="execution_failure", failing_chunk=failing, reason=reason)
    else:
        reason = logical_reflect(skill, client, env_note=env_note)
        result = FailureDiagnosis(kind="logical_error", failing_chunk=None, reason=reason)
    revised = replan(
        task,
        skill,
        result,
        scene,
        examples,
        client,
        program_cache=program_cache,
        created_at=created_at,
    )
    return revised, result
