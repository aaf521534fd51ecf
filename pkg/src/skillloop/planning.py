"""Task decomposition and program generation through the model client.

The plan parser is deliberately tolerant: it extracts every composer("...")
directive line from the response and ignores any surrounding prose, so model
chatter never corrupts a plan, and an answer with no directives is a typed
planning error rather than a silent empty plan.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from .clients import ChatClient, ChatRequest
from .errors import CompositionError, PlanningError, ValidationError
from .memory import Skill, SkillStamp
from .retrieval import ScoredExample


@dataclass(frozen=True)
class TaskSpec:
    id: str
    description: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ValidationError("task id must be non-empty")
        if not self.description:
            raise ValidationError(f"task {self.id!r} has an empty description")


@dataclass(frozen=True)
class SubtaskInstruction:
    text: str

    def __post_init__(self) -> None:
        if not self.text or "\n" in self.text:
            raise ValidationError(f"bad subtask instruction {self.text!r}")


@dataclass(frozen=True)
class ProgramUnit:
    text: str
    step_index: int

    def __post_init__(self) -> None:
        if not self.text:
            raise ValidationError(f"empty program unit at step {self.step_index}")


_DIRECTIVE_RE = re.compile(r'composer\(\s*"((?:[^"\\\n]|\\.)*)"\s*\)')


def parse_directives(text: str) -> list[str]:
    """All composer("...") payloads in order; everything else is ignored."""
    return [m.group(1) for m in _DIRECTIVE_RE.finditer(text)]


def render_directives(lines: Sequence[str]) -> str:
    return "\n".join(f'composer("{line}")' for line in lines)


def render_examples(examples: Sequence[ScoredExample]) -> str:
    """Serialize retrieved examples for prompt injection, highest score first."""
    if not examples:
        return "(none)"
    blocks = []
    for ex in examples:
        lines = [f"# task: {ex.task_description}"]
        lines.extend(f'composer("{d}")' for d in ex.skill.plan)
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def plan(
    task: TaskSpec,
    client: ChatClient,
    examples: Sequence[ScoredExample] = (),
    *,
    template_id: str = "plan",
) -> list[SubtaskInstruction]:
    """Decompose a task description into ordered subtask instructions."""
    slots = {"task": task.description}
    if template_id != "retry_plan":
        slots["examples"] = render_examples(examples)
    response = client.complete(ChatRequest.build("llm", template_id, slots))
    directives = parse_directives(response.text)
    if not directives:
        raise PlanningError(
            f"no directives found in response for task {task.id!r}",
            raw_response=response.text,
        )
    return [SubtaskInstruction(d) for d in directives]


def compose(
    instruction: SubtaskInstruction,
    client: ChatClient,
    *,
    step_index: int,
) -> ProgramUnit:
    """Generate the low-level program unit for one subtask.

    Infrastructure failures (fixture miss, transport) propagate untouched;
    only a bad response body becomes a composition error.
    """
    response = client.complete(
        ChatRequest.build("llm", "compose", {"directive": instruction.text})
    )
    text = response.text.strip()
    if not text:
        raise CompositionError(
            f"empty program for step {step_index} ({instruction.text!r})",
            step_index=step_index,
        )
    return ProgramUnit(text=text, step_index=step_index)


def compose_plan(
    instructions: Sequence[SubtaskInstruction],
    client: ChatClient,
    *,
    program_cache: dict[str, str] | None = None,
) -> list[ProgramUnit]:
    """One program unit per instruction, sequential.

    program_cache maps directive text -> program text; cache hits skip the
    model call (replans reuse the failed skill's unchanged lines).
    """
    units: list[ProgramUnit] = []
    for i, instruction in enumerate(instructions):
        if program_cache is not None and instruction.text in program_cache:
            units.append(ProgramUnit(text=program_cache[instruction.text], step_index=i))
            continue
        unit = compose(instruction, client, step_index=i)
        if program_cache is not None:
            program_cache[instruction.text] = unit.text
        units.append(unit)
    return units


def assemble(
    task: TaskSpec,
    instructions: Sequence[SubtaskInstruction],
    units: Sequence[ProgramUnit],
    *,
    origin: str = "planned",
    created_at: SkillStamp = SkillStamp(round=1, iteration=1),
) -> Skill:
    """Pair plan and programs into a Skill; lengths and indices must align."""
    if not instructions:
        raise ValidationError(f"cannot assemble an empty plan for task {task.id!r}")
    if len(instructions) != len(units):
        raise ValidationError(
            f"task {task.id!r}: {len(instructions)} instructions but {len(units)} program units"
        )
    for i, unit in enumerate(units):
        if unit.step_index != i:
            raise ValidationError(
                f"task {task.id!r}: program unit at position {i} carries step_index {unit.step_index}"
            )
    return Skill(
        task_id=task.id,
        plan=tuple(x.text for x in instructions),
        programs=tuple(u.text for u in units),
        created_at=created_at,
        origin=origin,
    )
