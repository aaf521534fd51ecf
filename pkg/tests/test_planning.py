from __future__ import annotations

import pytest

from skillloop.clients import ChatClient, ChatRequest, FixtureBackend
from skillloop.errors import CompositionError, PlanningError, ValidationError
from skillloop.memory import SkillStamp
from skillloop.planning import (
    ProgramUnit,
    SubtaskInstruction,
    TaskSpec,
    assemble,
    compose,
    compose_plan,
    parse_directives,
    plan,
    render_directives,
)

# Nine-step two-cup plan: distinct tray placements, release between grasps.
TWO_CUP_PLAN = [
    "back to default pose",
    "grasp the blue cup",
    "move to 5cm on top of the front-left part of the black tray",
    "open gripper",
    "back to default pose",
    "grasp the white cup",
    "move to 5cm on top of the back-right part of the black tray",
    "open gripper",
    "back to default pose",
]


def plan_request(description, examples_text="(none)"):
    return ChatRequest.build("llm", "plan", {"task": description, "examples": examples_text})


class TestParseDirectives:
    def test_extracts_composer_lines(self):
        text = 'intro prose\ncomposer("grasp the cup")\nnoise\ncomposer("open gripper")\n'
        assert parse_directives(text) == ["grasp the cup", "open gripper"]

    def test_ignores_everything_else(self):
        assert parse_directives("no directives here") == []

    def test_round_trips_render(self):
        lines = ["grasp the cup", "open gripper"]
        assert parse_directives(render_directives(lines)) == lines


class TestPlan:
    def test_two_cup_task_yields_nine_steps_in_order(self):
        backend = FixtureBackend({})
        backend.put(plan_request("place both cups on tray"), render_directives(TWO_CUP_PLAN))
        client = ChatClient(backend)
        task = TaskSpec("two-cups", "place both cups on tray")
        instructions = plan(task, client)
        assert [i.text for i in instructions] == TWO_CUP_PLAN
        assert instructions[0].text == "back to default pose"
        assert instructions[1].text == "grasp the blue cup"
        assert len(instructions) == 9

    def test_zero_directives_is_planning_error(self):
        backend = FixtureBackend({})
        backend.put(plan_request("impossible"), "I cannot help with that.")
        client = ChatClient(backend)
        with pytest.raises(PlanningError) as excinfo:
            plan(TaskSpec("t", "impossible"), client)
        assert excinfo.value.raw_response == "I cannot help with that."

    def test_deterministic_for_same_prompt(self):
        backend = FixtureBackend({})
        backend.put(plan_request("wipe"), render_directives(["wipe the table"]))
        client = ChatClient(backend)
        task = TaskSpec("t", "wipe")
        assert plan(task, client) == plan(task, client)


class TestCompose:
    def test_program_contains_gripper_primitive(self):
        backend = FixtureBackend({})
        backend.put(
            ChatRequest.build("llm", "compose", {"directive": "open gripper"}),
            "gripper.open()",
        )
        client = ChatClient(backend)
        unit = compose(SubtaskInstruction("open gripper"), client, step_index=0)
        assert "gripper.open()" in unit.text

    def test_injected_empty_response_surfaces_step_index(self):
        backend = FixtureBackend({})
        backend.put(ChatRequest.build("llm", "compose", {"directive": "grasp the cup"}), "   ")
        client = ChatClient(backend)
        with pytest.raises(CompositionError) as excinfo:
            compose(SubtaskInstruction("grasp the cup"), client, step_index=2)
        assert excinfo.value.step_index == 2

    def test_fixture_miss_propagates_untouched(self):
        from skillloop.errors import FixtureMissError

        client = ChatClient(FixtureBackend({}))
        with pytest.raises(FixtureMissError):
            compose(SubtaskInstruction("grasp the cup"), client, step_index=0)

    def test_batch_compose_assigns_indices(self):
        backend = FixtureBackend({})
        steps = ["a", "b", "c"]
        for step in steps:
            backend.put(ChatRequest.build("llm", "compose", {"directive": step}), f"prog {step}")
        client = ChatClient(backend)
        units = compose_plan([SubtaskInstruction(s) for s in steps], client)
        assert [u.step_index for u in units] == [0, 1, 2]

    def test_program_cache_skips_calls(self):
        backend = FixtureBackend({})
        backend.put(ChatRequest.build("llm", "compose", {"directive": "a"}), "prog a")
        client = ChatClient(backend)
        cache: dict[str, str] = {}
        compose_plan([SubtaskInstruction("a")], client, program_cache=cache)
        compose_plan([SubtaskInstruction("a")], client, program_cache=cache)
        assert client.calls_by_template() == {"compose": 1}


class TestAssemble:
    def task(self):
        return TaskSpec("t", "do the thing")

    def units(self, n):
        return [ProgramUnit(text=f"prog {i}", step_index=i) for i in range(n)]

    def test_two_steps_two_units(self):
        skill = assemble(
            self.task(),
            [SubtaskInstruction("a"), SubtaskInstruction("b")],
            self.units(2),
        )
        assert len(skill.plan) == 2 and skill.origin == "planned"

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            assemble(
                self.task(),
                [SubtaskInstruction("a"), SubtaskInstruction("b")],
                self.units(1),
            )

    def test_empty_plan_rejected(self):
        with pytest.raises(ValidationError):
            assemble(self.task(), [], [])

    def test_order_preserved_and_round_trips(self):
        steps = [f"step number {i}" for i in range(5)]
        skill = assemble(
            self.task(),
            [SubtaskInstruction(s) for s in steps],
            self.units(5),
            created_at=SkillStamp(2, 7),
        )
        assert list(skill.plan) == steps
        assert parse_directives(render_directives(skill.plan)) == steps
