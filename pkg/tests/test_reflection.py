from __future__ import annotations

import random

import pytest
from oracles import check_chunking, ref_downsample_indices

from skillloop.clients import ChatClient, ChatRequest, FixtureBackend
from skillloop.envs import DeterministicEnv, LocalEnvHandle, load_suite
from skillloop.errors import ModelResponseError, ValidationError
from skillloop.memory import Skill, SkillStamp
from skillloop.planning import TaskSpec
from skillloop.reflection import (
    Chunk,
    VideoRef,
    chunk_plan,
    downsample,
    joined_summaries,
    localize_failure,
    reflect_and_replan,
    render_chunks,
    slice_video,
    summarize,
)
from skillloop.scripted import INITIAL_PLANS, REPAIRS, ScriptedDeskBackend

TWO_CUP_PLAN = REPAIRS["tray-cups"]["cups-collided"]  # 9 steps, open gripper at 4 and 8


def make_video(n_steps: int, frames_per_step: int = 4, executed: int | None = None) -> VideoRef:
    executed = n_steps if executed is None else executed
    frames = tuple(f"f{idx:03d}" for idx in range(executed * frames_per_step))
    boundaries = tuple(
        (i, i * frames_per_step, (i + 1) * frames_per_step - 1) for i in range(executed)
    )
    return VideoRef(frames=frames, step_boundaries=boundaries)


def make_skill(plan, task_id="t"):
    return Skill(
        task_id=task_id,
        plan=tuple(plan),
        programs=tuple(f"# {s}" for s in plan),
        created_at=SkillStamp(1, 1),
        origin="planned",
    )


class TestDownsample:
    def test_identity_at_target(self):
        video = VideoRef(frames=tuple(f"f{i}" for i in range(30)), step_boundaries=())
        assert downsample(video, 30) is video

    def test_two_frames_stay(self):
        video = VideoRef(frames=("a", "b"), step_boundaries=())
        assert downsample(video, 30).frames == ("a", "b")

    def test_oracle_equivalence_all_lengths(self):
        for n in range(2, 301):
            video = VideoRef(frames=tuple(f"f{i:04d}" for i in range(n)), step_boundaries=())
            out = downsample(video, 30)
            expected = [f"f{i:04d}" for i in ref_downsample_indices(n, 30)]
            assert list(out.frames) == expected, f"n={n}"

    def test_ninety_frames_pattern(self):
        video = VideoRef(frames=tuple(f"f{i}" for i in range(90)), step_boundaries=())
        kept = [int(f[1:]) for f in downsample(video, 30).frames]
        assert kept[0] == 0 and kept[-1] == 89
        assert kept[:4] == [0, 3, 6, 9]
        assert all(b > a for a, b in zip(kept, kept[1:]))

    def test_idempotent_at_or_below_target(self):
        for n in (2, 10, 30):
            video = make_video(n, frames_per_step=1)
            once = downsample(video, 30)
            assert downsample(once, 30) is once

    def test_never_reorders(self):
        rng = random.Random(5)
        for _ in range(50):
            n = rng.randint(2, 200)
            video = VideoRef(frames=tuple(f"f{i:04d}" for i in range(n)), step_boundaries=())
            frames = downsample(video, 30).frames
            assert list(frames) == sorted(frames)

    def test_boundaries_remapped_in_order(self):
        video = make_video(12, frames_per_step=4)  # 48 frames -> 30
        out = downsample(video, 30)
        assert len(out.frames) == 30
        assert [b[0] for b in out.step_boundaries] == list(range(12))
        prev_last = -1
        for _, first, last in out.step_boundaries:
            assert first <= last and first > prev_last
            prev_last = last

    def test_target_below_two_rejected(self):
        with pytest.raises(ValidationError):
            downsample(make_video(3), 1)

    def test_empty_video_rejected(self):
        with pytest.raises(ValidationError):
            downsample(VideoRef(frames=(), step_boundaries=()), 30)


class TestChunkPlan:
    def test_split_after_each_open_gripper(self):
        plan = ["grasp A", "move", "open gripper", "grasp B", "open gripper"]
        chunks = chunk_plan(make_skill(plan), make_video(5))
        assert [len(c.steps) for c in chunks] == [3, 2]

    def test_no_open_gripper_single_chunk(self):
        plan = ["press the button", "back to default pose"]
        chunks = chunk_plan(make_skill(plan), make_video(2))
        assert len(chunks) == 1 and chunks[0].steps == tuple(plan)

    def test_two_cup_plan_chunks_4_4_1(self):
        chunks = chunk_plan(make_skill(TWO_CUP_PLAN), make_video(9))
        assert [len(c.steps) for c in chunks] == [4, 4, 1]

    def test_case_insensitive_predicate(self):
        plan = ["grasp A", "Open Gripper", "back"]
        chunks = chunk_plan(make_skill(plan), make_video(3))
        assert [len(c.steps) for c in chunks] == [2, 1]

    def test_halted_run_attaches_trailing_steps(self):
        plan = ["grasp the mug", "move to the shelf", "open gripper", "back to default pose"]
        chunks = chunk_plan(make_skill(plan), make_video(4, executed=2))
        assert len(chunks) == 1
        assert chunks[0].steps == ("grasp the mug", "move to the shelf")
        assert chunks[0].trailing_steps == ("open gripper", "back to default pose")
        assert chunks[0].step_range == (0, 3)

    def test_randomized_partition_properties(self):
        rng = random.Random(20260810)
        verbs = ["grasp the cup", "move to the tray", "open gripper", "back to default pose",
                 "wipe the table", "OPEN GRIPPER now", "press the button"]
        for trial in range(500):
            n = rng.randint(1, 12)
            plan = [rng.choice(verbs) for _ in range(n)]
            executed = rng.randint(0, n)
            video = make_video(n, executed=executed)
            chunks = chunk_plan(make_skill(plan), video)
            problems = check_chunking(plan, executed, chunks)
            assert not problems, f"trial {trial}: {problems} for plan={plan} executed={executed}"

    def test_video_longer_than_plan_rejected(self):
        with pytest.raises(ValidationError):
            chunk_plan(make_skill(["only step"]), make_video(2))


class TestSliceVideo:
    def test_window_rebases_boundaries(self):
        video = make_video(4)
        window = slice_video(video, (4, 11))  # steps 1..2
        assert window.frames == video.frames[4:12]
        assert window.step_boundaries == ((0, 0, 3), (1, 4, 7))

    def test_bad_range_rejected(self):
        with pytest.raises(ValidationError):
            slice_video(make_video(2), (5, 99))


def summarize_fixture(chunks):
    backend = FixtureBackend({})
    request = ChatRequest.build("llm", "summarize", {"chunks": render_chunks(chunks)})
    lines = []
    for chunk in chunks:
        first, last = chunk.step_range
        lines.append(f"chunk {chunk.chunk_index} (steps {first}-{last}): does things")
    backend.put(request, "\n".join(lines))
    return ChatClient(backend)


class TestSummarize:
    def test_one_summary_per_chunk_in_order(self):
        chunks = chunk_plan(make_skill(TWO_CUP_PLAN), make_video(9))
        client = summarize_fixture(chunks)
        summaries = summarize(chunks, client)
        assert [s.chunk_index for s in summaries] == [0, 1, 2]
        assert client.calls_by_template() == {"summarize": 1}

    def test_echo_contract_carries_directives(self):
        chunks = chunk_plan(make_skill(["grasp A", "open gripper"]), make_video(2))
        client = ChatClient(ScriptedDeskBackend())
        summaries = summarize(chunks, client)
        assert "grasp A then open gripper" in summaries[0].text

    def test_join_in_chunk_order(self):
        chunks = chunk_plan(make_skill(TWO_CUP_PLAN), make_video(9))
        summaries = summarize(chunks, summarize_fixture(chunks))
        joined = joined_summaries(summaries)
        assert joined.index("chunk 0") < joined.index("chunk 1") < joined.index("chunk 2")

    def test_incomplete_response_rejected(self):
        chunks = chunk_plan(make_skill(TWO_CUP_PLAN), make_video(9))
        backend = FixtureBackend({})
        backend.put(
            ChatRequest.build("llm", "summarize", {"chunks": render_chunks(chunks)}),
            "chunk 0 (steps 0-3): only one line",
        )
        with pytest.raises(ModelResponseError):
            summarize(chunks, ChatClient(backend))


def localize_fixture(summaries, video, env_note, response):
    backend = FixtureBackend({})
    backend.put(
        ChatRequest.build(
            "vlm",
            "localize",
            {"summaries": joined_summaries(summaries), "env_note": env_note},
            frames=video.frames,
        ),
        response,
    )
    return ChatClient(backend)


class TestLocalize:
    def setup_method(self):
        self.chunks = chunk_plan(make_skill(TWO_CUP_PLAN), make_video(9))
        self.video = downsample(make_video(9), 30)
        self.summaries = summarize(self.chunks, summarize_fixture(self.chunks))

    def test_declared_chunk_returned(self):
        client = localize_fixture(self.summaries, self.video, "note", "failure in chunk 1")
        assert localize_failure(self.summaries, self.video, client, env_note="note") == 1

    def test_all_ok_returns_none(self):
        client = localize_fixture(
            self.summaries, self.video, "note", "All actions executed successfully."
        )
        assert localize_failure(self.summaries, self.video, client, env_note="note") is None

    def test_out_of_range_is_protocol_error(self):
        client = localize_fixture(self.summaries, self.video, "note", "failure in chunk 7")
        with pytest.raises(ModelResponseError):
            localize_failure(self.summaries, self.video, client, env_note="note")

    def test_gibberish_is_protocol_error(self):
        client = localize_fixture(self.summaries, self.video, "note", "hmm, unclear")
        with pytest.raises(ModelResponseError):
            localize_failure(self.summaries, self.video, client, env_note="note")


def rollout_record(task_id, plan, seed=0):
    env = LocalEnvHandle(DeterministicEnv(load_suite("deterministic-tabletop-transfer")))
    return env.rollout(task_id, make_skill(plan, task_id=task_id), seed)


class TestPipeline:
    def test_execution_failure_call_budget_and_template(self):
        task = TaskSpec("needs-offset", "place the mug on the shelf")
        skill = make_skill(INITIAL_PLANS["needs-offset"], task_id="needs-offset")
        record = rollout_record("needs-offset", list(skill.plan))
        assert record.success == 0
        client = ChatClient(ScriptedDeskBackend())
        video = VideoRef(frames=record.frames, step_boundaries=record.step_boundaries)
        revised, diagnosis = reflect_and_replan(
            task, skill, video, record.scene, record.env_note, [], client,
            program_cache={s: f"# {s}" for s in skill.plan},
            created_at=SkillStamp(1, 1),
        )
        assert diagnosis.kind == "execution_failure"
        assert diagnosis.failing_chunk == 0
        calls = client.calls_by_template()
        # one summarize batch, one localize, one diagnose, one replan; compose
        # only for the single novel directive in the revised plan
        assert calls == {
            "summarize": 1, "localize": 1, "diagnose": 1,
            "replan_execution": 1, "compose": 1,
        }
        assert revised.plan != skill.plan
        assert revised.origin == "replanned"

    def test_logical_failure_uses_logical_templates(self):
        task = TaskSpec("logical-release", "move the pear and the lemon to the basket")
        skill = make_skill(INITIAL_PLANS["logical-release"], task_id="logical-release")
        record = rollout_record("logical-release", list(skill.plan))
        assert record.success == 0 and record.halted_at_step is None
        client = ChatClient(ScriptedDeskBackend())
        video = VideoRef(frames=record.frames, step_boundaries=record.step_boundaries)
        revised, diagnosis = reflect_and_replan(
            task, skill, video, record.scene, record.env_note, [], client,
            program_cache={s: f"# {s}" for s in skill.plan},
            created_at=SkillStamp(1, 2),
        )
        assert diagnosis.kind == "logical_error"
        assert diagnosis.failing_chunk is None
        calls = client.calls_by_template()
        assert calls["logical_reflect"] == 1 and calls["replan_logical"] == 1
        assert "diagnose" not in calls and "replan_execution" not in calls
        assert "release" in diagnosis.reason or "open the gripper" in diagnosis.reason
        assert revised.plan != skill.plan

    def test_replan_differs_for_every_scripted_failure(self):
        cases = [
            ("needs-offset", "place the mug on the shelf"),
            ("firm-grip", "put the soap bar in the caddy"),
            ("wide-bowl", "place the wide bowl on the plate"),
            ("logical-release", "move the pear and the lemon to the basket"),
        ]
        for task_id, description in cases:
            skill = make_skill(INITIAL_PLANS[task_id], task_id=task_id)
            record = rollout_record(task_id, list(skill.plan))
            client = ChatClient(ScriptedDeskBackend())
            video = VideoRef(frames=record.frames, step_boundaries=record.step_boundaries)
            revised, diagnosis = reflect_and_replan(
                TaskSpec(task_id, description), skill, video, record.scene,
                record.env_note, [], client,
                program_cache={s: f"# {s}" for s in skill.plan},
                created_at=SkillStamp(1, 1),
            )
            assert diagnosis.reason
            assert revised.plan != skill.plan, task_id
