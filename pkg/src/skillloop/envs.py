"""Builtin scripted environments and executor connections.

The scripted tabletop semantics live in a scenario fixture file shared with
the external reference adapter, so both ends of the wire protocol derive the
same replies from the same source of truth. Matching is case-insensitive
substring matching over plan step text:

  * hazards: stepping on a `trigger` text without the `guard` text anywhere in
    the plan halts execution at that step (an execution failure);
  * logical rules run after all steps executed: `release_before_grasp` flags a
    grasp while something is still held, `distinct_steps` flags two identical
    steps matching a pattern (e.g. two identical placements);
  * the goal is an ordered list of required step texts.

Failures plant a machine-readable note: "marker:<marker>; step=<n>; <text>"
(step=-1 when every step executed). The stochastic variant draws success from
Bernoulli(p) with p chosen by whether the deterministic semantics would have
succeeded; draws use splitmix64 over (env seed, rollout seed), documented in
seeds.py, so traces are reproducible from the constants alone.
"""

from __future__ import annotations

import json
import shlex
import socket
import subprocess
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Protocol

from .errors import ConfigError, ProtocolError, TransportError, ValidationError
from .memory import Skill
from .protocol import (
    MAX_LINE_BYTES,
    PROTOCOL_VERSION,
    RolloutRecord,
    decode_line,
    encode_line,
    error_reply,
    parse_rollout_reply,
    rollout_request,
    simple_request,
)
from .seeds import mix_seeds, unit_draw

DEFAULT_TIMEOUT = 120.0

BUILTIN_SUITES = ("deterministic-tabletop", "deterministic-tabletop-transfer")


@dataclass(frozen=True)
class Hazard:
    trigger: str
    guard: str
    marker: str
    note: str


@dataclass(frozen=True)
class LogicalRule:
    kind: str
    marker: str
    note: str
    pattern: str = ""


@dataclass(frozen=True)
class Scenario:
    task_id: str
    description: str
    objects: tuple[dict, ...]
    goal: tuple[str, ...]
    hazards: tuple[Hazard, ...]
    logical_rules: tuple[LogicalRule, ...]


@dataclass(frozen=True)
class ScenarioSuite:
    name: str
    frames_per_step: int
    scenarios: tuple[Scenario, ...]

    def get(self, task_id: str) -> Scenario | None:
        for s in self.scenarios:
            if s.task_id == task_id:
                return s
        return None


def bundled_scenario_path() -> Path:
    return Path(str(resources.files("skillloop").joinpath("data/scenarios.json")))


def load_suite(name: str, path: str | Path | None = None) -> ScenarioSuite:
    source = Path(path) if path is not None else bundled_scenario_path()
    doc = json.loads(source.read_text(encoding="utf-8"))
    if name not in doc["suites"]:
        raise ConfigError(f"unknown scenario suite {name!r} in {source}", field="env")
    scenarios = []
    for task_id in doc["suites"][name]:
        raw = doc["tasks"][task_id]
        scenarios.append(
            Scenario(
                task_id=task_id,
                description=raw["description"],
                objects=tuple(raw["objects"]),
                goal=tuple(raw["goal"]),
                hazards=tuple(Hazard(**h) for h in raw["hazards"]),
                logical_rules=tuple(LogicalRule(**r) for r in raw["logical_rules"]),
            )
        )
    return ScenarioSuite(
        name=name,
        frames_per_step=int(doc["frames_per_step"]),
        scenarios=tuple(scenarios),
    )


@dataclass(frozen=True)
class SimOutcome:
    success: bool
    halted_at_step: int | None
    marker: str
    note: str


def simulate(scenario: Scenario, plan: list[str]) -> SimOutcome:
    """Pure scripted semantics shared by both builtin environments."""
    lowered = [step.lower() for step in plan]

    for index, step in enumerate(lowered):
        for hazard in scenario.hazards:
            if hazard.trigger in step and not any(hazard.guard in s for s in lowered):
                return SimOutcome(False, index, hazard.marker, hazard.note)

    for rule in scenario.logical_rules:
        if rule.kind == "release_before_grasp":
            holding = False
            for step in lowered:
                if "grasp" in step:
                    if holding:
                        return SimOutcome(False, None, rule.marker, rule.note)
                    holding = True
                if "open gripper" in step:
                    holding = False
        elif rule.kind == "distinct_steps":
            matching = [step for step in lowered if rule.pattern in step]
            if len(matching) != len(set(matching)):
                return SimOutcome(False, None, rule.marker, rule.note)
        else:
            raise ValidationError(f"unknown logical rule kind {rule.kind!r}")

    cursor = 0
    for pattern in scenario.goal:
        found = -1
        for index in range(cursor, len(lowered)):
            if pattern in lowered[index]:
                found = index
                break
        if found < 0:
            return SimOutcome(False, None, "goal-incomplete", f"required action missing: {pattern}")
        cursor = found + 1

    return SimOutcome(True, None, "", "")


def failure_note(outcome: SimOutcome) -> str:
    step = -1 if outcome.halted_at_step is None else outcome.halted_at_step
    return f"marker:{outcome.marker}; step={step}; {outcome.note}"


class _ScriptedEnvBase:
    """Protocol-level request handler; subclasses decide the success bit."""

    def __init__(self, suite: ScenarioSuite) -> None:
        self.suite = suite

    def handle(self, request: dict) -> dict:
        req_id = request.get("id")
        if not isinstance(req_id, int):
            return error_reply(0, "missing or non-integer id")
        op = request.get("op")
        if op == "describe":
            return {
                "id": req_id,
                "ok": True,
                "name": self.suite.name,
                "protocol": PROTOCOL_VERSION,
                "tasks": [
                    {"task_id": s.task_id, "description": s.description}
                    for s in self.suite.scenarios
                ],
            }
        if op == "reset":
            return {"id": req_id, "ok": True}
        if op == "shutdown":
            return {"id": req_id, "ok": True}
        if op == "rollout":
            return self._rollout(req_id, request)
        return error_reply(req_id, f"unknown op: {op!r}")

    def _rollout(self, req_id: int, request: dict) -> dict:
        task_id = request.get("task_id")
        scenario = self.suite.get(task_id) if isinstance(task_id, str) else None
        if scenario is None:
            return error_reply(req_id, f"unknown task_id: {task_id!r}")
        skill = request.get("skill")
        if not isinstance(skill, dict) or not isinstance(skill.get("plan"), list):
            return error_reply(req_id, "rollout request missing skill.plan")
        plan = [str(step) for step in skill["plan"]]
        if not plan:
            return error_reply(req_id, "skill.plan must be non-empty")
        seed = request.get("seed")
        if not isinstance(seed, int):
            return error_reply(req_id, "rollout request missing integer seed")

        outcome = self._outcome(scenario, plan, seed)
        executed = len(plan) if outcome.halted_at_step is None else outcome.halted_at_step + 1
        fps = self.suite.frames_per_step
        frames = [f"{scenario.task_id}/f{index:03d}" for index in range(executed * fps)]
        boundaries = [[i, i * fps, i * fps + fps - 1] for i in range(executed)]
        return {
            "id": req_id,
            "ok": True,
            "success": 1 if outcome.success else 0,
            "step_boundaries": boundaries,
            "frames": frames,
            "scene": {"objects": [dict(obj) for obj in scenario.objects]},
            "halted_at_step": outcome.halted_at_step,
            "env_note": "ok" if outcome.success else failure_note(outcome),
        }

    def _outcome(self, scenario: Scenario, plan: list[str], seed: int) -> SimOutcome:
        raise NotImplementedError


class DeterministicEnv(_ScriptedEnvBase):
    """Success is fully determined by the plan; the seed is ignored."""

    def _outcome(self, scenario: Scenario, plan: list[str], seed: int) -> SimOutcome:
        return simulate(scenario, plan)


DEFAULT_P_OK = 0.8
DEFAULT_P_BAD = 0.0


class StochasticEnv(_ScriptedEnvBase):
    """Bernoulli success over the deterministic semantics.

    A plan the deterministic semantics accepts succeeds with p_ok; a rejected
    plan succeeds with p_bad. A stochastic miss of a good plan is reported as
    a transient slip with every step executed.
    """

    def __init__(
        self,
        suite: ScenarioSuite,
        *,
        env_seed: int = 0,
        p_ok: float = DEFAULT_P_OK,
        p_bad: float = DEFAULT_P_BAD,
        p_table: dict[str, tuple[float, float]] | None = None,
    ) -> None:
        super().__init__(suite)
        self.env_seed = env_seed
        self._default = (p_ok, p_bad)
        self._p_table = dict(p_table or {})

    def probabilities(self, task_id: str) -> tuple[float, float]:
        return self._p_table.get(task_id, self._default)

    def _outcome(self, scenario: Scenario, plan: list[str], seed: int) -> SimOutcome:
        base = simulate(scenario, plan)
        p_ok, p_bad = self.probabilities(scenario.task_id)
        p = p_ok if base.success else p_bad
        if unit_draw(mix_seeds(self.env_seed, seed)) < p:
            return SimOutcome(True, None, "", "")
        if base.success:
            return SimOutcome(False, None, "stochastic-slip", "transient disturbance during execution")
        return base


class EnvHandle(Protocol):
    def request(self, message: dict) -> dict: ...
    def close(self) -> None: ...


class _HandleMixin:
    """Shared high-level ops over a raw request() transport."""

    _next_id = 0

    def _take_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def rollout(self, task_id: str, skill: Skill, seed: int) -> RolloutRecord:
        req_id = self._take_id()
        reply = self.request(rollout_request(req_id, task_id, seed, skill))
        return parse_rollout_reply(reply, plan_len=len(skill.plan), expect_id=req_id)

    def describe(self) -> dict:
        req_id = self._take_id()
        reply = self.request(simple_request(req_id, "describe"))
        if reply.get("ok") is not True:
            raise ProtocolError(f"describe failed: {reply.get('error')!r}")
        return reply

    def reset(self) -> None:
        req_id = self._take_id()
        reply = self.request(simple_request(req_id, "reset"))
        if reply.get("ok") is not True:
            raise ProtocolError(f"reset failed: {reply.get('error')!r}")

    def shutdown(self) -> None:
        req_id = self._take_id()
        try:
            self.request(simple_request(req_id, "shutdown"))
        except TransportError:
            pass  # the peer may exit before replying

    def __enter__(self):
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class LocalEnvHandle(_HandleMixin):
    """In-process connection to a builtin scripted environment."""

    def __init__(self, env: _ScriptedEnvBase) -> None:
        self.env = env

    def request(self, message: dict) -> dict:
        # Round-trip through the codec so local runs exercise the same
        # validation path as remote ones.
        return decode_line(encode_line(self.env.handle(decode_line(encode_line(message)))))

    def close(self) -> None:
        pass


class ProcessEnvHandle(_HandleMixin):
    """Connection to a child process speaking the protocol over stdio."""

    def __init__(self, command: str, *, timeout: float = DEFAULT_TIMEOUT) -> None:
        self.timeout = timeout
        try:
            self._proc = subprocess.Popen(
                shlex.split(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
            )
        except OSError as exc:
            raise TransportError(f"cannot spawn executor {command!r}: {exc}")

    def request(self, message: dict) -> dict:
        proc = self._proc
        if proc.poll() is not None:
            raise TransportError(f"executor exited with code {proc.returncode}")
        try:
            assert proc.stdin is not None and proc.stdout is not None
            proc.stdin.write(encode_line(message))
            proc.stdin.flush()
            import threading

            line_holder: list[bytes] = []

            def _read() -> None:
                line_holder.append(proc.stdout.readline())

            reader = threading.Thread(target=_read, daemon=True)
            reader.start()
            reader.join(self.timeout)
            if reader.is_alive():
                proc.kill()
                raise TransportError(f"executor timed out after {self.timeout}s")
            line = line_holder[0] if line_holder else b""
        except (BrokenPipeError, OSError) as exc:
            raise TransportError(f"executor pipe failure: {exc}")
        if not line:
            raise TransportError("executor closed the connection")
        return decode_line(line.rstrip(b"\n"))

    def close(self) -> None:
        proc = self._proc
        if proc.poll() is None:
            try:
                proc.terminate()
                proc.wait(timeout=5)
            except Exception:
                proc.kill()

    @property
    def returncode(self) -> int | None:
        return self._proc.poll()

    def wait(self, timeout: float = 10.0) -> int:
        return self._proc.wait(timeout=timeout)


class TcpEnvHandle(_HandleMixin):
    """Connection to an executor listening on TCP."""

    def __init__(self, host: str, port: int, *, timeout: float = DEFAULT_TIMEOUT) -> None:
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
            self._sock.settimeout(timeout)
            self._reader = self._sock.makefile("rb")
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}")

    def request(self, message: dict) -> dict:
        try:
            self._sock.sendall(encode_line(message))
            line = self._reader.readline(MAX_LINE_BYTES + 2)
        except OSError as exc:
            raise TransportError(f"socket failure: {exc}")
        if not line:
            raise TransportError("executor closed the connection")
        return decode_line(line.rstrip(b"\n"))

    def close(self) -> None:
        # The makefile reader holds a reference to the socket FD; close both
        # so the peer sees EOF promptly.
        for closer in (self._reader.close, self._sock.close):
            try:
                closer()
            except OSError:
                pass


def make_builtin_env(
    name: str,
    *,
    scenario_path: str | Path | None = None,
    env_seed: int = 0,
    p_ok: float = DEFAULT_P_OK,
    p_bad: float = DEFAULT_P_BAD,
) -> _ScriptedEnvBase:
    if name in BUILTIN_SUITES:
        return DeterministicEnv(load_suite(name, scenario_path))
    if name == "deterministic":
        return DeterministicEnv(load_suite("deterministic-tabletop", scenario_path))
    if name == "stochastic":
        suite = load_suite("deterministic-tabletop", scenario_path)
        return StochasticEnv(suite, env_seed=env_seed, p_ok=p_ok, p_bad=p_bad)
    raise ConfigError(f"unknown builtin environment {name!r}", field="env")


def open_env(spec: str, *, timeout: float = DEFAULT_TIMEOUT, env_seed: int = 0) -> EnvHandle:
    """Open an environment from a selector string.

    builtin:<name>   in-process scripted suite (deterministic, stochastic,
                     deterministic-tabletop, deterministic-tabletop-transfer)
    cmd:<command>    spawn a child process speaking the stdio protocol
    tcp:<host:port>  connect over TCP
    """
    if spec.startswith("builtin:"):
        return LocalEnvHandle(make_builtin_env(spec[len("builtin:"):], env_seed=env_seed))
    if spec.startswith("cmd:"):
        return ProcessEnvHandle(spec[len("cmd:"):], timeout=timeout)
    if spec.startswith("tcp:"):
        target = spec[len("tcp:"):]
        host, _, port = target.rpartition(":")
        if not host or not port.isdigit():
            raise ConfigError(f"bad tcp env spec {spec!r}", field="env")
        return TcpEnvHandle(host, int(port), timeout=timeout)
    raise ConfigError(f"unknown env spec {spec!r}", field="env")
