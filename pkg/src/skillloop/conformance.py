"""Protocol conformance driver for external executors.

Runs a scripted message sequence (describe, reset, rollouts, unknown op,
malformed line, shutdown) against an executor and reports pass/fail per
message. When the executor serves one of the builtin scenario suites, every
rollout reply is additionally compared field-for-field against the builtin
environment's reply to the identical request.
"""

from __future__ import annotations

from dataclasses import dataclass

from .envs import (
    BUILTIN_SUITES,
    DeterministicEnv,
    ProcessEnvHandle,
    load_suite,
    open_env,
)
from .errors import ProtocolError, SkillLoopError, TransportError
from .protocol import parse_rollout_reply
from .scripted import INITIAL_PLANS, REPAIRS


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        suffix = f": {self.detail}" if self.detail and not self.ok else ""
        return f"{status}  {self.name}{suffix}"


def _plan_variants(task_id: str) -> list[tuple[str, list[str]]]:
    variants = [("initial", INITIAL_PLANS[task_id])]
    for marker, plan in REPAIRS.get(task_id, {}).items():
        variants.append((f"repair:{marker}", plan))
    return variants


def _rollout_message(req_id: int, task_id: str, plan: list[str], seed: int) -> dict:
    programs = [f"# {step}" for step in plan]
    return {
        "id": req_id,
        "op": "rollout",
        "task_id": task_id,
        "seed": seed,
        "skill": {"plan": plan, "programs": programs},
    }


def run_protocol_check(env_spec: str, *, timeout: float = 30.0) -> list[CheckResult]:
    results: list[CheckResult] = []
    try:
        handle = open_env(env_spec, timeout=timeout)
    except SkillLoopError as exc:
        return [CheckResult("connect", False, str(exc))]

    req_id = 1000
    suite_name = None
    try:
        # describe
        try:
            reply = handle.request({"id": req_id, "op": "describe"})
            ok = (
                reply.get("ok") is True
                and reply.get("id") == req_id
                and isinstance(reply.get("tasks"), list)
                and len(reply["tasks"]) > 0
            )
            results.append(CheckResult("describe", ok, "" if ok else f"reply={reply!r}"))
            suite_name = reply.get("name") if ok else None
        except (ProtocolError, TransportError) as exc:
            results.append(CheckResult("describe", False, str(exc)))

        # reset
        req_id += 1
        try:
            reply = handle.request({"id": req_id, "op": "reset"})
            ok = reply.get("ok") is True and reply.get("id") == req_id
            results.append(CheckResult("reset", ok, "" if ok else f"reply={reply!r}"))
        except (ProtocolError, TransportError) as exc:
            results.append(CheckResult("reset", False, str(exc)))

        # rollouts: compare against the builtin environment when the suite is known
        reference = None
        if suite_name in BUILTIN_SUITES:
            reference = DeterministicEnv(load_suite(suite_name))
        if reference is not None:
            for scenario in reference.suite.scenarios:
                for label, plan in _plan_variants(scenario.task_id):
                    req_id += 1
                    message = _rollout_message(req_id, scenario.task_id, plan, seed=7)
                    name = f"rollout {scenario.task_id} [{label}]"
                    try:
                        reply = handle.request(message)
                        expected = reference.handle(message)
                        if reply == expected:
                            results.append(CheckResult(name, True))
                        else:
                            results.append(
                                CheckResult(name, False, f"reply differs from builtin: {reply!r}")
                            )
                    except (ProtocolError, TransportError) as exc:
                        results.append(CheckResult(name, False, str(exc)))
        else:
            # Generic structural probe against an unknown environment.
            req_id += 1
            task_id = "probe"
            try:
                described = handle.request({"id": req_id, "op": "describe"})
                task_id = described["tasks"][0]["task_id"]
            except Exception:
                pass
            req_id += 1
            plan = ["back to default pose", "open gripper"]
            try:
                reply = handle.request(_rollout_message(req_id, task_id, plan, seed=7))
                parse_rollout_reply(reply, plan_len=len(plan), expect_id=req_id)
                results.append(CheckResult(f"rollout {task_id} [structure]", True))
            except (ProtocolError, TransportError, KeyError) as exc:
                results.append(CheckResult(f"rollout {task_id} [structure]", False, str(exc)))

        # unknown op must produce a typed error reply, not kill the connection
        req_id += 1
        try:
            reply = handle.request({"id": req_id, "op": "noop"})
            ok = reply.get("ok") is False and isinstance(reply.get("error"), str)
            results.append(CheckResult("unknown op", ok, "" if ok else f"reply={reply!r}"))
        except (ProtocolError, TransportError) as exc:
            results.append(CheckResult("unknown op", False, str(exc)))

        # malformed line: the peer must answer an error and stay alive
        if isinstance(handle, ProcessEnvHandle):
            try:
                proc = handle._proc
                assert proc.stdin is not None and proc.stdout is not None
                proc.stdin.write(b"this is not json\n")
                proc.stdin.flush()
                line = proc.stdout.readline()
                import json as _json

                reply = _json.loads(line)
                ok = reply.get("ok") is False
                results.append(CheckResult("malformed line", ok, "" if ok else f"reply={reply!r}"))
            except Exception as exc:
                results.append(CheckResult("malformed line", False, str(exc)))

        # shutdown
        req_id += 1
        try:
            reply = handle.request({"id": req_id, "op": "shutdown"})
            ok = reply.get("ok") is True
            if isinstance(handle, ProcessEnvHandle):
                code = handle.wait(timeout=10)
                ok = ok and code == 0
                results.append(
                    CheckResult("shutdown", ok, "" if ok else f"exit code {code}")
                )
            else:
                results.append(CheckResult("shutdown", ok, "" if ok else f"reply={reply!r}"))
        except (ProtocolError, TransportError) as exc:
            results.append(CheckResult("shutdown", False, str(exc)))
    finally:
        handle.close()
    return results
