"""Line-oriented executor wire protocol.

Messages are newline-delimited UTF-8 JSON objects, one request in flight per
connection, correlated by "id". Field names are part of the contract:

  request  {"id":u64,"op":"rollout","task_id":str,"seed":u64,
            "skill":{"plan":[str],"programs":[str]}}
  reply    {"id":u64,"ok":true,"success":0|1,
            "step_boundaries":[[step,first,last]],"frames":[str],
            "scene":{"objects":[{"name":str,"position":[f,f,f],"scale":[f,f,f]}]},
            "halted_at_step":int|null,"env_note":str}
  also     {"op":"describe"}, {"op":"reset"}, {"op":"shutdown"}
  error    {"id":u64,"ok":false,"error":str}

Decoding ignores unknown fields (forward compatibility); an unknown "op" gets
a typed error reply. Lines above 16 MiB are protocol errors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import ProtocolError, ValidationError
from .memory import Skill

MAX_LINE_BYTES = 16 * 1024 * 1024

PROTOCOL_VERSION = 1

KNOWN_OPS = ("rollout", "describe", "reset", "shutdown")


@dataclass(frozen=True)
class SceneObject:
    name: str
    position: tuple[float, float, float]
    scale: tuple[float, float, float]

    def __post_init__(self) -> None:
        if not self.name:
            raise ValidationError("scene object name must be non-empty")
        if len(self.position) != 3 or len(self.scale) != 3:
            raise ValidationError(f"scene object {self.name!r}: position/scale must have 3 components")
        if any(s <= 0 for s in self.scale):
            raise ValidationError(f"scene object {self.name!r}: scales must be positive")


@dataclass(frozen=True)
class SceneDescription:
    objects: tuple[SceneObject, ...]

    def __post_init__(self) -> None:
        names = [o.name for o in self.objects]
        if len(set(names)) != len(names):
            raise ValidationError("scene object names must be unique")


@dataclass(frozen=True)
class RolloutRecord:
    """Executor's account of one rollout: binary success plus video metadata."""

    success: int
    step_boundaries: tuple[tuple[int, int, int], ...]
    frames: tuple[str, ...]
    scene: SceneDescription
    halted_at_step: int | None
    env_note: str

    def __post_init__(self) -> None:
        if self.success not in (0, 1):
            raise ValidationError(f"success must be 0 or 1, got {self.success!r}")
        if self.halted_at_step is not None and self.success == 1:
            raise ValidationError("halted_at_step implies success=0")


def encode_line(message: dict) -> bytes:
    """Compact single-line JSON plus newline."""
    data = json.dumps(message, separators=(",", ":"), sort_keys=True, ensure_ascii=False)
    raw = data.encode("utf-8") + b"\n"
    if len(raw) > MAX_LINE_BYTES:
        raise ProtocolError(f"encoded message exceeds {MAX_LINE_BYTES} bytes")
    return raw


def decode_line(raw: bytes) -> dict:
    if len(raw) > MAX_LINE_BYTES:
        raise ProtocolError(f"line exceeds {MAX_LINE_BYTES} bytes")
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ProtocolError(f"line is not valid UTF-8: {exc}")
    try:
        message = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"line is not valid JSON: {exc.msg}")
    if not isinstance(message, dict):
        raise ProtocolError("message must be a JSON object")
    return message


def rollout_request(req_id: int, task_id: str, seed: int, skill: Skill) -> dict:
    return {
        "id": req_id,
        "op": "rollout",
        "task_id": task_id,
        "seed": seed,
        "skill": {"plan": list(skill.plan), "programs": list(skill.programs)},
    }


def simple_request(req_id: int, op: str) -> dict:
    return {"id": req_id, "op": op}


def error_reply(req_id: int, error: str) -> dict:
    return {"id": req_id, "ok": False, "error": error}


def _field(reply: dict, key: str, kind: type | tuple[type, ...]) -> object:
    if key not in reply:
        raise ProtocolError(f"reply missing {key!r}")
    value = reply[key]
    if not isinstance(value, kind):
        raise ProtocolError(f"reply field {key!r} has wrong type {type(value).__name__}")
    return value


def check_reply_envelope(reply: dict, expect_id: int | None = None) -> None:
    """Common reply validation: ok flag, error text on failure, id correlation."""
    ok = _field(reply, "ok", bool)
    if expect_id is not None:
        rid = _field(reply, "id", int)
        if rid != expect_id:
            raise ProtocolError(f"reply id {rid} does not match request id {expect_id}")
    if not ok:
        error = reply.get("error")
        raise ProtocolError(f"executor error reply: {error!r}")


def parse_scene(obj: object) -> SceneDescription:
    if not isinstance(obj, dict):
        raise ProtocolError("scene must be an object")
    raw_objects = obj.get("objects")
    if not isinstance(raw_objects, list):
        raise ProtocolError("scene.objects must be an array")
    objects = []
    for item in raw_objects:
        if not isinstance(item, dict):
            raise ProtocolError("scene object must be an object")
        try:
            objects.append(
                SceneObject(
                    name=str(item["name"]),
                    position=tuple(float(x) for x in item["position"]),
                    scale=tuple(float(x) for x in item["scale"]),
                )
            )
        except (KeyError, TypeError, ValueError, ValidationError) as exc:
            raise ProtocolError(f"bad scene object: {exc}")
    try:
        return SceneDescription(objects=tuple(objects))
    except ValidationError as exc:
        raise ProtocolError(str(exc))


def parse_rollout_reply(reply: dict, *, plan_len: int, expect_id: int | None = None) -> RolloutRecord:
    """Validate and convert a rollout reply. Unknown fields are ignored."""
    check_reply_envelope(reply, expect_id)
    success = _field(reply, "success", int)
    if isinstance(success, bool) or success not in (0, 1):
        raise ProtocolError(f"success must be 0 or 1, got {reply.get('success')!r}")
    raw_bounds = _field(reply, "step_boundaries", list)
    boundaries: list[tuple[int, int, int]] = []
    prev_last = -1
    for i, item in enumerate(raw_bounds):
        if not (isinstance(item, list) and len(item) == 3 and all(isinstance(x, int) for x in item)):
            raise ProtocolError(f"step_boundaries[{i}] must be [step, first, last] integers")
        step, first, last = item
        if step != i:
            raise ProtocolError(f"step_boundaries[{i}] carries step index {step}; must be a prefix")
        if first > last or first <= prev_last:
            raise ProtocolError(f"step_boundaries[{i}] range ({first}, {last}) is unordered")
        prev_last = last
        boundaries.append((step, first, last))
    if len(boundaries) > plan_len:
        raise ProtocolError(
            f"{len(boundaries)} step boundaries for a {plan_len}-step plan"
        )
    frames = _field(reply, "frames", list)
    if not all(isinstance(f, str) for f in frames):
        raise ProtocolError("frames must be an array of strings")
    if boundaries and boundaries[-1][2] >= len(frames):
        raise ProtocolError("step boundaries reference frames outside the video")
    halted = reply.get("halted_at_step")
    if halted is not None and not isinstance(halted, int):
        raise ProtocolError("halted_at_step must be an integer or null")
    try:
        return RolloutRecord(
            success=success,
            step_boundaries=tuple(boundaries),
            frames=tuple(frames),
            scene=parse_scene(_field(reply, "scene", dict)),
            halted_at_step=halted,
            env_note=str(_field(reply, "env_note", str)),
        )
    except ValidationError as exc:
        raise ProtocolError(str(exc))
