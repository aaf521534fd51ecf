"""Uniform chat interface for the LLM (text) and VLM (text + frames) roles.

Backends:
  * FixtureBackend      -- table of request-fingerprint -> response text; the
                           deterministic test backend. A miss is a typed error
                           naming the fingerprint so new fixtures are easy to
                           author.
  * RemoteBackend       -- one HTTP chat-completion call per request, bounded
                           retries, configured entirely by environment
                           variables. Never required by the test suite.
  * RecordReplayCache   -- wraps any backend; record mode persists
                           fingerprint -> response, replay mode serves the
                           recording and never touches the wrapped backend.

The fingerprint covers role, template_id, slot values, frame refs and frame
count -- not raw frame bytes -- so synthetic-frame fixtures stay stable across
platforms. Call counters are exact and monotone; they back every
zero-inference assertion in the trainer and evaluator.
"""

from __future__ import annotations

import hashlib
import json
import os
import string
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Protocol

from .errors import (
    ConfigError,
    FixtureMissError,
    RemoteBackendError,
    ReplayMissError,
    ValidationError,
)

ROLES = ("llm", "vlm")

TEMPLATE_IDS = (
    "plan",
    "retry_plan",
    "compose",
    "summarize",
    "localize",
    "diagnose",
    "logical_reflect",
    "replan_execution",
    "replan_logical",
)

MAX_RESPONSE_BYTES = 256 * 1024


@dataclass(frozen=True)
class ChatRequest:
    role: str
    template_id: str
    slots: tuple[tuple[str, str], ...]
    frames: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValidationError(f"unknown role {self.role!r}")
        if self.frames and self.role != "vlm":
            raise ValidationError("frames may only accompany vlm requests")

    @classmethod
    def build(
        cls,
        role: str,
        template_id: str,
        slots: Mapping[str, str],
        frames: tuple[str, ...] = (),
    ) -> "ChatRequest":
        return cls(
            role=role,
            template_id=template_id,
            slots=tuple(sorted(slots.items())),
            frames=tuple(frames),
        )

    def slot(self, name: str) -> str:
        for key, value in self.slots:
            if key == name:
                return value
        raise KeyError(name)

    def slot_map(self) -> dict[str, str]:
        return dict(self.slots)


@dataclass
class ChatResponse:
    text: str
    backend: str
    usage: dict | None = None


def fingerprint(req: ChatRequest) -> str:
    """Stable hash of (role, template_id, sorted slots, frame refs, frame count)."""
    payload = json.dumps(
        {
            "role": req.role,
            "template_id": req.template_id,
            "slots": list(req.slots),
            "frames": list(req.frames),
            "frame_count": len(req.frames),
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class Backend(Protocol):
    name: str

    def complete(self, req: ChatRequest) -> str: ...


class TemplateSet:
    """Prompt templates loaded from a directory of $slot-style text files."""

    def __init__(self, templates: Mapping[str, string.Template]) -> None:
        self._templates = dict(templates)

    @classmethod
    def from_dir(cls, directory: str | os.PathLike) -> "TemplateSet":
        templates: dict[str, string.Template] = {}
        for path in sorted(Path(directory).glob("*.txt")):
            templates[path.stem] = string.Template(path.read_text(encoding="utf-8"))
        if not templates:
            raise ConfigError(f"no templates found under {directory}", field="templates")
        return cls(templates)

    @classmethod
    def bundled(cls) -> "TemplateSet":
        root = resources.files("skillloop").joinpath("templates")
        templates = {
            name: string.Template(root.joinpath(f"{name}.txt").read_text(encoding="utf-8"))
            for name in TEMPLATE_IDS
        }
        return cls(templates)

    def known(self, template_id: str) -> bool:
        return template_id in self._templates

    def ids(self) -> list[str]:
        return sorted(self._templates)

    def render(self, template_id: str, slots: Mapping[str, str]) -> str:
        if template_id not in self._templates:
            raise ValidationError(f"unknown template_id {template_id!r}")
        return self._templates[template_id].substitute(dict(slots))


class FixtureBackend:
    name = "fixture"

    def __init__(self, table: Mapping[str, str]) -> None:
        self._table = dict(table)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "FixtureBackend":
        try:
            table = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load fixture file {path}: {exc}", field="backend")
        if not isinstance(table, dict):
            raise ConfigError("fixture file must map fingerprint -> response", field="backend")
        return cls(table)

    def save(self, path: str | os.PathLike) -> None:
        target = Path(path)
        tmp = target.with_name(target.name + ".tmp")
        tmp.write_text(
            json.dumps(self._table, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        tmp.replace(target)

    def put(self, req: ChatRequest, response: str) -> None:
        self._table[fingerprint(req)] = response

    def __len__(self) -> int:
        return len(self._table)

    def complete(self, req: ChatRequest) -> str:
        key = fingerprint(req)
        try:
            return self._table[key]
        except KeyError:
            raise FixtureMissError(key, template_id=req.template_id)


class RemoteBackend:
    """HTTP chat-completions endpoint. Model names are chosen per role."""

    name = "remote"

    def __init__(
        self,
        templates: TemplateSet | None = None,
        *,
        timeout: float = 60.0,
        max_attempts: int = 3,
    ) -> None:
        base = os.environ.get("MODEL_BASE_URL")
        if not base:
            raise ConfigError("remote backend needs MODEL_BASE_URL", field="backend")
        self._url = base.rstrip("/") + "/chat/completions"
        self._models = {
            "llm": os.environ.get("MODEL_NAME_LLM", ""),
            "vlm": os.environ.get("MODEL_NAME_VLM", ""),
        }
        if not self._models["llm"] or not self._models["vlm"]:
            raise ConfigError(
                "remote backend needs MODEL_NAME_LLM and MODEL_NAME_VLM", field="backend"
            )
        self._key = os.environ.get("MODEL_API_KEY", "")
        self._templates = templates or TemplateSet.bundled()
        self._timeout = timeout
        self._max_attempts = max_attempts

    def complete(self, req: ChatRequest) -> str:
        import requests

        prompt = self._templates.render(req.template_id, req.slot_map())
        content: list[dict] | str
        if req.frames:
            # Frames travel as an ordered attachment list after the text part.
            content = [{"type": "text", "text": prompt}] + [
                {"type": "image_url", "image_url": {"url": ref}} for ref in req.frames
            ]
        else:
            content = prompt
        body = {
            "model": self._models[req.role],
            "messages": [{"role": "user", "content": content}],
        }
        headers = {"Content-Type": "application/json"}
        if self._key:
            headers["Authorization"] = f"Bearer {self._key}"

        last_error: Exception | None = None
        for attempt in range(self._max_attempts):
            try:
                resp = requests.post(self._url, json=body, headers=headers, timeout=self._timeout)
                if resp.status_code in (429, 500, 502, 503, 504):
                    raise RemoteBackendError(f"transient status {resp.status_code}")
                resp.raise_for_status()
                if len(resp.content) > MAX_RESPONSE_BYTES:
                    raise RemoteBackendError(
                        f"response exceeds cap ({len(resp.content)} > {MAX_RESPONSE_BYTES} bytes)"
                    )
                return resp.json()["choices"][0]["message"]["content"]
            except RemoteBackendError as exc:
                last_error = exc
            except Exception as exc:
                last_error = RemoteBackendError(str(exc))
            if attempt + 1 < self._max_attempts:
                time.sleep(min(2.0**attempt, 8.0))
        raise RemoteBackendError(f"remote call failed after {self._max_attempts} attempts: {last_error}")


class RecordReplayCache:
    """Record/replay wrapper keyed by request fingerprint.

    mode="record": delegate to the wrapped backend and persist every response.
    mode="replay": serve only persisted responses; a miss is ReplayMissError
    and the wrapped backend is never consulted.
    """

    def __init__(self, path: str | os.PathLike, inner: Backend | None = None, *, mode: str) -> None:
        if mode not in ("record", "replay"):
            raise ConfigError(f"cache mode must be record or replay, got {mode!r}", field="backend")
        if mode == "record" and inner is None:
            raise ConfigError("record mode needs a wrapped backend", field="backend")
        self.name = f"{mode}({inner.name if inner else 'cache'})"
        self._path = Path(path)
        self._inner = inner
        self._mode = mode
        self._table: dict[str, str] = {}
        if self._path.exists():
            self._table = json.loads(self._path.read_text(encoding="utf-8"))
        elif mode == "replay":
            raise ConfigError(f"replay cache {self._path} does not exist", field="backend")

    def complete(self, req: ChatRequest) -> str:
        key = fingerprint(req)
        if key in self._table:
            return self._table[key]
        if self._mode == "replay":
            raise ReplayMissError(key)
        assert self._inner is not None
        response = self._inner.complete(req)
        self._table[key] = response
        self._flush()
        return response

    def _flush(self) -> None:
        tmp = self._path.with_name(self._path.name + ".tmp")
        tmp.write_text(
            json.dumps(self._table, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        tmp.replace(self._path)

    def __len__(self) -> int:
        return len(self._table)


@dataclass
class CallLogEntry:
    template_id: str
    fingerprint: str
    response_chars: int


class ChatClient:
    """Shareable handle: backend + templates + atomic call counters."""

    def __init__(self, backend: Backend, templates: TemplateSet | None = None) -> None:
        self.backend = backend
        self.templates = templates or TemplateSet.bundled()
        self._lock = threading.Lock()
        self._counters: dict[tuple[str, str], int] = {}
        self.call_log: list[CallLogEntry] = []

    def complete(self, req: ChatRequest) -> ChatResponse:
        if not self.templates.known(req.template_id):
            raise ValidationError(f"unknown template_id {req.template_id!r}")
        text = self.backend.complete(req)
        if len(text.encode("utf-8")) > MAX_RESPONSE_BYTES:
            raise RemoteBackendError("backend response exceeds the size cap")
        with self._lock:
            key = (req.role, req.template_id)
            self._counters[key] = self._counters.get(key, 0) + 1
            self.call_log.append(
                CallLogEntry(
                    template_id=req.template_id,
                    fingerprint=fingerprint(req),
                    response_chars=len(text),
                )
            )
        return ChatResponse(text=text, backend=self.backend.name)

    @property
    def total_calls(self) -> int:
        with self._lock:
            return sum(self._counters.values())

    def counters(self) -> dict[tuple[str, str], int]:
        with self._lock:
            return dict(self._counters)

    def calls_by_template(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for (_, template_id), n in self.counters().items():
            out[template_id] = out.get(template_id, 0) + n
        return out
