"""Exception hierarchy.

Transport errors, config errors, and fixture misses map to distinct CLI exit
codes, so keep them as separate classes rather than folding into ValueError.
"""

from __future__ import annotations


class SkillLoopError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(SkillLoopError):
    """A domain invariant was violated (empty plan, length mismatch, ...)."""


class MemoryFormatError(SkillLoopError):
    """A memory file could not be parsed; carries file/field context."""

    def __init__(self, message: str, *, path: str | None = None,
                 field: str | None = None, line: int | None = None) -> None:
        parts = [message]
        if path is not None:
            parts.append(f"path={path}")
        if field is not None:
            parts.append(f"field={field}")
        if line is not None:
            parts.append(f"line={line}")
        super().__init__(" | ".join(parts))
        self.path = path
        self.field = field
        self.line = line


class PlanningError(SkillLoopError):
    """Model response did not yield a usable plan."""

    def __init__(self, message: str, *, raw_response: str | None = None) -> None:
        super().__init__(message)
        self.raw_response = raw_response


class CompositionError(SkillLoopError):
    """Program generation failed for one subtask."""

    def __init__(self, message: str, *, step_index: int | None = None) -> None:
        super().__init__(message)
        self.step_index = step_index


class ModelResponseError(SkillLoopError):
    """A reflection-stage response was outside its contract (bad chunk index, ...)."""

    def __init__(self, message: str, *, raw_response: str | None = None) -> None:
        super().__init__(message)
        self.raw_response = raw_response


class ProtocolError(SkillLoopError):
    """Malformed wire message: bad JSON, missing fields, oversize line."""


class TransportError(SkillLoopError):
    """Environment process/socket failure or timeout. Retriable; never a task failure."""


class FixtureMissError(SkillLoopError):
    """Fixture backend has no entry for a request fingerprint."""

    def __init__(self, fingerprint: str, *, template_id: str | None = None) -> None:
        detail = f" (template_id={template_id})" if template_id else ""
        super().__init__(f"no fixture response for fingerprint {fingerprint}{detail}")
        self.fingerprint = fingerprint
        self.template_id = template_id


class ReplayMissError(SkillLoopError):
    """Replay cache has no recorded response for a request fingerprint."""

    def __init__(self, fingerprint: str) -> None:
        super().__init__(f"no recorded response for fingerprint {fingerprint}")
        self.fingerprint = fingerprint


class RemoteBackendError(SkillLoopError):
    """Remote chat/embedding endpoint failed after bounded retries."""


class EmbeddingProviderError(SkillLoopError):
    """Embedding provider failure; retriable, distinct from invariant violations."""

    def __init__(self, message: str, *, retriable: bool = True) -> None:
        super().__init__(message)
        self.retriable = retriable


class ConfigError(SkillLoopError):
    """Bad run configuration; carries the offending field for diagnostics."""

    def __init__(self, message: str, *, field: str | None = None) -> None:
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
