"""Mixed-similarity retrieval of past skills for planning and replanning prompts.

Two channels over the stored corpus: half the budget goes to whole-task
description similarity (filtered by a score threshold), half to line-level
plan similarity (mean over query plan lines of the best-matching stored line,
no threshold). The union, deduplicated per task by the higher-scoring channel,
is what gets serialized into prompts as skill-transfer examples.

retrieve() is a pure function of its arguments: identical inputs produce the
identical ordered list, with ties broken by task_id.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .errors import ConfigError, EmbeddingProviderError, ValidationError
from .memory import Skill

DEFAULT_DIM = 256

_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class ScoredExample:
    task_id: str
    task_description: str
    skill: Skill
    score: float
    channel: str  # "task_sim" | "code_sim"


@dataclass(frozen=True)
class RetrievalCandidate:
    """One stored corpus row: a solved task and its committed skill."""

    task_id: str
    description: str
    skill: Skill


@dataclass
class RetrievalConfig:
    k: int = 4
    threshold: float = 0.5
    exclude_self: bool = True

    def __post_init__(self) -> None:
        if self.k < 2 or self.k % 2 != 0:
            raise ValidationError(f"retrieval k must be an even integer >= 2, got {self.k}")
        if not -1.0 <= self.threshold <= 1.0:
            raise ValidationError(f"retrieval threshold must lie in [-1, 1], got {self.threshold}")


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashedBagProvider:
    """Deterministic test/offline embedding: hashed token-bag, L2-normalized.

    Tokens are lowercase alphanumeric runs; each token hashes to one of `dim`
    buckets (blake2b digest, so bucket choice is stable across processes and
    platforms). Empty or tokenless text embeds to the zero vector, which by
    contract scores 0 against everything.
    """

    def __init__(self, dim: int = DEFAULT_DIM) -> None:
        if dim < 2:
            raise ValidationError(f"embedding dimension must be >= 2, got {dim}")
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}

    def _bucket(self, token: str) -> int:
        import hashlib

        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big") % self.dim

    def embed(self, text: str) -> np.ndarray:
        cached = self._cache.get(text)
        if cached is not None:
            return cached
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in _TOKEN_RE.findall(text.lower()):
            vec[self._bucket(token)] += 1.0
        vec = normalize(vec)
        self._cache[text] = vec
        return vec


class RemoteEmbeddingProvider:
    """OpenAI-style /embeddings endpoint; configured via environment variables."""

    def __init__(self, dim: int = DEFAULT_DIM, *, timeout: float = 30.0) -> None:
        base = os.environ.get("EMBEDDING_BASE_URL")
        model = os.environ.get("EMBEDDING_MODEL_NAME")
        if not base or not model:
            raise ConfigError(
                "remote embeddings need EMBEDDING_BASE_URL and EMBEDDING_MODEL_NAME",
                field="embedding.provider",
            )
        self.dim = dim
        self._url = base.rstrip("/") + "/embeddings"
        self._model = model
        self._timeout = timeout
        self._cache: dict[str, np.ndarray] = {}

    def embed(self, text: str) -> np.ndarray:
        cached = self._cache.get(text)
        if cached is not None:
            return cached
        import requests

        headers = {}
        key = os.environ.get("MODEL_API_KEY")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = requests.post(
                self._url,
                json={"model": self._model, "input": text},
                headers=headers,
                timeout=self._timeout,
            )
            resp.raise_for_status()
            values = resp.json()["data"][0]["embedding"]
        except Exception as exc:  # network/shape failures are retriable
            raise EmbeddingProviderError(f"embedding request failed: {exc}")
        vec = normalize(np.asarray(values, dtype=np.float64))
        self._cache[text] = vec
        return vec


def make_provider(name: str, dim: int = DEFAULT_DIM) -> EmbeddingProvider:
    if name == "hashed-bag":
        return HashedBagProvider(dim)
    if name == "remote":
        return RemoteEmbeddingProvider(dim)
    raise ConfigError(f"unknown embedding provider {name!r}", field="embedding.provider")


def _l2(vec: np.ndarray) -> float:
    # fsum keeps the arithmetic independent of summation order/platform, so
    # threshold comparisons and tie-breaks are exactly reproducible.
    return math.sqrt(math.fsum(float(x) * float(x) for x in vec))


def normalize(vec: np.ndarray) -> np.ndarray:
    """L2-normalize; the zero vector stays zero. Rejects non-finite input."""
    if not np.all(np.isfinite(vec)):
        raise ValidationError("embedding has non-finite components")
    norm = _l2(vec)
    if norm == 0.0:
        return vec
    return vec / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; 0 if either vector is zero."""
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = _l2(a)
    nb = _l2(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    dot = math.fsum(float(x) * float(y) for x, y in zip(a, b))
    return max(-1.0, min(1.0, dot / (na * nb)))


def plan_similarity(
    query_lines: Sequence[str],
    stored_lines: Sequence[str],
    provider: EmbeddingProvider,
) -> float:
    """Mean over query lines of the max cosine against any stored line."""
    if not query_lines or not stored_lines:
        return 0.0
    stored_vecs = [provider.embed(line) for line in stored_lines]
    total = 0.0
    for line in query_lines:
        qv = provider.embed(line)
        total += max(cosine(qv, sv) for sv in stored_vecs)
    return total / len(query_lines)


def retrieve(
    query_task_id: str,
    query_description: str,
    query_plan: Sequence[str],
    corpus: Sequence[RetrievalCandidate],
    cfg: RetrievalConfig,
    provider: EmbeddingProvider,
) -> list[ScoredExample]:
    """Select up to cfg.k stored examples for prompt injection.

    Channel task_sim: top-ceil(k/2) by description cosine, then filtered to
    score strictly above cfg.threshold. Channel code_sim: top-ceil(k/2) by
    plan-line similarity, unfiltered; skipped entirely when query_plan is
    empty (initial planning). Union keeps one record per task_id (the
    higher-scoring channel; task_sim on exact ties), ordered by score
    descending then task_id ascending.
    """
    candidates = [c for c in corpus if not (cfg.exclude_self and c.task_id == query_task_id)]
    if not candidates:
        return []
    half = math.ceil(cfg.k / 2)

    query_vec = provider.embed(query_description)
    task_scored = sorted(
        (
            ScoredExample(
                task_id=c.task_id,
                task_description=c.description,
                skill=c.skill,
                score=cosine(query_vec, provider.embed(c.description)),
                channel="task_sim",
            )
            for c in candidates
        ),
        key=lambda ex: (-ex.score, ex.task_id),
    )
    channel_a = [ex for ex in task_scored[:half] if ex.score > cfg.threshold]

    channel_b: list[ScoredExample] = []
    if query_plan:
        code_scored = sorted(
            (
                ScoredExample(
                    task_id=c.task_id,
                    task_description=c.description,
                    skill=c.skill,
                    score=plan_similarity(query_plan, c.skill.plan, provider),
                    channel="code_sim",
                )
                for c in candidates
            ),
            key=lambda ex: (-ex.score, ex.task_id),
        )
        channel_b = code_scored[:half]

    merged: dict[str, ScoredExample] = {}
    for ex in channel_a + channel_b:
        held = merged.get(ex.task_id)
        if held is None or ex.score > held.score:
            merged[ex.task_id] = ex
    return sorted(merged.values(), key=lambda ex: (-ex.score, ex.task_id))
