"""Independent reference implementations used as test oracles.

These stay deliberately separate from the package internals: pure-python
arithmetic, brute-force enumeration, and straight transcriptions of published
algorithms. Production code is checked against them, never the other way
around.
"""

from __future__ import annotations

import hashlib
import math
import re
from fractions import Fraction

MASK64 = (1 << 64) - 1

# --- splitmix64: straight transcription of the published next() -------------


def ref_splitmix64_next(state: int) -> tuple[int, int]:
    """(new_state, output) of one step of the reference generator."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def ref_splitmix64_sequence(seed: int, count: int) -> list[int]:
    out = []
    state = seed
    for _ in range(count):
        state, value = ref_splitmix64_next(state)
        out.append(value)
    return out


# Published test vector: first five outputs for seed 1234567.
SPLITMIX64_VECTOR_1234567 = [
    6457827717110365317,
    3203168211198807973,
    9817491932198370423,
    4593380528125082431,
    16408922859458223821,
]


# --- uniform downsampling closed form ----------------------------------------


def ref_downsample_indices(n: int, target: int) -> list[int]:
    """round-half-up of i*(n-1)/(target-1), exact via Fractions."""
    if n <= target:
        return list(range(n))
    step = Fraction(n - 1, target - 1)
    return [math.floor(i * step + Fraction(1, 2)) for i in range(target)]


# --- hashed token-bag embedding ----------------------------------------------


_TOKENS = re.compile(r"[a-z0-9]+")


def ref_embed(text: str, dim: int) -> list[float]:
    counts: dict[int, float] = {}
    for token in _TOKENS.findall(text.lower()):
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        bucket = int.from_bytes(digest, "big") % dim
        counts[bucket] = counts.get(bucket, 0.0) + 1.0
    vec = [counts.get(i, 0.0) for i in range(dim)]
    norm = math.sqrt(math.fsum(v * v for v in vec))
    if norm == 0.0:
        return vec
    return [v / norm for v in vec]


def ref_cosine(a: list[float], b: list[float]) -> float:
    na = math.sqrt(math.fsum(x * x for x in a))
    nb = math.sqrt(math.fsum(y * y for y in b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return math.fsum(x * y for x, y in zip(a, b)) / (na * nb)


# --- brute-force two-channel retrieval ----------------------------------------


def ref_retrieve(
    query_task_id: str,
    query_description: str,
    query_plan: list[str],
    corpus: list[tuple[str, str, list[str]]],  # (task_id, description, plan lines)
    *,
    k: int,
    threshold: float,
    exclude_self: bool,
    dim: int,
) -> list[tuple[str, float, str]]:
    """Expected (task_id, score, channel) rows, ordered."""
    rows = [c for c in corpus if not (exclude_self and c[0] == query_task_id)]
    if not rows:
        return []
    half = math.ceil(k / 2)
    qd = ref_embed(query_description, dim)

    task_scores = []
    for task_id, description, _ in rows:
        task_scores.append((task_id, ref_cosine(qd, ref_embed(description, dim))))
    task_scores.sort(key=lambda r: (-r[1], r[0]))
    channel_a = [(t, s, "task_sim") for t, s in task_scores[:half] if s > threshold]

    channel_b = []
    if query_plan:
        code_scores = []
        q_vecs = [ref_embed(line, dim) for line in query_plan]
        for task_id, _, plan in rows:
            p_vecs = [ref_embed(line, dim) for line in plan]
            total = 0.0
            for qv in q_vecs:
                total += max(ref_cosine(qv, pv) for pv in p_vecs) if p_vecs else 0.0
            code_scores.append((task_id, total / len(q_vecs)))
        code_scores.sort(key=lambda r: (-r[1], r[0]))
        channel_b = [(t, s, "code_sim") for t, s in code_scores[:half]]

    merged: dict[str, tuple[str, float, str]] = {}
    for row in channel_a + channel_b:
        held = merged.get(row[0])
        if held is None or row[1] > held[1]:
            merged[row[0]] = row
    return sorted(merged.values(), key=lambda r: (-r[1], r[0]))


# --- chunk partition checker ---------------------------------------------------


def check_chunking(plan: list[str], executed: int, chunks) -> list[str]:
    """Return a list of violated properties (empty when all hold)."""
    problems = []
    flat = [step for chunk in chunks for step in chunk.steps]
    if flat != plan[:executed]:
        problems.append("chunk steps do not partition the executed prefix")
    for i, chunk in enumerate(chunks):
        is_final = i == len(chunks) - 1
        for j, step in enumerate(chunk.steps):
            is_last_step = j == len(chunk.steps) - 1
            matches = "open gripper" in step.lower()
            if not is_final and is_last_step and not matches:
                problems.append(f"non-final chunk {i} does not end with an open-gripper step")
            if matches and not is_last_step:
                problems.append(f"chunk {i} has an interior open-gripper step")
        if chunk.trailing_steps and not is_final:
            problems.append(f"non-final chunk {i} carries trailing steps")
    trailing = [step for chunk in chunks for step in chunk.trailing_steps]
    if trailing != plan[executed:]:
        problems.append("trailing steps do not equal the unexecuted suffix")
    prev_last = -1
    for chunk in chunks:
        if chunk.frame_range is None:
            continue
        first, last = chunk.frame_range
        if first <= prev_last:
            problems.append(f"chunk {chunk.chunk_index} frame range overlaps its predecessor")
        if first > last:
            problems.append(f"chunk {chunk.chunk_index} frame range is inverted")
        prev_last = last
    return problems
