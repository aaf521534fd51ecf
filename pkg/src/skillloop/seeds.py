"""Deterministic seed derivation and the splitmix64 generator.

Every stochastic draw in the package flows through splitmix64 so that runs
are bit-reproducible across platforms (and re-implementable from the
documented constants alone). Seed namespaces keep training and evaluation
draws disjoint.
"""

from __future__ import annotations

import hashlib

MASK64 = (1 << 64) - 1

_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def splitmix64(state: int) -> int:
    """One splitmix64 output for a 64-bit state (Steele/Lea/Flood constants)."""
    z = (state + _GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def unit_draw(seed: int) -> float:
    """Map a seed to [0, 1) using the top 53 bits of splitmix64(seed)."""
    return (splitmix64(seed & MASK64) >> 11) * 2.0 ** -53


def mix_seeds(a: int, b: int) -> int:
    """Combine two 64-bit seeds into one (order-sensitive)."""
    return splitmix64(a & MASK64) ^ (b & MASK64)


def derive_seed(*parts: str | int) -> int:
    """Stable 64-bit seed from a namespace path.

    sha256 over the parts joined with an unambiguous separator; first 8 bytes
    big-endian. Using a cryptographic hash keeps this independent of Python's
    randomized str hash.
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
