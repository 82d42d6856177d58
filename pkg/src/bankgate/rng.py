"""Seeded, splittable pseudo-randomness shared by the simulation and the engine.

Everything that needs reproducible randomness (template generation, noisy
captures, session/challenge tokens, enrollment salts) draws from a SplitMix64
stream.  SplitMix64 was chosen over a stdlib generator because it is trivial
to reimplement bit-exactly in other languages (the browser portal reproduces
templates client-side), and because its n-th output is a closed-form function
of the seed, which lets the error-rate evaluator vectorise draws without
changing a single bit of the stream.

Stream derivation rule (the one rule used everywhere): a purpose-specific
stream seed is ``base_seed XOR fnv1a64(label)`` where ``label`` is a short
ASCII tag such as ``"face"`` or ``"fp:<device_id>"``.
"""

from __future__ import annotations

import secrets

MASK64 = (1 << 64) - 1

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: str | bytes) -> int:
    """64-bit FNV-1a hash, used only to fold labels into stream seeds."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & MASK64
    return h


def derive_seed(base_seed: int, label: str) -> int:
    """Derive the seed of a purpose-specific stream from a base seed."""
    return (base_seed ^ fnv1a64(label)) & MASK64


def mix64(state: int) -> int:
    """SplitMix64 output function for a given internal state."""
    z = state & MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """Sequential SplitMix64 generator.

    Output n (1-based) equals ``mix64(seed + n * GOLDEN)``; consumers that
    need bulk draws may compute outputs positionally instead of stepping.
    """

    def __init__(self, seed: int) -> None:
        self._state = seed & MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & MASK64
        return mix64(self._state)

    def next_bytes(self, n: int) -> bytes:
        out = bytearray()
        while len(out) < n:
            out += self.next_u64().to_bytes(8, "big")
        return bytes(out[:n])


def splitmix64_output(seed: int, index: int) -> int:
    """The index-th (1-based) output of ``SplitMix64(seed)``."""
    return mix64((seed + index * _GOLDEN) & MASK64)


class TokenSource:
    """Produces 128-bit opaque tokens for session ids and challenges.

    With a run seed the stream is deterministic, which keeps knowledge-base
    contents reproducible across runs; without one, tokens come from the OS
    CSPRNG.
    """

    def __init__(self, run_seed: int | None = None) -> None:
        self._gen = SplitMix64(derive_seed(run_seed, "tokens")) if run_seed is not None else None

    def new_token(self) -> str:
        if self._gen is None:
            return secrets.token_hex(16)
        return f"{self._gen.next_u64():016x}{self._gen.next_u64():016x}"
