"""Deterministic numerics: matrices, stable softmax, seeded RNG.

Matrices are plain 2-D C-contiguous ``float64`` numpy arrays. The helpers
here pin down the two properties the rest of the package relies on:
reproducibility (same seed, same bits, every run) and numerical stability
of the logit-to-probability map.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1

# multiplicative constants of the splitmix64 output mix
_SM_GAMMA = 0x9E3779B97F4A7C15
_SM_MUL1 = 0xBF58476D1CE4E5B9
_SM_MUL2 = 0x94D049BB133111EB

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once; returns (new_state, output)."""
    state = (state + _SM_GAMMA) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * _SM_MUL1) & _MASK64
    z = ((z ^ (z >> 27)) * _SM_MUL2) & _MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed: int, tag: str) -> int:
    """Fold a purpose tag into a seed, yielding an independent sub-seed.

    The fold is: FNV-1a hash of the tag bytes, XORed into the seed, then one
    splitmix64 step. Documented so that runs are reproducible from a single
    top-level seed.
    """
    h = _FNV_OFFSET
    for byte in tag.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    _, out = _splitmix64((seed & _MASK64) ^ h)
    return out


class Rng:
    """splitmix64 generator: tiny, seedable, identical on every platform."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state, out = _splitmix64(self._state)
        return out

    def next_uniform(self) -> float:
        """Uniform draw in [0, 1) with 53 bits of entropy."""
        return (self.next_u64() >> 11) / 9007199254740992.0  # 2**53

    def next_below(self, bound: int) -> int:
        """Uniform integer in [0, bound) via the multiply-shift reduction."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return (self.next_u64() * bound) >> 64

    def next_gaussian(self) -> float:
        # Box-Muller, cosine branch only; u1 shifted into (0, 1] so log is safe
        u1 = ((self.next_u64() >> 11) + 1) / 9007199254740992.0
        u2 = self.next_uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def uniform_array(self, shape: tuple[int, ...]) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        out = np.array([self.next_uniform() for _ in range(n)], dtype=np.float64)
        return out.reshape(shape)

    def gaussian_array(self, shape: tuple[int, ...]) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        out = np.array([self.next_gaussian() for _ in range(n)], dtype=np.float64)
        return out.reshape(shape)


def rng_shuffle(rng: Rng, n: int) -> np.ndarray:
    """Fisher-Yates permutation of 0..n-1, driven by ``rng``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    perm = np.arange(n, dtype=np.int64)
    for i in range(n - 1, 0, -1):
        j = rng.next_below(i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Validate and return ``x`` as a 2-D float64 array with finite entries."""
    m = np.ascontiguousarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction.

    Rows of the output are nonnegative and sum to 1 within 1e-12; the shift
    makes arbitrarily large logits safe (no overflow).
    """
    z = as_matrix(logits, "logits")
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with a pinned left-to-right accumulation order.

    Accumulates rank-1 terms over the shared index k in increasing order,
    which makes the result bit-identical to a naive triple loop. Intended
    for small matrices where the reproducibility contract matters more
    than raw speed.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"shape mismatch: {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out
