"""Seeded sample streams replayed identically on every pass."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..learning_matrix import PRNG_ID, LearningMatrix, make_rng


@dataclass(frozen=True)
class SampleStream:
    seed: Optional[int]
    matrix: str  # matrix tag
    x: int
    a: np.ndarray  # sample indices
    b: np.ndarray  # labels M(a_t, x) in {+1, -1}

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.int64)
        b = np.asarray(self.b, dtype=np.int64)
        if a.shape != b.shape or a.ndim != 1:
            raise ValueError("a and b must be 1-d and of equal length")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def __len__(self) -> int:
        return len(self.a)

    def pairs(self):
        return list(zip(self.a.tolist(), self.b.tolist()))

    def check(self, m: LearningMatrix) -> bool:
        return bool(np.array_equal(m.table[self.a, self.x].astype(np.int64), self.b))


def generate_stream(m: LearningMatrix, x: Optional[int], T: int, seed) -> SampleStream:
    """x uniform (when not given) then T uniform samples, all from one Philox stream."""
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = make_rng(seed)
    if x is None:
        x = int(rng.integers(0, m.num_x))
    elif not 0 <= x < m.num_x:
        raise ValueError("concept index out of range")
    a = rng.integers(0, m.num_a, size=T, dtype=np.int64)
    b = m.table[a, x].astype(np.int64)
    s = SampleStream(seed, m.tag, int(x), a, b)
    if not s.check(m):
        raise AssertionError("labels disagree with the concept")
    return s


def from_pairs(m: LearningMatrix, x: int, pairs) -> SampleStream:
    """Explicit stream; labels are taken as given (adversarial streams allowed)."""
    a = np.array([p[0] for p in pairs], dtype=np.int64)
    b = np.array([p[1] for p in pairs], dtype=np.int64)
    return SampleStream(None, m.tag, int(x), a, b)


__all__ = ["PRNG_ID", "SampleStream", "generate_stream", "from_pairs"]
