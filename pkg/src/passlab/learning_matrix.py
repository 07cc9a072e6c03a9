"""Learning matrices M in {-1,+1}^{A x X} and expectation-normalised norms.

Samples and concepts are addressed by index. For parity and random kinds the
index of a concept is its packed bit string (see ``gf2``); for sparse parity
the concept index points into ``concepts``, the weight-l strings listed in
lexicographic order of their bit strings ``x_0 x_1 ... x_{n-1}``.

Norms follow the expectation convention over a uniform x:
``||f||_p = (E f(x)^p)^(1/p)`` and ``<f, g> = E f(x) g(x)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .gf2 import parity

KINDS = ("parity", "sparse_parity", "random", "explicit")


def make_rng(seed) -> np.random.Generator:
    """The package-wide PRNG: numpy's counter-based Philox bit generator."""
    return np.random.Generator(np.random.Philox(seed))


PRNG_ID = "numpy.Philox4x64-10"


def _weight_strings(n: int, weight: int) -> np.ndarray:
    # lexicographic over the string x_0 x_1 ... x_{n-1}, with '0' < '1'
    strings = sorted(
        "".join("1" if j in ones else "0" for j in range(n))
        for ones in itertools.combinations(range(n), weight)
    )
    return np.array([sum(1 << j for j, ch in enumerate(s) if ch == "1") for s in strings], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class LearningMatrix:
    n_x: int
    n_a: int
    kind: str
    param: Optional[int] = None  # weight for sparse_parity, seed for random
    explicit: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.n_x < 0 or self.n_a < 0:
            raise ValueError("bit lengths must be non-negative")
        if self.kind in ("parity", "sparse_parity") and self.n_a != self.n_x:
            raise ValueError("parity kinds need n_a == n_x")
        if self.kind == "sparse_parity" and not (0 <= (self.param or 0) <= self.n_x):
            raise ValueError("sparse weight out of range")
        if self.kind == "explicit":
            t = np.asarray(self.explicit)
            if t.shape != (1 << self.n_a, 1 << self.n_x):
                raise ValueError(f"explicit table must have shape {(1 << self.n_a, 1 << self.n_x)}")
            if not np.all(np.isin(t, (-1, 1))):
                raise ValueError("entries must be +1 or -1")
            object.__setattr__(self, "explicit", t.astype(np.int8))

    # constructors
    @classmethod
    def parity(cls, n: int) -> "LearningMatrix":
        return cls(n, n, "parity")

    @classmethod
    def sparse_parity(cls, n: int, weight: int) -> "LearningMatrix":
        return cls(n, n, "sparse_parity", weight)

    @classmethod
    def random(cls, n_x: int, n_a: int, seed: int) -> "LearningMatrix":
        return cls(n_x, n_a, "random", seed)

    @classmethod
    def from_table(cls, table) -> "LearningMatrix":
        t = np.asarray(table)
        na, nx = t.shape
        if na & (na - 1) or nx & (nx - 1):
            raise ValueError("table dimensions must be powers of two")
        return cls(nx.bit_length() - 1, na.bit_length() - 1, "explicit", None, t)

    @property
    def num_a(self) -> int:
        return 1 << self.n_a

    @property
    def num_x(self) -> int:
        return len(self.concepts) if self.kind == "sparse_parity" else 1 << self.n_x

    @cached_property
    def concepts(self) -> np.ndarray:
        """Bit string (packed) of each concept index."""
        if self.kind == "sparse_parity":
            return _weight_strings(self.n_x, self.param)
        return np.arange(1 << self.n_x, dtype=np.int64)

    @property
    def tag(self) -> str:
        if self.kind in ("sparse_parity", "random"):
            return f"{self.kind}({self.param})"
        return self.kind

    def entry(self, a: int, x: int) -> int:
        if not (0 <= a < self.num_a):
            raise IndexError(f"sample index {a} out of range")
        if not (0 <= x < self.num_x):
            raise IndexError(f"concept index {x} out of range")
        if self.kind in ("parity", "sparse_parity"):
            return -1 if parity(a & int(self.concepts[x])) else 1
        return int(self.table[a, x])

    @cached_property
    def table(self) -> np.ndarray:
        """Full sign table, shape (|A|, |X|), dtype int8."""
        if self.kind == "explicit":
            return self.explicit
        if self.kind == "random":
            bits = make_rng(self.param).integers(0, 2, size=(self.num_a, self.num_x), dtype=np.int8)
            return (1 - 2 * bits).astype(np.int8)
        a = np.arange(self.num_a, dtype=np.int64)[:, None]
        w = a & self.concepts[None, :]
        par = np.zeros(w.shape, dtype=np.int64)
        while np.any(w):
            par ^= w & 1
            w = w >> 1
        return (1 - 2 * par).astype(np.int8)

    @cached_property
    def label_bits(self) -> np.ndarray:
        """0 where M(a,x) = +1 and 1 where M(a,x) = -1; the edge-label index."""
        return (self.table < 0).astype(np.int8)

    def row(self, a: int) -> np.ndarray:
        return self.table[a].astype(np.int64)

    def __eq__(self, other):
        if not isinstance(other, LearningMatrix):
            return NotImplemented
        return (self.n_x, self.n_a) == (other.n_x, other.n_a) and np.array_equal(self.table, other.table)

    __hash__ = None


# ---------------------------------------------------------------- norms

def _is_exact(f) -> bool:
    return any(isinstance(v, Fraction) for v in f)


def moment(f, p: int):
    """E f^p; exact when ``f`` holds Fractions or ints and p is an int."""
    if isinstance(f, np.ndarray) and f.dtype.kind == "f":
        return float(np.mean(f.astype(float) ** p))
    vals = list(f)
    return Fraction(sum(Fraction(v) ** p for v in vals), len(vals))


def lp_norm(f, p: Union[float, int] = 2):
    """Expectation-normalised p-norm. ``p = float('inf')`` gives the max.

    Exact inputs (ints or Fractions) give a Fraction for p in {1, inf};
    other p fall back to float.
    """
    if p == float("inf"):
        vals = list(f)
        return max(abs(Fraction(v)) for v in vals) if _is_exact(vals) else float(np.max(np.abs(np.asarray(f, float))))
    if p < 1:
        raise ValueError("p must be >= 1")
    if p == 1 and not (isinstance(f, np.ndarray) and f.dtype.kind == "f"):
        vals = list(f)
        return Fraction(sum(abs(Fraction(v)) for v in vals), len(vals))
    arr = np.abs(np.asarray([float(v) for v in f]))
    return float(np.mean(arr ** p) ** (1.0 / p))


def inner(f, g):
    """<f, g> = E f g. Exact when both sides are exact."""
    if len(f) != len(g):
        raise ValueError("functions live on different domains")
    if isinstance(f, np.ndarray) and f.dtype.kind == "f" or isinstance(g, np.ndarray) and g.dtype.kind == "f":
        return float(np.mean(np.asarray(f, float) * np.asarray(g, float)))
    return Fraction(sum(Fraction(a) * Fraction(b) for a, b in zip(f, g)), len(f))


def truncate_above(f, bound):
    """f^{>B}: keep values strictly above ``bound``, zero elsewhere."""
    if bound <= 0:
        raise ValueError("bound must be positive")
    if isinstance(f, np.ndarray):
        return np.where(f > bound, f, 0 * f)
    return [v if v > bound else 0 * v for v in f]


# ---------------------------------------------------------------- file format

def store(m: LearningMatrix, path: Union[str, Path]) -> None:
    lines = [f"L2MAT v1 n_a={m.n_a} n_x={m.n_x} kind={m.tag}"]
    if m.kind == "explicit":
        lines += ["".join("+" if s > 0 else "-" for s in row) for row in m.table]
    Path(path).write_text("\n".join(lines) + "\n")


def parse(text: str) -> LearningMatrix:
    lines = text.splitlines()
    if not lines:
        raise ValueError("empty matrix file")
    head = lines[0].split()
    if head[:2] != ["L2MAT", "v1"]:
        raise ValueError("not an L2MAT v1 file")
    fields = dict(tok.split("=", 1) for tok in head[2:])
    n_a, n_x, tag = int(fields["n_a"]), int(fields["n_x"]), fields["kind"]
    if tag == "parity":
        return LearningMatrix(n_x, n_a, "parity")
    if tag.startswith(("sparse_parity(", "random(")) and tag.endswith(")"):
        kind, arg = tag[:-1].split("(")
        return LearningMatrix(n_x, n_a, kind, int(arg))
    if tag == "explicit":
        rows = [ln.strip() for ln in lines[1:] if ln.strip()]
        if len(rows) != 1 << n_a or any(len(r) != 1 << n_x or set(r) - {"+", "-"} for r in rows):
            raise ValueError("malformed explicit table")
        t = np.array([[1 if ch == "+" else -1 for ch in r] for r in rows], dtype=np.int8)
        return LearningMatrix(n_x, n_a, "explicit", None, t)
    raise ValueError(f"unknown kind tag {tag!r}")


def load(path: Union[str, Path]) -> LearningMatrix:
    return parse(Path(path).read_text())


def resolve(spec: str) -> LearningMatrix:
    """A file path, or a builtin such as ``parity:3``, ``sparse_parity:4:2``,
    ``random:3:3:17`` (n_x, n_a, seed) or ``ones:2``."""
    if Path(spec).is_file():
        return load(spec)
    name, *args = spec.split(":")
    nums = [int(a) for a in args]
    if name == "parity" and len(nums) == 1:
        return LearningMatrix.parity(nums[0])
    if name == "sparse_parity" and len(nums) == 2:
        return LearningMatrix.sparse_parity(*nums)
    if name == "random" and len(nums) == 3:
        return LearningMatrix.random(*nums)
    if name == "ones" and len(nums) == 1:
        size = 1 << nums[0]
        return LearningMatrix.from_table(np.ones((size, size), dtype=np.int8))
    raise ValueError(f"cannot resolve matrix {spec!r}")


def as_values(f: Sequence) -> list:
    return [Fraction(v) for v in f]
