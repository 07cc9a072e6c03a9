"""Bit-packed linear algebra over GF(2).

Layout (fixed for the whole package): a vector of length ``n`` is a single
Python ``int`` whose bit ``j`` holds coordinate ``j``; a matrix is a tuple of
such ints, one per row, so ``rows[i] >> j & 1`` is entry ``(i, j)``. Python
ints are unbounded, so the effective word size is the row length itself.
Everything else in the package goes through the functions below and never
touches the packing directly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes do not fit the operation."""


def _mask(n: int) -> int:
    return (1 << n) - 1


def parity(word: int) -> int:
    return bin(word).count("1") & 1


@dataclass(frozen=True)
class GF2Vector:
    word: int
    length: int

    def __post_init__(self):
        if self.length < 1:
            raise DimensionError("vector length must be >= 1")
        if self.word < 0 or self.word >> self.length:
            raise ValueError("word has bits outside the vector length")

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "GF2Vector":
        word = 0
        for j, bit in enumerate(bits):
            if bit not in (0, 1):
                raise ValueError(f"entry {bit!r} is not a bit")
            word |= bit << j
        return cls(word, len(bits))

    @property
    def bits(self) -> tuple[int, ...]:
        return tuple((self.word >> j) & 1 for j in range(self.length))

    def __add__(self, other: "GF2Vector") -> "GF2Vector":
        _same_length(self, other)
        return GF2Vector(self.word ^ other.word, self.length)

    def __str__(self):
        return "".join(str(b) for b in self.bits)


def _same_length(u: GF2Vector, v: GF2Vector):
    if u.length != v.length:
        raise DimensionError(f"lengths differ: {u.length} vs {v.length}")


def dot(u: GF2Vector, v: GF2Vector) -> int:
    """Inner product mod 2."""
    _same_length(u, v)
    return parity(u.word & v.word)


@dataclass(frozen=True)
class GF2Matrix:
    rows: tuple[int, ...]
    ncols: int

    def __post_init__(self):
        if self.ncols < 0:
            raise DimensionError("negative column count")
        full = _mask(self.ncols)
        for r in self.rows:
            if r < 0 or r & ~full:
                raise ValueError("row has bits outside the column count")

    @property
    def nrows(self) -> int:
        return len(self.rows)

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.rows), self.ncols)

    @classmethod
    def from_lists(cls, entries: Sequence[Sequence[int]]) -> "GF2Matrix":
        if not entries:
            raise DimensionError("need at least one row; use zeros() for empty shapes")
        ncols = len(entries[0])
        rows = []
        for row in entries:
            if len(row) != ncols:
                raise DimensionError("ragged rows")
            rows.append(GF2Vector.from_bits(row).word if ncols else 0)
        return cls(tuple(rows), ncols)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "GF2Matrix":
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise DimensionError("expected a 2-d array")
        return cls.from_lists((arr.astype(np.int64) % 2).tolist())

    def to_array(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.uint8)
        for i, r in enumerate(self.rows):
            for j in range(self.ncols):
                out[i, j] = (r >> j) & 1
        return out

    def to_lists(self) -> list[list[int]]:
        return self.to_array().tolist()

    def __getitem__(self, ij: tuple[int, int]) -> int:
        i, j = ij
        if not (0 <= j < self.ncols):
            raise IndexError(j)
        return (self.rows[i] >> j) & 1

    def row(self, i: int) -> GF2Vector:
        return GF2Vector(self.rows[i], self.ncols)

    def column(self, j: int) -> GF2Vector:
        return GF2Vector(sum(((r >> j) & 1) << i for i, r in enumerate(self.rows)), self.nrows)

    def __add__(self, other: "GF2Matrix") -> "GF2Matrix":
        if self.shape != other.shape:
            raise DimensionError(f"shapes differ: {self.shape} vs {other.shape}")
        return GF2Matrix(tuple(a ^ b for a, b in zip(self.rows, other.rows)), self.ncols)

    __sub__ = __add__

    def __matmul__(self, other: "GF2Matrix") -> "GF2Matrix":
        return mul(self, other)

    def transpose(self) -> "GF2Matrix":
        return GF2Matrix(tuple(self.column(j).word for j in range(self.ncols)), self.nrows)

    def apply(self, v: GF2Vector) -> GF2Vector:
        """Matrix-vector product ``self @ v``."""
        if v.length != self.ncols:
            raise DimensionError("vector length does not match column count")
        return GF2Vector(sum(parity(r & v.word) << i for i, r in enumerate(self.rows)), self.nrows)

    def is_zero(self) -> bool:
        return not any(self.rows)

    def __str__(self):
        return "\n".join(str(GF2Vector(r, self.ncols)) if self.ncols else "" for r in self.rows)


def identity(n: int) -> GF2Matrix:
    return GF2Matrix(tuple(1 << i for i in range(n)), n)


def zeros(nrows: int, ncols: int) -> GF2Matrix:
    return GF2Matrix((0,) * nrows, ncols)


def mul(a: GF2Matrix, b: GF2Matrix) -> GF2Matrix:
    """Product over GF(2): row i of the result is the XOR of the rows of
    ``b`` selected by the bits of row i of ``a``."""
    if a.ncols != b.nrows:
        raise DimensionError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    out = []
    for r in a.rows:
        acc = 0
        k = 0
        while r:
            if r & 1:
                acc ^= b.rows[k]
            r >>= 1
            k += 1
        out.append(acc)
    return GF2Matrix(tuple(out), b.ncols)


def _eliminate(rows: list[int], ncols: int) -> tuple[list[int], list[int]]:
    """Reduced row echelon form in place; returns (rows, pivot columns)."""
    pivots = []
    r = 0
    for col in range(ncols):
        bit = 1 << col
        pivot = next((i for i in range(r, len(rows)) if rows[i] & bit), None)
        if pivot is None:
            continue
        rows[r], rows[pivot] = rows[pivot], rows[r]
        for i in range(len(rows)):
            if i != r and rows[i] & bit:
                rows[i] ^= rows[r]
        pivots.append(col)
        r += 1
        if r == len(rows):
            break
    return rows, pivots


def rank(m: GF2Matrix) -> int:
    return len(_eliminate(list(m.rows), m.ncols)[1])


def rref(m: GF2Matrix) -> tuple[GF2Matrix, tuple[int, ...]]:
    rows, pivots = _eliminate(list(m.rows), m.ncols)
    return GF2Matrix(tuple(rows), m.ncols), tuple(pivots)


def invert(m: GF2Matrix) -> Optional[GF2Matrix]:
    """Inverse of a square matrix, or ``None`` when it is singular.

    Singularity is an expected outcome for callers (block elimination branches
    on it), so it is returned rather than raised.
    """
    n = m.nrows
    if m.ncols != n:
        raise DimensionError(f"cannot invert a {m.shape} matrix")
    # augment as [m | I] with the identity in bits n..2n-1
    rows = [r | (1 << (n + i)) for i, r in enumerate(m.rows)]
    for col in range(n):
        bit = 1 << col
        pivot = next((i for i in range(col, n) if rows[i] & bit), None)
        if pivot is None:
            return None
        rows[col], rows[pivot] = rows[pivot], rows[col]
        for i in range(n):
            if i != col and rows[i] & bit:
                rows[i] ^= rows[col]
    return GF2Matrix(tuple(r >> n for r in rows), n)


def solve(m: GF2Matrix, b: GF2Vector) -> Optional[GF2Vector]:
    """Unique solution of ``m x = b`` for square invertible ``m``; ``None`` otherwise."""
    if b.length != m.nrows:
        raise DimensionError("right-hand side length does not match row count")
    inv = invert(m)
    if inv is None:
        return None
    return inv.apply(b)


def solve_system(rows: Iterable[int], rhs: Iterable[int], n: int) -> Optional[int]:
    """Solve ``<a_i, x> = b_i`` for x in {0,1}^n given packed rows ``a_i``.

    Returns the packed solution when the system has full column rank and is
    consistent, else ``None``. The number of equations may exceed ``n``.
    """
    aug = [a | (b << n) for a, b in zip(rows, rhs)]
    aug, pivots = _eliminate(aug, n + 1)
    if len(pivots) > n or n in pivots:
        return None  # inconsistent: a pivot landed in the rhs column
    if len(pivots) < n:
        return None
    x = 0
    for r, col in zip(aug, pivots):
        x |= ((r >> n) & 1) << col
    return x


def random_matrix(rng: np.random.Generator, nrows: int, ncols: int) -> GF2Matrix:
    if ncols == 0:
        return zeros(nrows, 0)
    words = rng.integers(0, 1 << ncols, size=nrows, dtype=np.uint64) if ncols < 64 else None
    if words is None:
        bits = rng.integers(0, 2, size=(nrows, ncols))
        return GF2Matrix.from_array(bits)
    return GF2Matrix(tuple(int(w) for w in words), ncols)


def invertible_fraction(d: int) -> float:
    """Probability that a uniform d x d matrix over GF(2) is invertible."""
    out = 1.0
    for i in range(1, d + 1):
        out *= 1.0 - 2.0 ** (-i)
    return out
