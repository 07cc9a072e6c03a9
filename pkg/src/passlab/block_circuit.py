"""Block circuits over GF(2) and their evaluation as multi-pass streaming programs.

A block is an s x s matrix over GF(2) packed into an int: row r occupies bits
``r*s .. r*s + s - 1`` and column c of that row is bit ``r*s + c``. Wires carry
a block; gate outputs add a one-bit singular tag and cost ``c + 1`` bits.

The streaming evaluator follows the recursion that turns a depth-d,
fan-in-4 circuit with m outputs into an ``m 4^d`` pass program: a gate
evaluates its children one after another, keeping the finished ones, and
every leaf costs one full pass over the stream. Nothing is memoized, so the
pass count equals the number of root-to-leaf paths.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .gf2 import DimensionError, GF2Matrix, invert

MAX_FAN_IN = 4


class StreamOrderError(AssertionError):
    """A pass was started before the previous one read the whole stream."""


class AccountingError(AssertionError):
    """A reader or gate retained more bits than it is allowed to."""


class StreamUnderflow(ValueError):
    """The stream is shorter than the samples a reader needs."""


# ---------------------------------------------------------------- blocks

SINGULAR = None  # tagged value: a pivot block was not invertible


def block_from_array(arr) -> int:
    arr = np.asarray(arr, dtype=np.int64) & 1
    s = arr.shape[0]
    return int(sum(int(arr[r, c]) << (r * s + c) for r in range(s) for c in range(s)))


def block_to_array(blk: int, s: int) -> np.ndarray:
    out = np.zeros((s, s), dtype=np.uint8)
    for r in range(s):
        for c in range(s):
            out[r, c] = (blk >> (r * s + c)) & 1
    return out


def _rows(blk: int, s: int) -> list:
    mask = (1 << s) - 1
    return [(blk >> (r * s)) & mask for r in range(s)]


def _pack(rows: Sequence[int], s: int) -> int:
    out = 0
    for r, w in enumerate(rows):
        out |= w << (r * s)
    return out


def block_mul(x: int, y: int, s: int) -> int:
    ry = _rows(y, s)
    out = []
    for w in _rows(x, s):
        acc = 0
        c = 0
        while w:
            if w & 1:
                acc ^= ry[c]
            w >>= 1
            c += 1
        out.append(acc)
    return _pack(out, s)


@lru_cache(maxsize=1 << 17)
def block_inv(x: int, s: int) -> Optional[int]:
    inv = invert(GF2Matrix(tuple(_rows(x, s)), s))
    return None if inv is None else _pack(inv.rows, s)


# ---------------------------------------------------------------- circuits

@dataclass(frozen=True)
class Ref:
    kind: str  # "leaf" or "gate"
    index: int


@dataclass
class Gate:
    children: tuple  # of Ref
    func: Callable  # (list of block values) -> block value
    label: str = ""


@dataclass
class BlockCircuit:
    capacity: int  # c bits per wire (payload)
    leaves: list  # leaf labels handed to the leaf reader
    gates: list  # Gate, children refer only to earlier gates
    outputs: list  # Ref
    depth: int
    tag_bits: int = 1

    def __post_init__(self):
        self.validate()

    @property
    def n_inputs(self) -> int:
        return len(self.leaves)

    @property
    def n_outputs(self) -> int:
        return len(self.outputs)

    @property
    def wire_bits(self) -> int:
        return self.capacity + self.tag_bits

    def gate_depths(self) -> list:
        depth = []
        for gi, g in enumerate(self.gates):
            ds = []
            for ch in g.children:
                if ch.kind == "gate":
                    if not 0 <= ch.index < gi:
                        raise ValueError(f"gate {gi} refers to gate {ch.index}: not acyclic in list order")
                    ds.append(depth[ch.index])
                elif ch.kind == "leaf":
                    if not 0 <= ch.index < len(self.leaves):
                        raise ValueError(f"gate {gi} refers to missing leaf {ch.index}")
                    ds.append(0)
                else:
                    raise ValueError(f"unknown reference kind {ch.kind!r}")
            depth.append(1 + max(ds, default=0))
        return depth

    def computed_depth(self) -> int:
        depth = self.gate_depths()
        return max((depth[o.index] if o.kind == "gate" else 0 for o in self.outputs), default=0)

    def validate(self):
        for gi, g in enumerate(self.gates):
            if not 1 <= len(g.children) <= MAX_FAN_IN:
                raise ValueError(f"gate {gi} has fan-in {len(g.children)}")
        if self.computed_depth() != self.depth:
            raise ValueError(f"declared depth {self.depth} != computed depth {self.computed_depth()}")

    def evaluate_direct(self, leaf_values: Sequence) -> list:
        """Reference evaluation with memoization and no stream."""
        vals = []
        for g in self.gates:
            vals.append(g.func([leaf_values[c.index] if c.kind == "leaf" else vals[c.index] for c in g.children]))
        return [leaf_values[o.index] if o.kind == "leaf" else vals[o.index] for o in self.outputs]


# ---------------------------------------------------------------- stream and meter

@dataclass
class ResourceMeter:
    passes_used: int = 0
    peak_live_bits: int = 0
    samples_touched: int = 0
    live_bits: int = 0

    def hold(self, bits: int):
        self.live_bits += bits
        self.peak_live_bits = max(self.peak_live_bits, self.live_bits)

    def release(self, bits: int):
        if bits > self.live_bits:
            raise AccountingError("released more bits than are held")
        self.live_bits -= bits

    def touch(self, upto: int):
        self.samples_touched = max(self.samples_touched, upto)

    def to_dict(self) -> dict:
        return {"passes_used": self.passes_used, "peak_live_bits": self.peak_live_bits,
                "samples_touched": self.samples_touched}


class StreamCursor:
    """Replayable stream of (a_t, b_t). Every pass reads all of it in order."""

    def __init__(self, a, b, meter: Optional[ResourceMeter] = None):
        self._a = np.asarray(a, dtype=np.int64)
        self._b = np.asarray(b, dtype=np.int64)
        if self._a.shape != self._b.shape or self._a.ndim != 1:
            raise ValueError("a and b must be 1-d arrays of equal length")
        self._a.setflags(write=False)
        self._b.setflags(write=False)
        self.meter = meter if meter is not None else ResourceMeter()
        self.position = 0
        self._open = False

    @classmethod
    def of(cls, stream, meter: Optional[ResourceMeter] = None) -> "StreamCursor":
        return cls(stream.a, stream.b, meter)

    def __len__(self) -> int:
        return len(self._a)

    @property
    def passes_consumed(self) -> int:
        return self.meter.passes_used

    def _begin(self):
        if self._open:
            raise StreamOrderError(f"new pass started at position {self.position} of {len(self)}")
        self._open = True
        self.position = 0

    def _end(self):
        self._open = False
        self.position = len(self)
        self.meter.passes_used += 1

    def scan(self):
        """Yield (t, a_t, b_t) in order; the pass counts once fully read."""
        self._begin()
        for t in range(len(self)):
            self.position = t
            yield t, int(self._a[t]), int(self._b[t])
        self._end()

    def full_pass(self):
        """One complete pass handed over as read-only arrays."""
        self._begin()
        self._end()
        return self._a, self._b


LeafReader = Callable  # (leaf label, cursor) -> block


def leaf_reader_samples(m, n: int, K: int, offset: int = 0) -> LeafReader:
    """Leaf (j, k) of ``[A | b]`` for the n samples starting at ``offset``.

    Row t of A is a_{offset+t}; block (j, k) with k < K holds rows
    ``j*s .. j*s+s-1`` and columns ``k*s .. k*s+s-1`` (s = n/K). Block (j, K)
    carries the labels in its first column and zeros elsewhere. One pass, at
    most ``s*s`` live bits.
    """
    if K < 1 or n % K:
        raise DimensionError(f"K = {K} does not divide n = {n}")
    if m is not None and getattr(m, "kind", "parity") != "parity":
        raise ValueError("block elimination reads parity samples")
    s = n // K
    cap = s * s
    col_mask = (1 << s) - 1

    def read(label, cursor: StreamCursor) -> int:
        j, k = label
        lo = offset + j * s
        a_all, b_all = cursor.full_pass()
        if offset + n > len(a_all):
            raise StreamUnderflow(f"need samples up to {offset + n}, stream has {len(a_all)}")
        cursor.meter.hold(cap)
        rows = []
        for r in range(s):
            if k < K:
                rows.append((int(a_all[lo + r]) >> (k * s)) & col_mask)
            else:
                rows.append(1 if int(b_all[lo + r]) < 0 else 0)
        cursor.meter.touch(offset + n)
        cursor.meter.release(cap)
        return _pack(rows, s)

    read.capacity = cap
    return read


def eval_streaming(cir: BlockCircuit, leaf_reader: LeafReader, cursor: StreamCursor,
                   abort_on_singular: bool = False):
    """Evaluate every output by the pass-per-leaf recursion.

    Returns (output values, meter). With ``abort_on_singular`` a gate stops
    reading children once one is singular and evaluation stops at the first
    singular output; the returned list is then shorter than ``n_outputs``.
    """
    meter = cursor.meter
    cap = getattr(leaf_reader, "capacity", cir.capacity)
    if cap > cir.capacity:
        raise AccountingError(f"leaf reader keeps {cap} bits, wires carry {cir.capacity}")

    def bits(ref: Ref) -> int:
        # only gate outputs can be singular, so only they carry the tag
        return cir.capacity if ref.kind == "leaf" else cir.wire_bits

    def ev(ref: Ref):
        if ref.kind == "leaf":
            before = meter.passes_used
            val = leaf_reader(cir.leaves[ref.index], cursor)
            if meter.passes_used != before + 1:
                raise AccountingError("a leaf must be read in exactly one pass")
            return val
        g = cir.gates[ref.index]
        kids = []
        held = 0
        for ch in g.children:
            v = ev(ch)
            if abort_on_singular and v is SINGULAR:
                meter.release(held)
                return SINGULAR
            kids.append(v)
            meter.hold(bits(ch))
            held += bits(ch)
        # the finished children turn into the gate value in one transition
        meter.release(held)
        return g.func(kids)

    outs = []
    held = 0
    for o in cir.outputs:
        v = ev(o)
        outs.append(v)
        meter.hold(bits(o))
        held += bits(o)
        if abort_on_singular and v is SINGULAR:
            break
    meter.release(held)
    return outs, meter


# ---------------------------------------------------------------- builders

def full_tree(depth: int, capacity: int = 1, fan_in: int = MAX_FAN_IN) -> BlockCircuit:
    """Complete fan_in-ary tree of XOR gates over distinct leaves, one output."""
    leaves = []
    gates = []

    def build(d):
        if d == 0:
            leaves.append(len(leaves))
            return Ref("leaf", len(leaves) - 1)
        kids = tuple(build(d - 1) for _ in range(fan_in))
        gates.append(Gate(kids, _xor_all, f"xor@{d}"))
        return Ref("gate", len(gates) - 1)

    root = build(depth)
    return BlockCircuit(capacity, leaves, gates, [root], depth)


def _xor_all(vals):
    if any(v is SINGULAR for v in vals):
        return SINGULAR
    out = 0
    for v in vals:
        out ^= v
    return out


def build_ge_circuit(n: int, K: int) -> BlockCircuit:
    """Block Gauss-Jordan elimination on the K x (K+1) block view of [A | b].

    Step t pivots on block (t, t): the pivot row becomes
    ``inv(P) A_tk`` (fan-in 2) and every other row ``A_jk - A_jt inv(P) A_tk``
    (fan-in 4), for the columns k > t still in play. After K steps column K
    holds x, one block per output with the bits in its first column.
    """
    if K < 1 or n % K:
        raise DimensionError(f"K = {K} does not divide n = {n}")
    s = n // K
    leaves = [(j, k) for j in range(K) for k in range(K + 1)]
    cur = {(j, k): Ref("leaf", j * (K + 1) + k) for j in range(K) for k in range(K + 1)}
    gates = []

    def pivot_row(vals):
        p, x = vals
        if p is SINGULAR or x is SINGULAR:
            return SINGULAR
        inv = block_inv(p, s)
        return SINGULAR if inv is None else block_mul(inv, x, s)

    def eliminate(vals):
        y, f, p, x = vals
        if SINGULAR in (y, f, p, x):
            return SINGULAR
        inv = block_inv(p, s)
        if inv is None:
            return SINGULAR
        return y ^ block_mul(f, block_mul(inv, x, s), s)

    for t in range(K):
        nxt = {}
        for k in range(t + 1, K + 1):
            gates.append(Gate((cur[(t, t)], cur[(t, k)]), pivot_row, f"pivot[{t}]({t},{k})"))
            nxt[(t, k)] = Ref("gate", len(gates) - 1)
            for j in range(K):
                if j == t:
                    continue
                gates.append(Gate((cur[(j, k)], cur[(j, t)], cur[(t, t)], cur[(t, k)]), eliminate,
                                  f"elim[{t}]({j},{k})"))
                nxt[(j, k)] = Ref("gate", len(gates) - 1)
        cur = nxt
    outputs = [cur[(j, K)] for j in range(K)]
    return BlockCircuit(s * s, leaves, gates, outputs, K)


def solution_from_blocks(blocks: Sequence[int], n: int, K: int) -> int:
    """Pack x from the first column of each output block."""
    s = n // K
    x = 0
    for j, blk in enumerate(blocks):
        for r in range(s):
            x |= ((blk >> (r * s)) & 1) << (j * s + r)
    return x


def ge_blocks_direct(rows: Sequence[int], rhs_bits: Sequence[int], n: int, K: int):
    """Leaf values of [A | b] without a stream (for tests and fast statistics)."""
    s = n // K
    mask = (1 << s) - 1
    vals = []
    for j in range(K):
        for k in range(K + 1):
            if k < K:
                vals.append(_pack([(rows[j * s + r] >> (k * s)) & mask for r in range(s)], s))
            else:
                vals.append(_pack([rhs_bits[j * s + r] & 1 for r in range(s)], s))
    return vals


def pivots_invertible(rows: Sequence[int], n: int, K: int) -> bool:
    """Does block elimination on these n rows meet only invertible pivots?"""
    cir = _ge_cache(n, K)
    outs = cir.evaluate_direct(ge_blocks_direct(rows, [0] * n, n, K))
    return all(o is not SINGULAR for o in outs)


@lru_cache(maxsize=64)
def _ge_cache(n: int, K: int) -> BlockCircuit:
    return build_ge_circuit(n, K)


def bound_passes(cir: BlockCircuit) -> int:
    return cir.n_outputs * MAX_FAN_IN ** cir.depth


def bound_bits(cir: BlockCircuit) -> int:
    return 4 * cir.capacity * (cir.depth + cir.n_outputs)


def table_leaf_reader(values: Sequence, capacity: int) -> LeafReader:
    """Leaf reader returning fixed values, still spending one pass per leaf."""
    def read(label, cursor: StreamCursor):
        cursor.full_pass()
        cursor.meter.hold(capacity)
        cursor.meter.release(capacity)
        return values[label]

    read.capacity = capacity
    return read
