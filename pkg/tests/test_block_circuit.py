from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from passlab.block_circuit import (
    SINGULAR, AccountingError, BlockCircuit, Gate, Ref, StreamCursor, StreamOrderError, StreamUnderflow,
    block_from_array, block_inv, block_mul, block_to_array, bound_bits, bound_passes, build_ge_circuit,
    eval_streaming, full_tree, ge_blocks_direct, leaf_reader_samples, solution_from_blocks, table_leaf_reader,
)
from passlab.gf2 import solve_system
from passlab.learning_matrix import LearningMatrix, make_rng


def _labels(rows, x):
    return [1 - 2 * (bin(r & x).count("1") & 1) for r in rows]


def _eval_tree(depth, c):
    cir = full_tree(depth, capacity=c)
    cur = StreamCursor(np.zeros(3, dtype=np.int64), np.ones(3, dtype=np.int64))
    vals = list(range(1, len(cir.leaves) + 1))
    outs, meter = eval_streaming(cir, table_leaf_reader(vals, c), cur)
    return cir, outs, meter, vals


def test_single_leaf():
    cir, outs, meter, vals = _eval_tree(0, 5)
    assert outs == [1]
    assert meter.passes_used == 1
    assert meter.peak_live_bits <= 5


def test_depth_two_tree_passes():
    cir, outs, meter, vals = _eval_tree(2, 3)
    assert meter.passes_used == 16 == bound_passes(cir)
    assert outs == cir.evaluate_direct(vals)
    assert meter.peak_live_bits <= bound_bits(cir)


def test_two_outputs_depth_one():
    c = 4
    gates = [Gate(tuple(Ref("leaf", i) for i in range(4)), lambda v: v[0] ^ v[1] ^ v[2] ^ v[3]),
             Gate(tuple(Ref("leaf", i) for i in range(4, 8)), lambda v: v[0] & v[1] & v[2] & v[3])]
    cir = BlockCircuit(c, list(range(8)), gates, [Ref("gate", 0), Ref("gate", 1)], 1)
    vals = [1, 2, 4, 8, 15, 7, 7, 7]
    cur = StreamCursor([0, 1], [1, 1])
    outs, meter = eval_streaming(cir, table_leaf_reader(vals, c), cur)
    assert outs == [15, 7]
    assert meter.passes_used <= 8
    assert meter.peak_live_bits <= 4 * c * 3
    assert meter.live_bits == 0


@pytest.mark.parametrize("depth", [0, 1, 2, 3])
def test_tree_bounds(depth):
    cir, outs, meter, vals = _eval_tree(depth, 2)
    assert meter.passes_used == 4 ** depth
    assert meter.peak_live_bits <= bound_bits(cir)
    assert outs == cir.evaluate_direct(vals)


def test_fan_in_and_depth_validation():
    with pytest.raises(ValueError):
        BlockCircuit(1, list(range(5)), [Gate(tuple(Ref("leaf", i) for i in range(5)), sum)], [Ref("gate", 0)], 1)
    with pytest.raises(ValueError):
        BlockCircuit(1, [0], [Gate((Ref("leaf", 0),), sum)], [Ref("gate", 0)], 2)
    with pytest.raises(ValueError):
        BlockCircuit(1, [0], [Gate((Ref("gate", 0),), sum)], [Ref("gate", 0)], 1)


def test_reader_larger_than_wire():
    cir = full_tree(1, capacity=2)
    with pytest.raises(AccountingError):
        eval_streaming(cir, table_leaf_reader([0] * 4, 3), StreamCursor([0], [1]))


def test_stream_order():
    cur = StreamCursor([1, 2, 3], [1, -1, 1])
    it = cur.scan()
    next(it)
    with pytest.raises(StreamOrderError):
        cur.full_pass()
    cur2 = StreamCursor([1, 2, 3], [1, -1, 1])
    assert [t for t, _, _ in cur2.scan()] == [0, 1, 2]
    a, _ = cur2.full_pass()
    assert cur2.passes_consumed == 2
    with pytest.raises(ValueError):
        a[0] = 5


def test_block_arithmetic():
    rng = make_rng(1)
    for s in (1, 2, 3, 4):
        for _ in range(20):
            arr = rng.integers(0, 2, size=(s, s))
            blk = block_from_array(arr)
            assert np.array_equal(block_to_array(blk, s), arr)
            inv = block_inv(blk, s)
            ident = block_from_array(np.eye(s, dtype=int))
            if inv is None:
                assert round(abs(np.linalg.det(arr))) % 2 == 0 or np.linalg.matrix_rank(arr) < s
            else:
                assert block_mul(blk, inv, s) == ident == block_mul(inv, blk, s)


def test_ge_k1_full_elimination():
    rows = [0b0001, 0b0011, 0b0111, 0b1111]
    x = 0b1010
    vals = ge_blocks_direct(rows, [(1 - b) // 2 for b in _labels(rows, x)], 4, 1)
    out = build_ge_circuit(4, 1).evaluate_direct(vals)
    assert solution_from_blocks(out, 4, 1) == x


def test_ge_n4_k2_hand_instance():
    # identity-like rows keep every pivot block invertible
    rows = [0b0001, 0b0010, 0b0101, 0b1010]
    x = 0b0110
    a = np.array(rows)
    b = np.array(_labels(rows, x))
    cur = StreamCursor(a, b)
    cir = build_ge_circuit(4, 2)
    outs, meter = eval_streaming(cir, leaf_reader_samples(LearningMatrix.parity(4), 4, 2), cur)
    assert SINGULAR not in outs
    assert solution_from_blocks(outs, 4, 2) == x == solve_system(rows, [(1 - v) // 2 for v in b], 4)
    assert meter.passes_used <= bound_passes(cir)
    assert meter.peak_live_bits <= bound_bits(cir)


def test_singular_pivot_flag():
    rows = [0b0001, 0b0001, 0b0100, 0b1000]  # first pivot block has two equal rows
    b = [1, 1, 1, 1]
    cir = build_ge_circuit(4, 2)
    outs, _ = eval_streaming(cir, leaf_reader_samples(None, 4, 2), StreamCursor(rows, b))
    assert all(o is SINGULAR for o in outs)
    outs, meter = eval_streaming(cir, leaf_reader_samples(None, 4, 2), StreamCursor(rows, b), abort_on_singular=True)
    assert outs == [SINGULAR] and meter.live_bits == 0


def test_leaf_reader_blocks():
    n, K = 4, 2
    cur = StreamCursor([0b0001, 0b0010, 0b0100, 0b1000], [1, 1, 1, 1])
    read = leaf_reader_samples(None, n, K)
    assert read((0, 0), cur) == block_from_array(np.eye(2, dtype=int))
    assert read((1, 1), cur) == block_from_array(np.eye(2, dtype=int))
    assert read((0, 2), cur) == 0
    assert cur.passes_consumed == 3


def test_leaf_reader_tiles_back():
    rng = make_rng(5)
    n, K = 6, 3
    s = n // K
    a = rng.integers(0, 1 << n, size=2 * n)
    b = rng.choice([1, -1], size=2 * n)
    cur = StreamCursor(a, b)
    read = leaf_reader_samples(None, n, K, offset=n)
    full = np.zeros((n, n + 1), dtype=int)
    for j in range(K):
        for k in range(K + 1):
            blk = block_to_array(read((j, k), cur), s)
            if k < K:
                full[j * s:(j + 1) * s, k * s:(k + 1) * s] = blk
            else:
                full[j * s:(j + 1) * s, n] = blk[:, 0]
                assert not blk[:, 1:].any()
    for r in range(n):
        assert sum(int(full[r, c]) << c for c in range(n)) == a[n + r]
        assert full[r, n] == (1 if b[n + r] < 0 else 0)
    assert cur.meter.samples_touched == 2 * n


def test_leaf_reader_underflow():
    with pytest.raises(StreamUnderflow):
        leaf_reader_samples(None, 4, 2, offset=2)((0, 0), StreamCursor([1, 2, 3, 4], [1, 1, 1, 1]))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6), nk=st.sampled_from([(1, 1), (2, 1), (2, 2), (3, 1), (4, 1), (4, 2), (4, 4),
                                                         (6, 2), (8, 1), (8, 2), (8, 4)]))
def test_ge_matches_dense_solve(seed, nk):
    n, K = nk
    rng = make_rng(seed)
    x = int(rng.integers(0, 1 << n))
    rows = [int(r) for r in rng.integers(0, 1 << n, size=n)]
    b = _labels(rows, x)
    cir = build_ge_circuit(n, K)
    cur = StreamCursor(rows, b)
    outs, meter = eval_streaming(cir, leaf_reader_samples(None, n, K), cur)
    dense = solve_system(rows, [(1 - v) // 2 for v in b], n)
    if SINGULAR not in outs:
        assert solution_from_blocks(outs, n, K) == x == dense
    else:
        assert all(o is SINGULAR for o in outs) or K > 1
    assert meter.passes_used <= bound_passes(cir)
    assert meter.peak_live_bits <= bound_bits(cir)
    assert outs == cir.evaluate_direct(ge_blocks_direct(rows, [(1 - v) // 2 for v in b], n, K))
