from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from passlab.learning_matrix import (
    LearningMatrix, inner, load, lp_norm, parse, resolve, store, truncate_above,
)


def test_entry_examples():
    m = LearningMatrix.parity(2)
    assert all(m.entry(0, x) == 1 for x in range(4))
    assert m.entry(0b11, 0b11) == 1
    assert m.entry(0b01, 0b11) == -1


def test_entry_range():
    with pytest.raises(IndexError):
        LearningMatrix.parity(2).entry(4, 0)


def test_lp_norm_examples():
    assert lp_norm([1] * 8, 1) == 1
    assert lp_norm([1] * 8, float("inf")) == 1
    assert lp_norm(np.ones(8), 3) == pytest.approx(1)
    uniform = [Fraction(1, 8)] * 8
    assert lp_norm(uniform, 2) == pytest.approx(1 / 8)
    half = [1] * 4 + [0] * 4
    assert lp_norm(half, 1) == Fraction(1, 2)
    assert lp_norm(half, 2) == pytest.approx(2 ** -0.5)


def test_inner_examples():
    f = [Fraction(v) for v in (3, 0, 1, 2)]
    assert inner(f, f) == Fraction(sum(v * v for v in f), 4)
    assert inner([1] * 4, f) == lp_norm(f, 1)
    m = LearningMatrix.parity(3)
    for a in range(1, 8):
        assert inner(m.row(a).tolist(), [1] * 8) == 0


def test_truncate_examples():
    assert truncate_above([1] * 4, 2) == [0] * 4
    assert truncate_above([1] * 4, Fraction(1, 2)) == [1] * 4
    f = [4] + [0] * 7
    g = truncate_above(f, 1)
    assert g == f
    assert lp_norm(g, 1) == Fraction(1, 2)
    assert lp_norm(g, 1) <= lp_norm(f, 2) ** 2 / 1


nonneg = st.lists(st.integers(0, 20), min_size=2, max_size=16)


@settings(max_examples=80, deadline=None)
@given(nonneg, st.floats(1, 6), st.floats(1, 6))
def test_norm_monotone(f, p, q):
    p, q = min(p, q), max(p, q)
    assert lp_norm(np.array(f, float), p) <= lp_norm(np.array(f, float), q) + 1e-9


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(-9, 9), st.integers(-9, 9)), min_size=1, max_size=16), st.integers(1, 4))
def test_cauchy_schwarz_and_holder(pairs, p):
    f = [a for a, _ in pairs]
    g = [b for _, b in pairs]
    assert float(abs(inner(f, g))) <= lp_norm(f, 2) * lp_norm(g, 2) + 1e-9
    fg = [a * b for a, b in pairs]
    assert lp_norm(fg, p) <= float(lp_norm(f, p)) * float(lp_norm(g, float("inf"))) + 1e-9


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_parity_rows_orthonormal(n):
    t = LearningMatrix.parity(n).table.astype(np.int64)
    gram = t @ t.T
    assert np.array_equal(gram, (1 << n) * np.eye(1 << n, dtype=np.int64))


def test_sparse_parity_concepts():
    m = LearningMatrix.sparse_parity(4, 2)
    assert m.num_x == math.comb(4, 2)
    # strings x_0..x_3 in lexicographic order: 0011, 0101, 0110, 1001, 1010, 1100
    assert m.concepts.tolist() == [0b1100, 0b1010, 0b0110, 0b1001, 0b0101, 0b0011]
    assert m.table.shape == (16, 6)


def test_random_kind_is_reproducible():
    a = LearningMatrix.random(3, 4, 17)
    b = LearningMatrix.random(3, 4, 17)
    assert np.array_equal(a.table, b.table)
    assert not np.array_equal(a.table, LearningMatrix.random(3, 4, 18).table)


def test_file_roundtrip(tmp_path):
    for m in (LearningMatrix.parity(3), LearningMatrix.sparse_parity(4, 2), LearningMatrix.random(2, 3, 5),
              LearningMatrix.from_table(np.array([[1, -1], [-1, -1]]))):
        path = tmp_path / "m.l2mat"
        store(m, path)
        assert load(path) == m


def test_parse_rejects_garbage():
    with pytest.raises(ValueError):
        parse("L2MAT v2 n_a=1 n_x=1 kind=parity")
    with pytest.raises(ValueError):
        parse("L2MAT v1 n_a=1 n_x=1 kind=explicit\n+-\n+")


def test_resolve_builtins():
    assert resolve("parity:3") == LearningMatrix.parity(3)
    assert resolve("ones:2").table.min() == 1
    with pytest.raises(ValueError):
        resolve("bogus:1")
