from __future__ import annotations

import numpy as np
import pytest

from passlab.block_circuit import StreamUnderflow
from passlab.experiment_cli.streams import from_pairs, generate_stream
from passlab.gf2 import solve_system
from passlab.learning_matrix import LearningMatrix, make_rng
from passlab.multipass_learner import (
    LearnerConfig, attempt_completes, expected_attempt_rate, learn_bruteforce, learn_multipass, learn_onepass_ge,
    success_rate,
)


def test_config_derivation():
    c = LearnerConfig.derive(4, 32)
    assert (c.K, c.repetitions, c.worst_passes) == (1, 4, 16)
    c = LearnerConfig.derive(8, 1024)
    assert (c.K, c.repetitions, c.total_samples, c.memory_bound) == (2, 16, 128, 256)
    assert c.worst_passes <= 2 ** (5 * c.K) <= c.q
    assert c.total_samples <= c.q * c.n
    # K = 3 does not divide 8, so it falls back to 2
    c = LearnerConfig.derive(8, 2 ** 15)
    assert c.K_target == 3 and c.K == 2
    with pytest.raises(ValueError):
        LearnerConfig.derive(4, 8)


def test_k1_first_attempt():
    m = LearningMatrix.parity(4)
    cfg = LearnerConfig.derive(4, 32)
    for seed in range(100):
        s = generate_stream(m, None, cfg.total_samples, seed)
        rows = [int(a) for a in s.a[:4]]
        if solve_system(rows, [0] * 4, 4) is not None:
            break
    out = learn_multipass(cfg, s, m)
    assert out.attempts_used == 1 and out.pivots_ok == [True]
    assert out.guess == s.x == solve_system(rows, [(1 - int(b)) // 2 for b in s.b[:4]], 4)
    assert out.meter.passes_used <= cfg.passes_per_attempt


def test_all_attempts_singular():
    m = LearningMatrix.parity(4)
    cfg = LearnerConfig.derive(4, 32)
    s = from_pairs(m, 3, [(1, -1)] * cfg.total_samples)
    out = learn_multipass(cfg, s, m)
    assert out.failed and out.attempts_used == cfg.repetitions
    assert not any(out.pivots_ok)


def test_q1024_budgets():
    m = LearningMatrix.parity(8)
    cfg = LearnerConfig.derive(8, 1024)
    ok = 0
    for t in range(200):
        s = generate_stream(m, None, cfg.total_samples, [3, t])
        out = learn_multipass(cfg, s, m)
        assert out.meter.passes_used <= 1024
        assert out.meter.samples_touched <= 8192
        assert out.meter.peak_live_bits <= 256
        if not out.failed:
            assert out.correct(s.x)
            ok += 1
    assert ok / 200 >= 0.55


def test_underflow():
    m = LearningMatrix.parity(4)
    with pytest.raises(StreamUnderflow):
        learn_multipass(LearnerConfig.derive(4, 32), generate_stream(m, 1, 5, 0), m)
    with pytest.raises(StreamUnderflow):
        learn_onepass_ge(4, generate_stream(m, 1, 3, 0))


def test_attempt_rate_formula():
    assert abs(expected_attempt_rate(8, 2) - 0.0946) < 5e-4
    rng = make_rng(8)
    hits = sum(attempt_completes(rng.integers(0, 256, size=8), 8, 2) for _ in range(20_000))
    assert abs(hits / 20_000 - expected_attempt_rate(8, 2)) < 0.03
    assert hits / 20_000 >= 4 ** -2


def test_onepass_identity():
    n = 5
    m = LearningMatrix.parity(n)
    x = 0b10110
    s = from_pairs(m, x, [(1 << i, int(m.entry(1 << i, x))) for i in range(n)])
    out = learn_onepass_ge(n, s)
    assert out.guess == x and out.meter.passes_used == 1


def test_onepass_rank_deficient():
    m = LearningMatrix.parity(3)
    s = from_pairs(m, 5, [(a, int(m.entry(a, 5))) for a in (1, 2, 3)])
    assert learn_onepass_ge(3, s).failed


def test_onepass_rate():
    m = LearningMatrix.parity(8)
    outs, xs = [], []
    for t in range(5000):
        s = generate_stream(m, None, 8, [4, t])
        outs.append(learn_onepass_ge(8, s))
        xs.append(s.x)
    assert abs(success_rate(outs, xs) - 0.2899) < 0.03


def test_bruteforce():
    m = LearningMatrix.parity(3)
    s = generate_stream(m, 0, 5, 1)
    assert learn_bruteforce(3, s).guess == 0
    assert learn_bruteforce(3, generate_stream(m, 6, 5, 1), T=0).guess == 0
    outs, xs = [], []
    for t in range(500):
        s = generate_stream(m, None, 64, [5, t])
        outs.append(learn_bruteforce(3, s))
        xs.append(s.x)
    assert success_rate(outs, xs) >= 0.9
