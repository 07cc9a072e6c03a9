"""Parity learning with q passes by block Gaussian elimination, plus baselines.

With K blocks the elimination circuit has depth K and K outputs, so one
attempt costs at most ``K 4^K`` passes and ``8 n^2 / K`` bits. An attempt
fails exactly when some pivot block is singular, which the learner sees
without knowing x, so attempts on fresh windows of n samples are repeated
up to ``4^K`` times and the first completed one is returned.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .block_circuit import (
    SINGULAR, ResourceMeter, StreamCursor, StreamUnderflow, build_ge_circuit, eval_streaming,
    leaf_reader_samples, pivots_invertible, solution_from_blocks, _ge_cache,
)
from .branching_program import ImplicitLearner
from .gf2 import parity
from .learning_matrix import LearningMatrix


class BudgetViolation(AssertionError):
    """A run used more passes, samples or memory than its configuration allows."""


def floor_log2(q: int) -> int:
    return int(q).bit_length() - 1


@dataclass(frozen=True)
class LearnerConfig:
    n: int
    q: int
    K: int
    K_target: int  # floor(log2(q) / 5) before divisibility adjustment

    @classmethod
    def derive(cls, n: int, q: int) -> "LearnerConfig":
        if n < 1 or q < 1:
            raise ValueError("n and q must be positive")
        target = floor_log2(q) // 5
        K = max([k for k in range(1, max(target, 1) + 1) if n % k == 0])
        cfg = cls(n, q, K, target)
        if cfg.worst_passes > q:
            raise ValueError(f"q = {q} is below the {cfg.worst_passes} passes that K = {K} may need")
        return cfg

    @property
    def repetitions(self) -> int:
        return 4 ** self.K

    @property
    def samples_per_attempt(self) -> int:
        return self.n

    @property
    def total_samples(self) -> int:
        return self.repetitions * self.n

    @property
    def passes_per_attempt(self) -> int:
        return self.K * 4 ** self.K

    @property
    def worst_passes(self) -> int:
        return self.repetitions * self.passes_per_attempt

    @property
    def memory_bound(self) -> int:
        """4c(d+m) with c = (n/K)^2 and d = m = K, i.e. 8 n^2 / K."""
        return 8 * self.n * self.n // self.K

    def to_dict(self) -> dict:
        return {"n": self.n, "q": self.q, "K": self.K, "K_target": self.K_target,
                "repetitions": self.repetitions, "samples_per_attempt": self.n,
                "total_samples": self.total_samples, "worst_passes": self.worst_passes,
                "memory_bound": self.memory_bound}


@dataclass
class LearnOutcome:
    guess: Optional[int]  # None is failure
    attempts_used: int
    meter: ResourceMeter
    pivots_ok: list = field(default_factory=list)  # per attempt
    config: Optional[LearnerConfig] = None

    @property
    def failed(self) -> bool:
        return self.guess is None

    def correct(self, x: int) -> bool:
        return self.guess is not None and self.guess == x


def _check_budget(cfg: LearnerConfig, meter: ResourceMeter):
    if meter.passes_used > cfg.q:
        raise BudgetViolation(f"{meter.passes_used} passes > q = {cfg.q}")
    if meter.samples_touched > cfg.q * cfg.n:
        raise BudgetViolation(f"{meter.samples_touched} samples > q n = {cfg.q * cfg.n}")
    if meter.peak_live_bits > cfg.memory_bound:
        raise BudgetViolation(f"{meter.peak_live_bits} live bits > {cfg.memory_bound}")


def _label_bit(b: int) -> int:
    return 1 if b < 0 else 0


def learn_multipass(cfg: LearnerConfig, stream, m: Optional[LearningMatrix] = None) -> LearnOutcome:
    """Attempt r (0-based) reads samples [r n, (r+1) n); first completed attempt wins."""
    if m is not None and m.kind != "parity":
        raise ValueError("the block learner solves parity")
    n, K = cfg.n, cfg.K
    if len(stream.a) < cfg.total_samples:
        raise StreamUnderflow(f"stream has {len(stream.a)} samples, {cfg.total_samples} needed")
    cursor = StreamCursor.of(stream)
    cir = _ge_cache(n, K)
    out = LearnOutcome(None, 0, cursor.meter, [], cfg)
    for r in range(cfg.repetitions):
        out.attempts_used = r + 1
        outs, _ = eval_streaming(cir, leaf_reader_samples(m, n, K, offset=r * n), cursor, abort_on_singular=True)
        _check_budget(cfg, cursor.meter)
        ok = len(outs) == K and all(o is not SINGULAR for o in outs)
        out.pivots_ok.append(ok)
        if ok:
            guess = solution_from_blocks(outs, n, K)
            lo = r * n
            for t in range(lo, lo + n):
                if parity(int(stream.a[t]) & guess) != _label_bit(int(stream.b[t])):
                    raise AssertionError("completed attempt does not satisfy its equations")
            out.guess = guess
            return out
    return out


def attempt_completes(rows, n: int, K: int) -> bool:
    """Pivot chain of one attempt is invertible (no stream, same circuit)."""
    return pivots_invertible([int(r) for r in rows], n, K)


def expected_attempt_rate(n: int, K: int) -> float:
    """Every pivot block is a fresh uniform s x s matrix given the earlier ones."""
    s = n // K
    per = 1.0
    for i in range(1, s + 1):
        per *= 1.0 - 2.0 ** (-i)
    return per ** K


# ---------------------------------------------------------------- baselines

def learn_onepass_ge(n: int, stream, T: Optional[int] = None) -> LearnOutcome:
    """Incremental row reduction of [a | b] in one pass over the first T samples."""
    T = n if T is None else T
    if len(stream.a) < T:
        raise StreamUnderflow(f"stream has {len(stream.a)} samples, {T} needed")
    cursor = StreamCursor(stream.a[:T], stream.b[:T])
    meter = cursor.meter
    meter.hold(n * (n + 1))
    state = GE_LEARNER(n).init()
    step = GE_LEARNER(n).step
    for t, a, b in cursor.scan():
        state = step(state, 1, t, a, b)
    meter.touch(T)
    meter.release(n * (n + 1))
    guess = _ge_finish(state, n)
    return LearnOutcome(guess, 1, meter, [guess is not None])


def _lead(r: int) -> int:
    return (r & -r).bit_length() - 1


def _ge_reduce(state: tuple, row: int, n: int) -> tuple:
    for r in state:
        if (row >> _lead(r)) & 1:
            row ^= r
    if row == 0:
        return state
    lead = _lead(row)
    rows = [r ^ row if (r >> lead) & 1 else r for r in state]
    rows.append(row)
    return tuple(sorted(rows))


def _ge_finish(state: tuple, n: int) -> Optional[int]:
    # pivots on all n sample columns; a pivot on the label column is inconsistent
    if len(state) != n or {_lead(r) for r in state} != set(range(n)):
        return None
    x = 0
    for r in state:
        x |= ((r >> n) & 1) << _lead(r)
    return x


def GE_LEARNER(n: int) -> ImplicitLearner:
    """Reduced echelon basis of the rows (a, label) with the label as bit n.

    The pivot of a row is its lowest set bit, so the label column only
    becomes a pivot when the samples are inconsistent.
    """
    def step(s, j, i, a, b):
        return _ge_reduce(s, int(a) | (_label_bit(b) << n), n)

    def encode(s):
        # at most n+1 basis rows of n+1 bits, listed in order
        code = 0
        for r in s:
            code = (code << (n + 1)) | r
        return code

    return ImplicitLearner("onepass_ge", 1, (n + 1) * (n + 1), lambda: (), step,
                           lambda s: _ge_finish(s, n) if _ge_finish(s, n) is not None else 0, encode)


def _next_consistent(m: LearningMatrix, cand: int, a: int, b: int) -> int:
    col = m.table[a]
    nx = m.num_x
    for d in range(1, nx + 1):
        c = (cand + d) % nx
        if int(col[c]) == b:
            return c
    return cand


def learn_bruteforce(n: int, stream, T: Optional[int] = None, m: Optional[LearningMatrix] = None) -> LearnOutcome:
    """Keep a candidate; on a contradicting sample move to the next concept
    (cyclically) that agrees with that sample."""
    m = m or LearningMatrix.parity(n)
    T = len(stream.a) if T is None else T
    if len(stream.a) < T:
        raise StreamUnderflow(f"stream has {len(stream.a)} samples, {T} needed")
    cursor = StreamCursor(stream.a[:T], stream.b[:T])
    cursor.meter.hold(n)
    cand = 0
    for _, a, b in cursor.scan():
        if int(m.table[a, cand]) != b:
            cand = _next_consistent(m, cand, a, b)
    cursor.meter.touch(T)
    cursor.meter.release(n)
    return LearnOutcome(cand, 1, cursor.meter, [])


def BRUTEFORCE_LEARNER(m: LearningMatrix) -> ImplicitLearner:
    def step(s, j, i, a, b):
        return s if int(m.table[a, s]) == b else _next_consistent(m, s, a, b)

    bits = max(1, (m.num_x - 1).bit_length())
    return ImplicitLearner("bruteforce", 1, bits, lambda: 0, step, lambda s: s, lambda s: s)


def COUNTER_LEARNER(m: LearningMatrix, passes: int = 2) -> ImplicitLearner:
    """Toy multi-pass learner: pass 1 counts samples with label -1 (capped),
    later passes only read. Guesses the concept index equal to the count."""
    cap = m.num_x - 1

    def step(s, j, i, a, b):
        return min(s + 1, cap) if j == 1 and b < 0 else s

    bits = max(1, cap.bit_length())
    return ImplicitLearner("counter", passes, bits, lambda: 0, step, lambda s: s, lambda s: s)


def success_rate(outcomes, xs) -> float:
    outcomes = list(outcomes)
    return sum(o.correct(int(x)) for o, x in zip(outcomes, xs)) / max(1, len(outcomes))


__all__ = [
    "BudgetViolation", "LearnerConfig", "LearnOutcome", "learn_multipass", "attempt_completes",
    "expected_attempt_rate", "learn_onepass_ge", "learn_bruteforce", "GE_LEARNER", "BRUTEFORCE_LEARNER",
    "COUNTER_LEARNER", "success_rate", "build_ge_circuit",
]
