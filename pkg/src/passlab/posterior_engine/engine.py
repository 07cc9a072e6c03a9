"""Exact truncated-path distributions for layered q-pass programs.

Probability space: x uniform over X and a_1..a_T uniform over A; every pass
replays the same samples. All masses are integer counts of tuples
``(x, a_1..a_T)``, so probabilities are ``count / N`` with
``N = |X| |A|^T`` and every comparison is exact.

Two processes are tracked for pass j:

* the *local* process of each pass-j start vertex s: pass j alone run from s
  over a fresh uniform tuple, truncated by the pass-j stopping rules. Its
  posteriors drive Bad, SigV, significance and the increment Delta.
* the *global* process from v0 across all passes. It drives High.

Rules at layer i read only distributions at layers <= i, so the engine fills
layers in order: masses at layer i, then the classification of layer i, then
the step to layer i+1.

``enumerate_exact`` walks every tuple. ``dp_exact`` factorises per x: a forward
pass over prefixes a_1..a_i from each start, multiplied by backward suffix
counts of the previous pass (pass j-1 from the remembered copy at layer i to
the remembered start), which reconstructs the coupling between passes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Optional

import numpy as np

from ..branching_program import BranchingProgram, ProgramError, all_inputs, counter_limit
from ..exact import cmp_pow2
from ..learning_matrix import LearningMatrix
from .thresholds import ThresholdSet

RULES = ("none", "sig", "bad", "sigv", "copy", "high_overflow", "bias_overflow")
SIG, BAD, SIGV, COPY, HIGH_OVF, BIAS_OVF = 1, 2, 3, 4, 5, 6
NRULES = len(RULES)

DEFAULT_ENUM_BUDGET = 1 << 25
DEFAULT_DP_CAP = 1 << 22


class BudgetExceeded(RuntimeError):
    """The instance is larger than the configured engine budget."""


@lru_cache(maxsize=1 << 16)
def _ge(num: int, den: int, exponent: Fraction) -> bool:
    return cmp_pow2(Fraction(num, den), exponent) >= 0


@dataclass
class EdgeClassification:
    j: int
    i: int
    reachable: np.ndarray  # (w,) local mass > 0
    significant: np.ndarray  # (w,)
    sigv: np.ndarray  # (w, X)
    bad: np.ndarray  # (w, A)
    high: np.ndarray  # (w, A)
    delta: np.ndarray  # (w, A, 2)
    zero_prob: np.ndarray  # (w, A, 2) label has posterior probability 0
    stop: np.ndarray  # (w, X, A) rule code, 0 = continue

    @property
    def high_count(self) -> np.ndarray:
        return self.high.sum(axis=1)


@dataclass
class PathDistribution:
    """Integer tuple counts; divide by ``N`` for probabilities."""
    program: BranchingProgram
    matrix: LearningMatrix
    rules: Optional[ThresholdSet]
    N: int
    engine: str
    global_mass: dict = field(default_factory=dict)  # g -> (w, X)
    local_mass: dict = field(default_factory=dict)  # (j, i) -> (starts, w, X)
    next_a: dict = field(default_factory=dict)  # (j, i) -> (w, A) global joint with a_{i+1}
    local_stops: dict = field(default_factory=dict)  # (j, i) -> (starts, NRULES)
    global_stops: dict = field(default_factory=dict)  # (j, i) -> (NRULES,)
    classes: dict = field(default_factory=dict)  # (j, i) -> EdgeClassification

    def pr(self, count) -> Fraction:
        return Fraction(int(count), self.N)

    def start_index(self, j: int, i: int) -> np.ndarray:
        return self.program.start_view(j, i) if j > 1 else np.zeros(self.program.widths[self.program.g(j, i)], dtype=np.int64)

    def local_of_vertex(self, j: int, i: int) -> np.ndarray:
        """(w, X) counts of each vertex in the process of its own start."""
        w = self.program.widths[self.program.g(j, i)]
        return self.local_mass[(j, i)][self.start_index(j, i), np.arange(w), :]

    def posterior(self, j: int, i: int, v: int) -> Optional[list]:
        row = self.local_of_vertex(j, i)[v]
        tot = int(row.sum())
        if tot == 0:
            return None
        return [Fraction(int(c), tot) for c in row]

    def global_posterior(self, g: int, v: int) -> Optional[list]:
        row = self.global_mass[g][v]
        tot = int(row.sum())
        return None if tot == 0 else [Fraction(int(c), tot) for c in row]

    def conservation(self) -> list:
        """(label, ok) for every process and layer: live + earlier stops = N."""
        p = self.program
        out = []
        for (j, i), arr in sorted(self.local_mass.items()):
            stopped = sum((self.local_stops[(j, t)].sum(axis=1) for t in range(i) if (j, t) in self.local_stops),
                          np.zeros(arr.shape[0], dtype=np.int64))
            live = arr.sum(axis=(1, 2))
            for s in range(arr.shape[0]):
                out.append((f"local pass {j} start {s} layer {i}", int(live[s]) + int(stopped[s]) == self.N))
        for gl in sorted(self.global_mass):
            stopped = sum(int(self.global_stops[k].sum()) for k in self.global_stops if p.g(*k) < gl)
            out.append((f"global layer {gl}", int(self.global_mass[gl].sum()) + stopped == self.N))
        return out

    def conserved(self) -> bool:
        return all(ok for _, ok in self.conservation())

    def stopped_by_rule(self) -> dict:
        tot = np.zeros(NRULES, dtype=np.int64)
        for arr in self.global_stops.values():
            tot += arr
        return {RULES[r]: self.pr(tot[r]) for r in range(1, NRULES)}

    def equals(self, other: "PathDistribution") -> bool:
        def same(d1, d2):
            return d1.keys() == d2.keys() and all(np.array_equal(d1[k], d2[k]) for k in d1)
        return (self.N == other.N and same(self.global_mass, other.global_mass)
                and same(self.local_mass, other.local_mass) and same(self.next_a, other.next_a)
                and same(self.local_stops, other.local_stops) and same(self.global_stops, other.global_stops))


# ---------------------------------------------------------------- classification

def classify_layer(d: PathDistribution, p: BranchingProgram, m: LearningMatrix, rules: ThresholdSet,
                   j: int, i: int) -> EdgeClassification:
    """Bad / High / SigV / significance / Delta and the stop table of layer i."""
    w = p.widths[p.g(j, i)]
    nx, na = m.num_x, m.num_a
    loc = d.local_of_vertex(j, i).astype(object)
    tot = loc.sum(axis=1)
    table = m.table.astype(np.int64)
    corr = np.asarray(d.local_of_vertex(j, i) @ table.T, dtype=np.int64)  # (w, A)
    limit = counter_limit(nx)

    reachable = np.array([int(t) > 0 for t in tot], dtype=bool)
    significant = np.zeros(w, dtype=bool)
    sigv = np.zeros((w, nx), dtype=bool)
    bad = np.zeros((w, na), dtype=bool)
    high = np.zeros((w, na), dtype=bool)
    delta = np.zeros((w, na, 2), dtype=np.int64)
    zero_prob = np.zeros((w, na, 2), dtype=bool)

    two_sigs = 2 * rules.sigs(j)
    minus_r = -rules.r_ext
    half_k = rules.k_ext / 2
    if j > 1:
        nxt = d.next_a[(j, i)]
        gtot = nxt.sum(axis=1)
    for v in range(w):
        if not reachable[v]:
            continue
        t = int(tot[v])
        row = [int(c) for c in loc[v]]
        significant[v] = _ge(nx * sum(c * c for c in row), t * t, two_sigs)
        for x in range(nx):
            sigv[v, x] = row[x] > 0 and _ge(nx * row[x], t, rules.l_sigv)
        for a in range(na):
            c = int(corr[v, a])
            bad[v, a] = _ge(abs(c), 2 * t, minus_r)
            plus = (t + c) // 2
            for bi, part in ((0, plus), (1, t - plus)):
                if part == 0:
                    zero_prob[v, a, bi] = True
                    delta[v, a, bi] = limit
                else:
                    delta[v, a, bi] = (t // part).bit_length() - 1
            if j > 1 and gtot[v] > 0:
                high[v, a] = _ge(na * int(nxt[v, a]), int(gtot[v]), half_k)

    stop = np.zeros((w, nx, na), dtype=np.int8)
    live = reachable[:, None, None]
    if j == 1:
        code = np.where(significant[:, None, None], SIG,
               np.where(bad[:, None, :], BAD,
               np.where(sigv[:, :, None], SIGV, 0)))
    else:
        copy_stop = d.classes[(j - 1, i)].stop[p.copy_view(j, i)] != 0
        counters = p.counter_view(j, i)
        if counters is None:
            over_h = over_b = np.zeros(w, dtype=bool)
        else:
            ch, cb = counters
            over_h = np.array([c > rules.l_high for c in ch], dtype=bool)
            over_b = np.array([c > rules.bias(j) for c in cb], dtype=bool)
        code = np.where(sigv[:, :, None], SIGV,
               np.where((bad & ~high)[:, None, :], BAD,
               np.where(copy_stop, COPY,
               np.where(significant[:, None, None], SIG,
               np.where(over_h[:, None, None], HIGH_OVF,
               np.where(over_b[:, None, None], BIAS_OVF, 0))))))
    stop[...] = np.where(live, np.broadcast_to(code, (w, nx, na)), 0)
    return EdgeClassification(j, i, reachable, significant, sigv, bad, high, delta, zero_prob, stop)


# ---------------------------------------------------------------- driver

def _check(p: BranchingProgram, rules: Optional[ThresholdSet]):
    if rules is None:
        return
    if rules.passes < p.q:
        raise ValueError(f"thresholds cover {rules.passes} passes, program has {p.q}")
    last = (p.built_layers - 1) // p.T + 1 if p.T else 1
    for j in range(2, min(p.q, last) + 1):
        if j not in p.remembered:
            raise ProgramError(f"stopping rules for pass {j} need the remember-pass modification")


def _drive(p: BranchingProgram, m: LearningMatrix, rules: Optional[ThresholdSet], backend) -> PathDistribution:
    d = backend.d
    for j in range(1, p.q + 1):
        for i in range(p.T + 1):
            gl = p.g(j, i)
            if gl >= p.built_layers:
                return d
            backend.masses(j, i)
            if i == p.T:
                break
            if rules is not None:
                d.classes[(j, i)] = classify_layer(d, p, m, rules, j, i)
            if gl + 1 < p.built_layers:
                backend.advance(j, i)
        backend.end_pass(j)
        if p.T == 0:
            break
    return d


def _stop_table(d: PathDistribution, j: int, i: int, shape) -> np.ndarray:
    cls = d.classes.get((j, i))
    return np.zeros(shape, dtype=np.int8) if cls is None else cls.stop


def _onehot_rules(stop: np.ndarray) -> np.ndarray:
    return (stop[..., None] == np.arange(NRULES)).astype(np.int64)


class _Enumerate:
    def __init__(self, p, m, rules, budget):
        self.p, self.m = p, m
        N = m.num_x * m.num_a ** p.T
        if N > budget:
            raise BudgetExceeded(f"|X||A|^T = {N} exceeds the enumeration budget {budget}")
        self.d = PathDistribution(p, m, rules, N, "enumerate")
        xs, samples = all_inputs(m, p.T)
        self.xs, self.samples = xs, samples
        self.lab = m.label_bits.astype(np.int64)
        self.g_cur = np.zeros(N, dtype=np.int64)
        self.cur = []

    def _mass(self, cur, w):
        alive = cur >= 0
        flat = np.bincount(cur[alive] * self.m.num_x + self.xs[alive], minlength=w * self.m.num_x)
        return flat.reshape(w, self.m.num_x).astype(np.int64)

    def masses(self, j, i):
        p, d = self.p, self.d
        gl = p.g(j, i)
        w = p.widths[gl]
        if i == 0:
            starts = np.arange(w) if j > 1 else np.array([0])
            self.cur = [np.full(d.N, s, dtype=np.int64) for s in starts]
        d.local_mass[(j, i)] = np.stack([self._mass(c, w) for c in self.cur])
        if not (j > 1 and i == 0):
            d.global_mass[gl] = self._mass(self.g_cur, w)
        if i < p.T:
            alive = self.g_cur >= 0
            na = self.m.num_a
            flat = np.bincount(self.g_cur[alive] * na + self.samples[alive, i], minlength=w * na)
            d.next_a[(j, i)] = flat.reshape(w, na).astype(np.int64)

    def _step(self, cur, stop, succ, a, bi):
        alive = cur >= 0
        code = np.zeros(len(cur), dtype=np.int64)
        code[alive] = stop[cur[alive], self.xs[alive], a[alive]]
        ledger = np.bincount(code[alive], minlength=NRULES).astype(np.int64)
        ledger[0] = 0
        nxt = np.full(len(cur), -1, dtype=np.int64)
        go = alive & (code == 0)
        nxt[go] = succ[cur[go], a[go], bi[go]]
        return nxt, ledger

    def advance(self, j, i):
        p, d = self.p, self.d
        gl = p.g(j, i)
        stop = _stop_table(d, j, i, (p.widths[gl], self.m.num_x, self.m.num_a))
        a = self.samples[:, i]
        bi = self.lab[a, self.xs]
        succ = p.succ[gl]
        ledgers = []
        for k, c in enumerate(self.cur):
            self.cur[k], led = self._step(c, stop, succ, a, bi)
            ledgers.append(led)
        d.local_stops[(j, i)] = np.stack(ledgers)
        self.g_cur, d.global_stops[(j, i)] = self._step(self.g_cur, stop, succ, a, bi)

    def end_pass(self, j):
        pass


class _Factorised:
    def __init__(self, p, m, rules, cap):
        if p.q > 3:
            raise ValueError("dp_exact supports at most 3 passes")
        for j in range(2, p.q + 1):
            if p.g(j, 0) < p.built_layers - 1 and j not in p.remembered:
                raise ProgramError("dp_exact needs every later pass to remember its previous pass")
        N = m.num_x * m.num_a ** p.T
        if N >= 1 << 62:
            raise BudgetExceeded("tuple count does not fit 64-bit integers")
        self.p, self.m = p, m
        self.d = PathDistribution(p, m, rules, N, "dp")
        self.lab = m.label_bits.astype(np.int64)  # (A, X)
        self.cap = cap
        self.beta = {}
        self.pre = None
        self.sv = None
        self.n_starts = 1
        self.joint = None

    def _succ_x(self, gl):
        """succ_x[v, x, a] = successor of v on sample a under concept x."""
        s = self.p.succ[gl]
        return np.stack([s[:, a, self.lab[a]] for a in range(self.m.num_a)], axis=2)

    def _dense(self, arr, scale):
        out = np.zeros((self.n_starts, arr.shape[0], arr.shape[1]), dtype=np.int64)
        out[self.sv, np.arange(arr.shape[0]), :] = arr * scale
        return out

    def masses(self, j, i):
        # pre[v, x]: prefixes a_1..a_i reaching v alive from start(v); every
        # vertex of a remembered pass has exactly one start
        p, d, m = self.p, self.d, self.m
        T, na, nx = p.T, m.num_a, m.num_x
        gl = p.g(j, i)
        w = p.widths[gl]
        if i == 0:
            self.n_starts = w if j > 1 else 1
            if self.n_starts * w * nx > self.cap:
                raise BudgetExceeded("per-x product state exceeds the dp cap")
            self.pre = np.ones((w, nx), dtype=np.int64) if j > 1 else np.eye(w, 1, dtype=np.int64).repeat(nx, 1)
        self.sv = p.start_view(j, i)
        pre = self.pre
        d.local_mass[(j, i)] = self._dense(pre, na ** (T - i))
        if j == 1:
            d.global_mass[gl] = pre * na ** (T - i)
            if i < T:
                self.joint = np.broadcast_to(pre[:, :, None] * na ** (T - i - 1), (w, nx, na)).copy()
                d.next_a[(j, i)] = self.joint.sum(axis=1)
            return
        s_v = self.sv
        c_v = p.copy_view(j, i)
        cons = p.consistent_final(j - 1)[s_v].astype(np.int64)
        beta = self.beta[j - 1]
        if i > 0:
            d.global_mass[gl] = pre * beta[i][c_v, s_v, :] * cons[:, None]
        if i < T:
            gp = p.g(j - 1, i)
            stop_prev = _stop_table(d, j - 1, i, (p.widths[gp], nx, na))
            sx = self._succ_x(gp)  # (w_prev, X, A)
            nxt = sx[c_v]  # (w, X, A)
            alive = stop_prev[c_v] == 0
            b_next = beta[i + 1][nxt, s_v[:, None, None], np.arange(nx)[None, :, None]]
            self.joint = pre[:, :, None] * (alive * b_next) * cons[:, None, None]
            d.next_a[(j, i)] = self.joint.sum(axis=1)

    def advance(self, j, i):
        p, d, m = self.p, self.d, self.m
        T, na, nx = p.T, m.num_a, m.num_x
        gl = p.g(j, i)
        w, w2 = p.widths[gl], p.widths[gl + 1]
        stop = _stop_table(d, j, i, (w, nx, na))
        onehot = _onehot_rules(stop)  # (w, X, A, R)
        per_v = np.einsum("vx,vxr->vr", self.pre, onehot.sum(axis=2)) * na ** (T - i - 1)
        led = np.zeros((self.n_starts, NRULES), dtype=np.int64)
        np.add.at(led, self.sv, per_v)
        led[:, 0] = 0
        d.local_stops[(j, i)] = led
        g = np.einsum("vxa,vxar->r", self.joint, onehot)
        g[0] = 0
        d.global_stops[(j, i)] = g
        sx = self._succ_x(gl)
        live = self.pre[:, :, None] * (stop == 0)
        xs = np.broadcast_to(np.arange(nx)[None, :, None], sx.shape)
        new = np.zeros((w2, nx), dtype=np.int64)
        np.add.at(new, (sx.ravel(), xs.ravel()), live.ravel())
        self.pre = new

    def end_pass(self, t):
        p, d, m = self.p, self.d, self.m
        if t >= p.q or p.g(t, p.T) >= p.built_layers:
            return
        T, na, nx = p.T, m.num_a, m.num_x
        wT = p.widths[p.g(t, T)]
        beta = [None] * (T + 1)
        beta[T] = np.repeat(np.eye(wT, dtype=np.int64)[:, :, None], nx, axis=2)
        for i in range(T - 1, -1, -1):
            gl = p.g(t, i)
            w = p.widths[gl]
            alive = (_stop_table(d, t, i, (w, nx, na)) == 0).astype(np.int64)
            sx = self._succ_x(gl)
            b = np.zeros((w, wT, nx), dtype=np.int64)
            for a in range(na):
                nxt = sx[:, :, a]  # (w, X)
                b += alive[:, None, :, a] * beta[i + 1][nxt, :, np.arange(nx)[None, :]].transpose(0, 2, 1)
            beta[i] = b
        self.beta[t] = beta


def enumerate_exact(p: BranchingProgram, m: LearningMatrix, rules: Optional[ThresholdSet] = None,
                    budget: int = DEFAULT_ENUM_BUDGET) -> PathDistribution:
    """Ground truth by walking every (x, a_1..a_T)."""
    _check(p, rules)
    return _drive(p, m, rules, _Enumerate(p, m, rules, budget))


def dp_exact(p: BranchingProgram, m: LearningMatrix, rules: Optional[ThresholdSet] = None,
             cap: int = DEFAULT_DP_CAP) -> PathDistribution:
    """Per-x forward/backward dynamic program; identical counts to enumeration."""
    _check(p, rules)
    return _drive(p, m, rules, _Factorised(p, m, rules, cap))


def run_engine(p: BranchingProgram, m: LearningMatrix, rules: Optional[ThresholdSet] = None,
               engine: str = "auto", budget: int = DEFAULT_ENUM_BUDGET) -> PathDistribution:
    if engine == "enumerate":
        return enumerate_exact(p, m, rules, budget)
    if engine == "dp":
        return dp_exact(p, m, rules)
    if engine != "auto":
        raise ValueError(f"unknown engine {engine!r}")
    if m.num_x * m.num_a ** p.T <= budget:
        return enumerate_exact(p, m, rules, budget)
    return dp_exact(p, m, rules)


# ---------------------------------------------------------------- counters and success

def counter_hook(m: LearningMatrix, rules: ThresholdSet, engine: str = "enumerate"):
    """Increments for ``modify_attach_counters``: a in High(v) adds 1 to
    cnt_high and Delta to cnt_bias, everything else adds 0."""
    def hook(partial: BranchingProgram, j: int, i: int):
        d = run_engine(partial, m, rules, engine)
        cls = d.classes[(j, i)]
        dh = np.repeat(cls.high[:, :, None], 2, axis=2).astype(np.int64)
        db = np.where(dh > 0, cls.delta, 0).astype(np.int64)
        return dh, db
    return hook


@dataclass(frozen=True)
class ExactSuccess:
    joint: Fraction  # Pr[output = x and no stop]
    stop_probability: Fraction
    success: Fraction  # conditioned on not stopping when rules are on

    def to_dict(self) -> dict:
        return {k: str(getattr(self, k)) for k in ("joint", "stop_probability", "success")}


def success_probability_exact(p: BranchingProgram, m: LearningMatrix, rules: Optional[ThresholdSet] = None,
                              engine: str = "auto", d: Optional[PathDistribution] = None) -> ExactSuccess:
    if not p.complete:
        raise ProgramError("program is not complete")
    d = d or run_engine(p, m, rules, engine)
    final = d.global_mass[p.num_layers - 1]
    correct = int(final[np.arange(final.shape[0]), p.outputs].sum())
    alive = int(final.sum())
    joint = Fraction(correct, d.N)
    stop = 1 - Fraction(alive, d.N)
    if rules is None:
        return ExactSuccess(joint, stop, joint)
    return ExactSuccess(joint, stop, Fraction(correct, alive) if alive else Fraction(0))
