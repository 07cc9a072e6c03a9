"""Exact checks of the potential inequalities on concrete instances.

Every check reads integer counts from a ``PathDistribution`` and compares
rationals against powers of two exactly. A check returns a ``LemmaCheck``;
precondition failures raise ``PreconditionError``.

The potential of a pass-j vertex is ``2^{cnt_bias - cnt_high}``, and 0 for the
halt state. The potential process halts on every stop.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from ..branching_program import BranchingProgram
from ..exact import as_fraction, cmp_pow2
from ..learning_matrix import LearningMatrix
from .engine import PathDistribution, run_engine
from .thresholds import ThresholdSet


class PreconditionError(ValueError):
    """The check is undefined here (zero probability, significant vertex, ...)."""


@dataclass
class LemmaCheck:
    lemma: str
    holds: bool
    lhs: Fraction
    rhs: Optional[Fraction]  # None when the right side is a bare power of two kept symbolic
    case: str = ""
    details: dict = field(default_factory=dict)

    @property
    def margin(self) -> float:
        """rhs - lhs as a float, where the rhs is known."""
        if self.rhs is None:
            return float(self.details.get("margin", float("nan")))
        return float(self.rhs - self.lhs)

    def to_dict(self) -> dict:
        return {"lemma": self.lemma, "holds": self.holds, "lhs": str(self.lhs),
                "rhs": None if self.rhs is None else str(self.rhs), "case": self.case,
                "details": {k: str(v) for k, v in self.details.items()}}


def phi(ch: Optional[int], cb: Optional[int] = None) -> Fraction:
    """``2^{cb - ch}``; ``phi(None)`` is the halt state."""
    if ch is None:
        return Fraction(0)
    return Fraction(2) ** (int(cb) - int(ch))


def potential(p: BranchingProgram, j: int, i: int, v: Optional[int]) -> Fraction:
    """Potential of pass-j layer-i vertex v (``None`` is halt)."""
    if v is None:
        return Fraction(0)
    view = p.counter_view(j, i)
    if view is None:
        return Fraction(1)
    return phi(view[0][v], view[1][v])


def _pow2_fraction(exponent: Fraction, round_up: bool) -> Fraction:
    """2^e exactly when e is an integer, otherwise a 2^-60 accurate bound."""
    e = as_fraction(exponent)
    if e.denominator == 1:
        return Fraction(2) ** int(e)
    scale = 60
    approx = math.floor(2.0 ** float(e) * 2 ** scale)
    # nudge until the bound is on the requested side
    while cmp_pow2(Fraction(approx, 1 << scale), e) > 0:
        approx -= 1
    while cmp_pow2(Fraction(approx + 1, 1 << scale), e) <= 0:
        approx += 1
    return Fraction(approx + (1 if round_up else 0), 1 << scale)


def growth_factor(rules: ThresholdSet, T: int) -> Fraction:
    """``1 + 2^{2 - 2 r_len}`` with ``2^{r_len} = T``; rounded down when irrational."""
    if rules.r_len is None:
        return 1 + Fraction(4, T * T)
    return 1 + _pow2_fraction(2 - 2 * rules.r_len, round_up=False)


def _dist(d, p, m, rules):
    return d if d is not None else run_engine(p, m, rules)


# ---------------------------------------------------------------- one edge

def verify_edge_potential(p: BranchingProgram, m: LearningMatrix, rules: ThresholdSet, j: int, i: int,
                          u: int, a: int, b: int, d: Optional[PathDistribution] = None) -> LemmaCheck:
    """``Phi(next) <= Phi(u) (1 + 2^{1 - r_ext}) / (2 Pr[M(a,x) = b | u])`` for a
    pass-j (j >= 2) vertex u under its own start's posterior."""
    if j < 2:
        raise PreconditionError("the edge inequality is stated for passes >= 2")
    if i >= p.T:
        raise PreconditionError("the final layer has no outgoing samples")
    d = _dist(d, p, m, rules)
    cls = d.classes[(j, i)]
    if not cls.reachable[u]:
        raise PreconditionError("vertex is unreachable from its start")
    bi = 0 if b == 1 else 1
    row = d.local_of_vertex(j, i)[u]
    tot = int(row.sum())
    match = int(sum(int(row[x]) for x in range(m.num_x) if m.label_bits[a, x] == bi))
    pr = Fraction(match, tot)
    cur = potential(p, j, i, u)

    view = p.counter_view(j, i)
    over = view is not None and (view[0][u] > rules.l_high or view[1][u] > rules.bias(j))
    if cls.significant[u] or over:
        case, nxt = "vertex_stop", Fraction(0)
    elif cls.bad[u, a] and not cls.high[u, a]:
        case, nxt = "bad_not_high", Fraction(0)
    else:
        case = "high" if cls.high[u, a] else "not_bad"
        nxt = potential(p, j, i + 1, int(p.succ[p.g(j, i)][u, a, bi]))
    details = {"pr_label": pr, "phi_u": cur, "phi_next": nxt}
    if pr == 0:
        details["anomaly"] = "label has probability 0 under the posterior"
        return LemmaCheck("edge_potential", True, nxt, None, case, details)
    # phi' <= phi (1 + 2 eps) / (2 pr)  <=>  2 pr phi' - phi <= 2 phi eps
    excess = 2 * pr * nxt - cur
    holds = excess <= 0 or cmp_pow2(excess / (2 * cur), -rules.r_ext) <= 0
    rhs = cur * (1 + 2 * _pow2_fraction(-rules.r_ext, round_up=True)) / (2 * pr)
    return LemmaCheck("edge_potential", holds, nxt, rhs, case, details)


# ---------------------------------------------------------------- layer sums

def _coupled(d: PathDistribution, p: BranchingProgram, j: int, s: int, i: int, v_prev: int):
    """Pass-j layer-i vertices of start s copying v_prev, and the denominator
    mass of v_prev in its own pass-(j-1) process."""
    if j < 2:
        raise PreconditionError("coupling needs a previous pass")
    anchor = int(p.copy_view(j, 0)[s])  # pass-(j-1) start tied to s
    prev_start = int(d.start_index(j - 1, i)[v_prev])
    den = int(d.local_of_vertex(j - 1, i)[v_prev].sum())
    if prev_start != anchor or den == 0:
        raise PreconditionError("Pr[v_{j-2} -> v'] is zero for this start")
    w = p.widths[p.g(j, i)]
    starts = d.start_index(j, i)
    copies = p.copy_view(j, i)
    verts = [v for v in range(w) if starts[v] == s and copies[v] == v_prev]
    mass = d.local_mass[(j, i)][s].sum(axis=1)
    return verts, mass, den


def verify_potential_growth(p: BranchingProgram, m: LearningMatrix, rules: ThresholdSet, j: int, s: int, i: int,
                            v_prev: int, d: Optional[PathDistribution] = None) -> LemmaCheck:
    """``E[Phi(v_i) 1{copy = v'}] / Pr[v' reached] <= growth^i 2^{cnt_bias^{(j-1)}(v')}``."""
    d = _dist(d, p, m, rules)
    verts, mass, den = _coupled(d, p, j, s, i, v_prev)
    num = sum((potential(p, j, i, v) * int(mass[v]) for v in verts), Fraction(0))
    lhs = num / den
    prev = p.counter_view(j - 1, i)
    cb_prev = 0 if prev is None else int(prev[1][v_prev])
    rhs = growth_factor(rules, p.T) ** i * Fraction(2) ** cb_prev
    return LemmaCheck("potential_growth", lhs <= rhs, lhs, rhs, "", {"vertices": len(verts)})


def verify_overflow_bound(p: BranchingProgram, m: LearningMatrix, rules: ThresholdSet, j: int, s: int, i: int,
                          v_prev: int, d: Optional[PathDistribution] = None) -> LemmaCheck:
    """``Pr[cnt_high <= l_high, cnt_bias > l_bias^{(j)}, copy = v' | v' reached]``
    against ``growth^i 2^{cnt_bias^{(j-1)}(v')} 2^{l_high - l_bias^{(j)}}`` (the
    Markov bound), with the closed form ``2^{l_bias^{(j-1)} - l_bias^{(j)} + l + 1}``
    reported alongside."""
    d = _dist(d, p, m, rules)
    view = p.counter_view(j, i)
    if view is None:
        raise PreconditionError(f"pass {j} has no counters")
    verts, mass, den = _coupled(d, p, j, s, i, v_prev)
    ch, cb = view
    hit = sum(int(mass[v]) for v in verts if ch[v] <= rules.l_high and cb[v] > rules.bias(j))
    lhs = Fraction(hit, den)
    prev = p.counter_view(j - 1, i)
    cb_prev = 0 if prev is None else int(prev[1][v_prev])
    scale = growth_factor(rules, p.T) ** i * Fraction(2) ** cb_prev
    exponent = rules.l_high - rules.bias(j)
    holds = lhs == 0 or cmp_pow2(lhs / scale, exponent) <= 0
    closed = rules.bias(j - 1) - rules.bias(j) + rules.l + 1
    closed_holds = lhs == 0 or cmp_pow2(lhs, closed) <= 0
    rhs = scale * _pow2_fraction(exponent, round_up=True)
    return LemmaCheck("overflow", holds, lhs, rhs, "",
                      {"closed_form_exponent": closed, "closed_form_holds": closed_holds})


# ---------------------------------------------------------------- flatness

def _is_significant(row, l_sigs: Fraction) -> bool:
    tot = int(sum(int(c) for c in row))
    return cmp_pow2(Fraction(len(row) * sum(int(c) ** 2 for c in row), tot * tot), 2 * l_sigs) >= 0


def verify_flatness(p: BranchingProgram, m: LearningMatrix, rules: ThresholdSet, j: int, i: int, v: int,
                    d: Optional[PathDistribution] = None, l_flat=None) -> LemmaCheck:
    """With E the event "reach v and P_{x|v}(x) <= 2^{l_flat}/|X|": both
    ``P_{x|E}(x') <= 2^{l_flat+1}/|X|`` and ``Pr[E | x = x'] <= 2^{l_flat+1} Pr[E]``."""
    d = _dist(d, p, m, rules)
    lf = rules.flat() if l_flat is None else as_fraction(l_flat)
    row = [int(c) for c in d.local_of_vertex(j, i)[v]]
    tot = sum(row)
    if tot == 0:
        raise PreconditionError("vertex is unreachable")
    if _is_significant(row, rules.sigs(j)):
        raise PreconditionError("vertex is significant")
    nx = len(row)
    flat = [c if cmp_pow2(Fraction(nx * c, tot), lf) <= 0 else 0 for c in row]
    mass_e = sum(flat)
    if mass_e == 0:
        raise PreconditionError("flat event has probability 0")
    worst = max(flat)
    cond_ok = cmp_pow2(Fraction(nx * worst, mass_e), lf + 1) <= 0
    # Pr[E] = mass_e / N and Pr[E | x = x'] = flat[x'] / (N / |X|)
    pr_e = Fraction(mass_e, d.N)
    bayes = max(Fraction(c * nx, d.N) for c in flat) / pr_e
    bayes_ok = cmp_pow2(bayes, lf + 1) <= 0
    lhs = Fraction(nx * worst, mass_e)
    return LemmaCheck("flatness", cond_ok and bayes_ok, lhs, None, "",
                      {"pr_event": Fraction(mass_e, d.N), "flat_exponent": lf, "cond_ok": cond_ok,
                       "bayes_ok": bayes_ok})


# ---------------------------------------------------------------- sweeps

def high_size_ok(d: PathDistribution, rules: ThresholdSet) -> bool:
    """``|High(v)| <= |A| 2^{-k_ext/2}`` at every classified layer of pass >= 2."""
    na = d.matrix.num_a
    for (j, _), cls in d.classes.items():
        if j < 2:
            continue
        for c in set(int(v) for v in cls.high_count):
            if c and cmp_pow2(Fraction(c, na), -rules.k_ext / 2) > 0:
                return False
    return True


def sweep(p: BranchingProgram, m: LearningMatrix, rules: ThresholdSet, d: Optional[PathDistribution] = None,
          flat_passes=(1,)) -> list:
    """Every applicable check on a complete program."""
    d = _dist(d, p, m, rules)
    out = []
    for j in range(2, p.q + 1):
        for i in range(p.T):
            cls = d.classes[(j, i)]
            for u in np.nonzero(cls.reachable)[0]:
                for a in range(m.num_a):
                    for b in (1, -1):
                        out.append(verify_edge_potential(p, m, rules, j, i, int(u), a, b, d))
        for s in range(p.widths[p.g(j, 0)]):
            anchor = int(p.copy_view(j, 0)[s])
            for i in range(p.T + 1):
                prev_starts = d.start_index(j - 1, i)
                prev_mass = d.local_of_vertex(j - 1, i).sum(axis=1)
                for vp in range(p.widths[p.g(j - 1, i)]):
                    if prev_starts[vp] != anchor or prev_mass[vp] == 0:
                        continue
                    out.append(verify_potential_growth(p, m, rules, j, s, i, vp, d))
                    if p.counter_view(j, i) is not None:
                        out.append(verify_overflow_bound(p, m, rules, j, s, i, vp, d))
    for j in flat_passes:
        for i in range(p.T + 1):
            rows = d.local_of_vertex(j, i)
            for v in range(rows.shape[0]):
                row = rows[v]
                if row.sum() == 0 or _is_significant(row, rules.sigs(j)):
                    continue
                try:
                    out.append(verify_flatness(p, m, rules, j, i, v, d))
                except PreconditionError:
                    pass
    return out


# ---------------------------------------------------------------- randomized suite

@dataclass
class SuiteInstance:
    program: BranchingProgram
    matrix: LearningMatrix
    rules: ThresholdSet
    seed: int


def random_two_pass_instance(seed: int, n: int = 3, width: int = 3) -> SuiteInstance:
    """Two-pass program with both modifications and small thresholds chosen so
    the inequalities' side conditions hold: l = 2, r_ext >= 2 log2 T + 3,
    l_sigv >= 2 l_sigs[1] + 3 + 2 log2 T, l_high < floor(log2 |X|)."""
    from ..branching_program import modify_attach_counters, modify_remember_pass, random_program
    from ..learning_matrix import make_rng
    from .engine import counter_hook

    rng = make_rng(seed)
    r_len = int(rng.integers(1, 3))
    T = 2 ** r_len
    m = LearningMatrix.parity(n) if rng.integers(0, 2) == 0 else LearningMatrix.random(n, n, int(rng.integers(0, 1 << 30)))
    l_bias = int(rng.integers(1, 4))
    k_ext = int(rng.integers(1, 3))
    rules = ThresholdSet.custom(2, [1, Fraction(3, 2)], 2 + 3 + 2 * r_len, 2, [None, l_bias], k_ext,
                                2 * r_len + 3, r_len=r_len, l_flat=3)
    p = random_program(rng, m.num_a, m.num_x, T, 2, width)
    p = modify_remember_pass(p, 2)
    p = modify_attach_counters(p, 2, counter_hook(m, rules))
    return SuiteInstance(p, m, rules, seed)


@dataclass
class SuiteReport:
    instances: int = 0
    checks: dict = field(default_factory=dict)  # lemma -> count
    violations: list = field(default_factory=list)  # (seed, LemmaCheck)
    anomalies: int = 0
    high_size_violations: int = 0
    conservation_failures: int = 0

    @property
    def all_hold(self) -> bool:
        return not self.violations and not self.high_size_violations and not self.conservation_failures

    def to_dict(self) -> dict:
        return {"instances": self.instances, "checks": dict(sorted(self.checks.items())),
                "violations": [{"seed": s, **c.to_dict()} for s, c in self.violations],
                "anomalies": self.anomalies, "high_size_violations": self.high_size_violations,
                "conservation_failures": self.conservation_failures, "all_hold": self.all_hold}


def run_lemma_suite(instances: int, seed: int) -> SuiteReport:
    rep = SuiteReport()
    for k in range(instances):
        inst = random_two_pass_instance(seed * 1_000_003 + k)
        d = run_engine(inst.program, inst.matrix, inst.rules)
        rep.instances += 1
        if not d.conserved():
            rep.conservation_failures += 1
        if not high_size_ok(d, inst.rules):
            rep.high_size_violations += 1
        for c in sweep(inst.program, inst.matrix, inst.rules, d):
            rep.checks[c.lemma] = rep.checks.get(c.lemma, 0) + 1
            if "anomaly" in c.details:
                rep.anomalies += 1
            if not c.holds:
                rep.violations.append((inst.seed, c))
    return rep
