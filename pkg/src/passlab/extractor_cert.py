"""Certify or refute the L2-extractor property of a learning matrix.

A matrix is a (k, l, r)-L2-extractor when every non-negative f with
``||f||_2 / ||f||_1 <= 2^l`` has at most ``2^-k |A|`` rows a with
``|<M_a, f>| >= 2^-r ||f||_1``. Ties count as bad.

The exhaustive mode only ranges over subset indicators, so a ``certified``
verdict from it means "no indicator violates", which is weaker than the
definition. The certificate records this as ``family``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .exact import as_fraction, cmp_pow2, ge_pow2, le_pow2
from .learning_matrix import LearningMatrix, make_rng

DEFAULT_EXHAUSTIVE_CAP = 16


class RefusedError(RuntimeError):
    """Search space exceeds the configured cap."""


@dataclass(frozen=True)
class ExtractorParams:
    k_ext: Fraction
    l_ext: Fraction
    r_ext: Fraction

    def __post_init__(self):
        for name in ("k_ext", "l_ext", "r_ext"):
            v = as_fraction(getattr(self, name))
            if v < 0:
                raise ValueError(f"{name} must be non-negative")
            object.__setattr__(self, name, v)


@dataclass
class Certificate:
    verdict: str  # certified | refuted | inconclusive
    mode: str  # exhaustive | parseval | montecarlo
    params: ExtractorParams
    witness: Optional[tuple] = None  # (f values, bad rows)
    trials: int = 0
    family: str = "all"
    max_bad_count: Optional[int] = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {
            "verdict": self.verdict,
            "mode": self.mode,
            "k_ext": str(self.params.k_ext),
            "l_ext": str(self.params.l_ext),
            "r_ext": str(self.params.r_ext),
            "trials": self.trials,
            "family": self.family,
            "max_bad_count": self.max_bad_count,
            "notes": list(self.notes),
        }
        if self.witness is not None:
            f, rows = self.witness
            d["witness"] = {"f": [str(v) for v in f], "bad_rows": list(rows)}
        return d


def is_bad_row(m: LearningMatrix, a: int, f, r_ext) -> bool:
    """``|<M_a, f>| >= 2^-r ||f||_1``, evaluated in exact arithmetic."""
    vals = [Fraction(v) for v in f]
    if len(vals) != m.num_x:
        raise ValueError("f has the wrong domain size")
    if any(v < 0 for v in vals):
        raise ValueError("f must be non-negative")
    total = sum(vals)
    if total == 0:
        raise ValueError("bad-row test is undefined for the zero function")
    corr = sum(m.entry(a, x) * v for x, v in enumerate(vals))
    return ge_pow2(abs(corr) / total, -as_fraction(r_ext))


def ratio_ok(f, l_ext) -> bool:
    """``||f||_2 / ||f||_1 <= 2^l``, i.e. ``|X| sum f^2 / (sum f)^2 <= 2^{2l}``."""
    vals = [Fraction(v) for v in f]
    s1 = sum(vals)
    s2 = sum(v * v for v in vals)
    return le_pow2(len(vals) * s2 / (s1 * s1), 2 * as_fraction(l_ext))


def _count_ok(count: int, num_a: int, k_ext: Fraction) -> bool:
    # count <= 2^-k |A|
    if count == 0:
        return True
    return le_pow2(Fraction(count, num_a), -k_ext)


def recheck_witness(m: LearningMatrix, p: ExtractorParams, witness) -> bool:
    """Independent exact re-verification of a refutation witness."""
    f, rows = witness
    if not ratio_ok(f, p.l_ext):
        return False
    bad = [a for a in range(m.num_a) if is_bad_row(m, a, f, p.r_ext)]
    return list(rows) == bad and not _count_ok(len(bad), m.num_a, p.k_ext)


def _indicator(mask: int, size: int) -> tuple:
    return tuple(int((mask >> x) & 1) for x in range(size))


def certify_exhaustive(m: LearningMatrix, p: ExtractorParams, cap: int = DEFAULT_EXHAUSTIVE_CAP) -> Certificate:
    """Check every nonempty subset indicator of X; lowest bitmask witness wins."""
    nx, na = m.num_x, m.num_a
    if nx > cap:
        raise RefusedError(f"|X| = {nx} exceeds the exhaustive cap {cap}; use montecarlo mode")
    masks = np.arange(1, 1 << nx, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(nx)[None, :]) & 1).astype(np.int64)
    sizes = bits.sum(axis=1)
    sums = np.abs(bits @ m.table.T.astype(np.int64))  # (subsets, |A|)

    # admissible sizes: |X|/|S| <= 2^{2l}
    size_ok = np.array([False] + [le_pow2(Fraction(nx, s), 2 * p.l_ext) for s in range(1, nx + 1)])
    # bad[s, t]: |sum| = t over |S| = s meets the threshold
    bad_tab = np.zeros((nx + 1, nx + 1), dtype=bool)
    for s in range(1, nx + 1):
        for t in range(0, s + 1):
            bad_tab[s, t] = ge_pow2(Fraction(t, s), -p.r_ext)
    counts = bad_tab[sizes[:, None], sums].sum(axis=1)
    count_ok = np.array([_count_ok(c, na, p.k_ext) for c in range(na + 1)])

    admissible = size_ok[sizes]
    cert = Certificate("certified", "exhaustive", p, trials=int(admissible.sum()), family="indicators")
    cert.max_bad_count = int(counts[admissible].max()) if admissible.any() else 0
    violating = np.nonzero(admissible & ~count_ok[counts])[0]
    if len(violating):
        idx = int(violating[0])
        f = _indicator(int(masks[idx]), nx)
        rows = tuple(int(a) for a in np.nonzero(bad_tab[sizes[idx], sums[idx]])[0])
        cert.verdict = "refuted"
        cert.witness = (f, rows)
        if not recheck_witness(m, p, cert.witness):
            raise AssertionError("exhaustive witness failed independent re-check")
    return cert


def parseval_bound(m: LearningMatrix, l_ext, r_ext) -> Fraction:
    """``k = max(0, n - 2l - 2r)`` for parity.

    <M_a, f> is the Fourier coefficient of f at a, so Parseval gives
    ``sum_a <M_a, f>^2 = ||f||_2^2 <= 2^{2l} ||f||_1^2``; at most ``2^{2l+2r}``
    coefficients can reach ``2^-r ||f||_1``.
    """
    if m.kind != "parity":
        raise ValueError("the Fourier certificate only applies to parity")
    k = Fraction(m.n_x) - 2 * as_fraction(l_ext) - 2 * as_fraction(r_ext)
    return max(Fraction(0), k)


def certify_parseval(m: LearningMatrix, p: ExtractorParams) -> Certificate:
    k = parseval_bound(m, p.l_ext, p.r_ext)
    verdict = "certified" if p.k_ext <= k else "inconclusive"
    return Certificate(verdict, "parseval", p, notes=[f"parseval k_ext = {k}"])


def _random_function(rng: np.random.Generator, nx: int, trial: int) -> np.ndarray:
    if trial % 2:
        density = rng.uniform(0.05, 1.0)
        f = (rng.random(nx) < density).astype(np.int64)
    else:
        support = rng.integers(1, nx + 1)
        f = np.zeros(nx, dtype=np.int64)
        idx = rng.choice(nx, size=support, replace=False)
        f[idx] = rng.integers(1, 9, size=support)
    if not f.any():
        f[rng.integers(nx)] = 1
    return f


def refute_montecarlo(m: LearningMatrix, p: ExtractorParams, trials: int, seed) -> Certificate:
    """Search random non-negative integer functions for a violation.

    Trial 0 is f = 1; odd trials are random indicators, even trials random
    sparse functions with values in 1..8. Never certifies.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = make_rng(seed)
    nx, na = m.num_x, m.num_a
    table = m.table.astype(np.int64)
    two_l = 2 * p.l_ext
    for t in range(trials):
        f = np.ones(nx, dtype=np.int64) if t == 0 else _random_function(rng, nx, t)
        s1 = int(f.sum())
        s2 = int((f * f).sum())
        if not le_pow2(Fraction(nx * s2, s1 * s1), two_l):
            continue
        corr = np.abs(table @ f)
        bad = [a for a in range(na) if ge_pow2(Fraction(int(corr[a]), s1), -p.r_ext)]
        if not _count_ok(len(bad), na, p.k_ext):
            witness = (tuple(int(v) for v in f), tuple(bad))
            if not recheck_witness(m, p, witness):
                raise AssertionError("montecarlo witness failed independent re-check")
            return Certificate("refuted", "montecarlo", p, witness=witness, trials=t + 1, family="random")
    return Certificate("inconclusive", "montecarlo", p, trials=trials, family="random")


def max_bad_count_exhaustive(m: LearningMatrix, l_ext, r_ext, cap: int = DEFAULT_EXHAUSTIVE_CAP) -> int:
    """Largest bad-row count over admissible indicators (k set to 0)."""
    cert = certify_exhaustive(m, ExtractorParams(0, l_ext, r_ext), cap)
    return cert.max_bad_count


def parseval_count_ok(count: int, l_ext, r_ext) -> bool:
    """``count <= 2^{2l+2r}``, exactly."""
    if count == 0:
        return True
    return cmp_pow2(Fraction(count), 2 * as_fraction(l_ext) + 2 * as_fraction(r_ext)) <= 0
