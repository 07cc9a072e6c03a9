"""Threshold sets for the stopping rules.

All thresholds are exponents: a state is significant when its posterior
2-norm reaches ``2^{l_sigs[j]} / |X|``, and so on. Values are kept as
``Fraction`` so comparisons against powers of two are exact.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from ..exact import as_fraction


def _fr(v):
    return None if v is None else as_fraction(v)


@dataclass(frozen=True)
class ThresholdSet:
    l: Fraction
    l_sigs: tuple  # per pass, index 0 is pass 1
    l_sigv: Fraction
    l_high: Fraction
    l_bias: tuple  # per pass, index 0 (pass 1) unused
    k_ext: Fraction
    r_ext: Fraction
    r_len: Optional[Fraction] = None  # T = 2^r_len; None means "use the program length"
    l_flat: Optional[Fraction] = None
    preset: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "l", as_fraction(self.l))
        object.__setattr__(self, "l_sigs", tuple(as_fraction(v) for v in self.l_sigs))
        object.__setattr__(self, "l_bias", tuple(_fr(v) for v in self.l_bias))
        for name in ("l_sigv", "l_high", "k_ext", "r_ext"):
            object.__setattr__(self, name, as_fraction(getattr(self, name)))
        object.__setattr__(self, "r_len", _fr(self.r_len))
        object.__setattr__(self, "l_flat", _fr(self.l_flat))
        if len(self.l_bias) != len(self.l_sigs):
            raise ValueError("l_sigs and l_bias need one entry per pass")

    @property
    def passes(self) -> int:
        return len(self.l_sigs)

    def sigs(self, j: int) -> Fraction:
        return self.l_sigs[j - 1]

    def bias(self, j: int) -> Fraction:
        v = self.l_bias[j - 1]
        return Fraction(0) if v is None else v

    def flat(self) -> Fraction:
        return 3 * self.l_sigs[0] if self.l_flat is None else self.l_flat

    # presets
    @classmethod
    def two_pass_table1(cls, l, k_ext, r_ext, r_len=None) -> "ThresholdSet":
        l = as_fraction(l)
        return cls(l, (l, 18 * l), 50 * l, l, (None, 14 * l), k_ext, r_ext, r_len, 3 * l, "two_pass_table1")

    @classmethod
    def multi_pass_table2(cls, l, q: int, k_ext, r_ext, r_len=None) -> "ThresholdSet":
        l = as_fraction(l)
        sigs = tuple(l * 100 ** (3 ** (j - 1) - 1) for j in range(1, q + 1))
        bias = tuple(l * Fraction(100 ** (3 ** (j - 1) - 1) - 1, 2) for j in range(1, q + 1))
        return cls(l, sigs, l * 100 ** (3 ** (q - 1)), l, bias, k_ext, r_ext, r_len, l * 100, "multi_pass_table2")

    @classmethod
    def custom(cls, l, l_sigs: Sequence, l_sigv, l_high, l_bias: Sequence, k_ext, r_ext, r_len=None,
               l_flat=None) -> "ThresholdSet":
        return cls(l, tuple(l_sigs), l_sigv, l_high, tuple(l_bias), k_ext, r_ext, r_len, l_flat, "custom")

    def to_dict(self) -> dict:
        s = lambda v: None if v is None else str(v)
        return {
            "preset": self.preset, "l": s(self.l), "l_sigs": [s(v) for v in self.l_sigs],
            "l_sigv": s(self.l_sigv), "l_high": s(self.l_high), "l_bias": [s(v) for v in self.l_bias],
            "k_ext": s(self.k_ext), "r_ext": s(self.r_ext), "r_len": s(self.r_len), "l_flat": s(self.l_flat),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdSet":
        f = lambda v: None if v is None else Fraction(v)
        return cls(f(d["l"]), tuple(f(v) for v in d["l_sigs"]), f(d["l_sigv"]), f(d["l_high"]),
                   tuple(f(v) for v in d["l_bias"]), f(d["k_ext"]), f(d["r_ext"]), f(d.get("r_len")),
                   f(d.get("l_flat")), d.get("preset", "custom"))

    @classmethod
    def from_json(cls, text: str) -> "ThresholdSet":
        return cls.from_dict(json.loads(text))
