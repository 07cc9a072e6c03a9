"""Exact comparisons of rationals against powers of two with rational exponents.

Every threshold in the stopping rules and extractor definitions has the form
``2**e`` with real ``e``. Thresholds are stored as ``Fraction`` and compared
without rounding, so a value that sits exactly on a threshold is classified
the same way on every platform.
"""
from __future__ import annotations

from fractions import Fraction
from numbers import Rational
from typing import Union

Number = Union[int, float, Fraction]


def as_fraction(x: Number) -> Fraction:
    """Convert to ``Fraction``; floats go through their shortest repr so that
    ``0.3`` means 3/10 rather than the nearest binary double."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, Rational)):
        return Fraction(x)
    if isinstance(x, float):
        if x != x or x in (float("inf"), float("-inf")):
            raise ValueError(f"non-finite threshold {x!r}")
        return Fraction(repr(x))
    return Fraction(x)


def cmp_pow2(value: Number, exponent: Number) -> int:
    """Sign of ``value - 2**exponent`` (``value`` must be >= 0)."""
    value = as_fraction(value)
    exponent = as_fraction(exponent)
    if value < 0:
        raise ValueError("value must be non-negative")
    if value == 0:
        return -1
    p, q = value.numerator, value.denominator
    # 2**(bp-bq-1) < value < 2**(bp-bq+1)
    approx = p.bit_length() - q.bit_length()
    if exponent >= approx + 1:
        return -1
    if exponent <= approx - 1:
        return 1
    u, w = exponent.numerator, exponent.denominator
    lhs = p ** w
    rhs = q ** w
    if u >= 0:
        rhs <<= u
    else:
        lhs <<= -u
    return (lhs > rhs) - (lhs < rhs)


def ge_pow2(value: Number, exponent: Number) -> bool:
    return cmp_pow2(value, exponent) >= 0


def le_pow2(value: Number, exponent: Number) -> bool:
    return cmp_pow2(value, exponent) <= 0


def floor_log2(value: Number) -> int:
    """``floor(log2(value))`` for a positive rational, exactly."""
    value = as_fraction(value)
    if value <= 0:
        raise ValueError("log of a non-positive number")
    p, q = value.numerator, value.denominator
    if p >= q:
        return (p // q).bit_length() - 1
    # value < 1: smallest k with 2**k <= p/q, k negative
    k = -((q // p).bit_length() - 1)
    if Fraction(2) ** k > value:
        k -= 1
    while Fraction(2) ** (k + 1) <= value:
        k += 1
    return k


def pow2(exponent: Number) -> float:
    """Float value of ``2**exponent`` for reporting only."""
    return float(2.0 ** float(as_fraction(exponent)))
