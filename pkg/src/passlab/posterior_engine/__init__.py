"""Exact posterior distributions, stopping rules and lemma verifiers."""
from __future__ import annotations

from .engine import (
    BAD, BIAS_OVF, COPY, HIGH_OVF, NRULES, RULES, SIG, SIGV,
    BudgetExceeded, EdgeClassification, ExactSuccess, PathDistribution,
    classify_layer, counter_hook, dp_exact, enumerate_exact, run_engine,
    success_probability_exact,
)
from .thresholds import ThresholdSet
