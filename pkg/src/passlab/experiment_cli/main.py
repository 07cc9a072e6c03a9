"""Command-line entry point: ``passlab <subcommand> ...``.

Every run appends one JSON line to ``--out`` (stdout by default). Exit codes:
0 success, 2 usage error, 3 invariant violation, 4 budget or limit refusal.
The worker count for trial fan-out comes from ``PASSLAB_WORKERS``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from ..block_circuit import AccountingError, StreamOrderError
from ..branching_program import (
    StateOverflow, constant_program, load as load_program, modify_all, random_program, success_probability_mc,
)
from ..extractor_cert import (
    ExtractorParams, RefusedError, certify_exhaustive, certify_parseval, refute_montecarlo,
)
from ..learning_matrix import LearningMatrix, make_rng, resolve
from ..multipass_learner import (
    BRUTEFORCE_LEARNER, COUNTER_LEARNER, GE_LEARNER, BudgetViolation, LearnerConfig, learn_bruteforce,
    learn_multipass, learn_onepass_ge,
)
from ..posterior_engine import BudgetExceeded, ThresholdSet, counter_hook, success_probability_exact
from ..posterior_engine.verifiers import run_lemma_suite
from .records import ExperimentRecord, decimal, rational, write_csv
from .streams import generate_stream

EXIT_OK, EXIT_USAGE, EXIT_INVARIANT, EXIT_REFUSED = 0, 2, 3, 4
WORKERS_ENV = "PASSLAB_WORKERS"


class UsageError(ValueError):
    pass


class InvariantViolation(AssertionError):
    pass


def workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be an integer, got {raw!r}")


def _map(fn, items: list) -> list:
    """Ordered map, fanned out over worker processes when configured."""
    w = workers()
    if w == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=w) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * w))))


def _percentiles(values) -> dict:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return {}
    return {k: decimal(np.percentile(arr, p)) for k, p in (("p50", 50), ("p90", 90), ("p99", 99))} | \
        {"max": decimal(arr.max())}


# ---------------------------------------------------------------- subcommands

def cmd_certify(args) -> ExperimentRecord:
    m = resolve(args.matrix)
    params = ExtractorParams(Fraction(args.k), Fraction(args.l), Fraction(args.r))
    if args.mode == "exhaustive":
        cert = certify_exhaustive(m, params, cap=args.cap)
    elif args.mode == "parseval":
        cert = certify_parseval(m, params)
    else:
        cert = refute_montecarlo(m, params, args.trials, args.seed)
    cfg = {"matrix": args.matrix, "mode": args.mode, "k": args.k, "l": args.l, "r": args.r}
    return ExperimentRecord("certify-extractor", cfg, args.seed, [cert.to_dict()], {"verdict": cert.verdict})


def _program(args, m: LearningMatrix):
    if args.program:
        return load_program(args.program)
    if args.constant is not None:
        return constant_program(m.num_a, m.num_x, args.T, args.q, args.constant)
    return random_program(make_rng(args.program_seed), m.num_a, m.num_x, args.T, args.q, args.width)


def cmd_simulate(args) -> ExperimentRecord:
    m = resolve(args.matrix)
    if args.learner:
        n = m.n_x
        learner = {"onepass_ge": lambda: GE_LEARNER(n), "bruteforce": lambda: BRUTEFORCE_LEARNER(m),
                   "counter": lambda: COUNTER_LEARNER(m, args.q)}[args.learner]()
        est = success_probability_mc(learner, m, args.trials, args.seed, T=args.T)
        subject = args.learner
    else:
        p = _program(args, m)
        est = success_probability_mc(p, m, args.trials, args.seed)
        subject = "program"
    cfg = {"matrix": args.matrix, "subject": subject, "T": args.T, "q": args.q, "trials": args.trials}
    agg = {"success": decimal(est.estimate), "halfwidth": decimal(est.halfwidth), "successes": est.successes}
    return ExperimentRecord("simulate", cfg, args.seed, [], agg)


def cmd_success(args) -> ExperimentRecord:
    m = resolve(args.matrix)
    p = _program(args, m)
    rules = None
    if args.thresholds:
        with open(args.thresholds) as fh:
            rules = ThresholdSet.from_json(fh.read())
    if args.modify:
        p = modify_all(p, counter_hook(m, rules) if rules is not None else None)
    res = success_probability_exact(p, m, rules, engine=args.engine)
    cfg = {"matrix": args.matrix, "T": p.T, "q": p.q, "widths": list(p.widths), "engine": args.engine,
           "thresholds": None if rules is None else rules.to_dict(), "modified": bool(args.modify)}
    agg = {"success": rational(res.success), "joint": rational(res.joint),
           "stop_probability": rational(res.stop_probability)}
    return ExperimentRecord("success-prob", cfg, None, [], agg)


def cmd_verify(args) -> ExperimentRecord:
    rep = run_lemma_suite(args.instances, args.seed)
    rec = ExperimentRecord("verify-lemmas", {"instances": args.instances}, args.seed,
                           [{"seed": s, **c.to_dict()} for s, c in rep.violations],
                           {"all_hold": rep.all_hold, "checks": rep.checks, "anomalies": rep.anomalies,
                            "high_size_violations": rep.high_size_violations,
                            "conservation_failures": rep.conservation_failures})
    if not rep.all_hold:
        rec.status = "invariant_violation"
    return rec


def _multipass_trial(job):
    n, q, seed, t = job
    m = LearningMatrix.parity(n)
    cfg = LearnerConfig.derive(n, q)
    st = generate_stream(m, None, cfg.total_samples, [seed, t])
    try:
        out = learn_multipass(cfg, st, m)
    except (BudgetViolation, AssertionError) as exc:
        return {"trial": t, "error": str(exc)}
    return {"trial": t, "x": st.x, "guess": out.guess, "success": out.correct(st.x),
            "attempts": out.attempts_used, **out.meter.to_dict()}


def cmd_multipass(args) -> ExperimentRecord:
    cfg = LearnerConfig.derive(args.n, args.q)
    rows = _map(_multipass_trial, [(args.n, args.q, args.seed, t) for t in range(args.trials)])
    rec = ExperimentRecord("learn-multipass", {"learner": cfg.to_dict(), "trials": args.trials}, args.seed, rows)
    bad = [r for r in rows if "error" in r or r["passes_used"] > cfg.q or r["samples_touched"] > cfg.q * cfg.n
           or r["peak_live_bits"] > cfg.memory_bound]
    ok = [r for r in rows if "error" not in r]
    rec.aggregate = {"success_rate": decimal(sum(r["success"] for r in ok) / max(1, len(rows))),
                     "failures": sum(1 for r in ok if r["guess"] is None), "trials": len(rows),
                     "budget_violations": len(bad)}
    rec.meters = {k: _percentiles([r[k] for r in ok]) for k in ("passes_used", "samples_touched", "peak_live_bits")}
    if bad:
        rec.status = "invariant_violation"
    return rec


def _baseline_trial(job):
    which, n, T, seed, t = job
    m = LearningMatrix.parity(n)
    st = generate_stream(m, None, max(T, 1), [seed, t])
    if which == "onepass_ge":
        out = learn_onepass_ge(n, st, T)
    else:
        out = learn_bruteforce(n, st, T, m)
    return {"trial": t, "learner": which, "x": st.x, "guess": out.guess, "success": out.correct(st.x),
            **out.meter.to_dict()}


def cmd_baselines(args) -> ExperimentRecord:
    T = args.n if args.T is None else args.T
    names = ["onepass_ge", "bruteforce"] if args.which == "both" else [args.which]
    rows = []
    agg = {}
    for name in names:
        part = _map(_baseline_trial, [(name, args.n, T, args.seed, t) for t in range(args.trials)])
        rows += part
        agg[name] = decimal(sum(r["success"] for r in part) / max(1, len(part)))
    cfg = {"n": args.n, "T": T, "trials": args.trials, "learners": names}
    return ExperimentRecord("baselines", cfg, args.seed, rows, {"success_rate": agg})


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="passlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--out", default="-", help="JSON-lines file to append to (default stdout)")
        if seed:
            p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("certify-extractor", help="certify or refute the L2-extractor property")
    p.add_argument("--matrix", default="parity:3")
    p.add_argument("--k", default="1")
    p.add_argument("--l", default="1")
    p.add_argument("--r", default="1")
    p.add_argument("--mode", choices=("exhaustive", "parseval", "montecarlo"), default="exhaustive")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--cap", type=int, default=16)
    common(p)
    p.set_defaults(func=cmd_certify)

    def program_args(p):
        p.add_argument("--matrix", default="parity:3")
        p.add_argument("--program", help="BP v1 file")
        p.add_argument("--constant", type=int, help="constant program guessing this concept")
        p.add_argument("--T", type=int, default=3)
        p.add_argument("--q", type=int, default=1)
        p.add_argument("--width", type=int, default=3)
        p.add_argument("--program-seed", type=int, default=0)

    p = sub.add_parser("simulate", help="Monte Carlo success probability")
    program_args(p)
    p.add_argument("--learner", choices=("onepass_ge", "bruteforce", "counter"))
    p.add_argument("--trials", type=int, default=10000)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("success-prob", help="exact success probability")
    program_args(p)
    p.add_argument("--thresholds", help="ThresholdSet JSON file; enables stopping rules")
    p.add_argument("--modify", action="store_true", help="apply both modifications to passes >= 2")
    p.add_argument("--engine", choices=("auto", "enumerate", "dp"), default="auto")
    common(p, seed=False)
    p.set_defaults(func=cmd_success, seed=None)

    p = sub.add_parser("verify-lemmas", help="randomized exact lemma suite")
    p.add_argument("--instances", type=int, default=50)
    common(p)
    p.set_defaults(func=cmd_verify, seed=7)

    p = sub.add_parser("learn-multipass", help="block elimination learner")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--q", type=int, default=1024)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--csv", help="optional per-trial table")
    common(p)
    p.set_defaults(func=cmd_multipass)

    p = sub.add_parser("baselines", help="one-pass elimination and brute force")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--T", type=int)
    p.add_argument("--which", choices=("onepass_ge", "bruteforce", "both"), default="both")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--csv", help="optional per-trial table")
    common(p)
    p.set_defaults(func=cmd_baselines)
    return ap


def run_experiment(argv: Sequence[str]) -> ExperimentRecord:
    """Parse and run; raises on usage errors and refusals."""
    args = build_parser().parse_args(list(argv))
    for name in ("trials", "instances"):
        if getattr(args, name, 1) is not None and getattr(args, name, 1) < 1:
            raise UsageError(f"--{name} must be >= 1")
    rec = args.func(args)
    rec.write(args.out)
    if getattr(args, "csv", None):
        write_csv(args.csv, rec.trials)
    return rec


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        rec = run_experiment(argv)
    except SystemExit as exc:  # argparse
        return EXIT_USAGE if exc.code else EXIT_OK
    except (RefusedError, BudgetExceeded, StateOverflow) as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (BudgetViolation, StreamOrderError, AccountingError, AssertionError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (UsageError, ValueError, FileNotFoundError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if rec.status == "invariant_violation":
        seed = rec.seed
        print(f"invariant violation detected; reproduce with --seed {seed}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
