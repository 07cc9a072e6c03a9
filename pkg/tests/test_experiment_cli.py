from __future__ import annotations

import json
import subprocess
import sys
from fractions import Fraction

import pytest

from passlab.branching_program import random_program, store
from passlab.experiment_cli.main import main, run_experiment
from passlab.experiment_cli.records import SCHEMA_VERSION, strip_timestamp, untag, validate
from passlab.experiment_cli.streams import from_pairs, generate_stream
from passlab.learning_matrix import PRNG_ID, LearningMatrix, make_rng
from passlab.posterior_engine import ThresholdSet


def _run(tmp_path, *argv):
    out = tmp_path / "rec.jsonl"
    code = main([*argv, "--out", str(out)])
    lines = out.read_text().splitlines() if out.exists() else []
    return code, [json.loads(ln) for ln in lines], lines


def test_generate_stream_golden():
    # frozen from the Philox generator on first recording
    m = LearningMatrix.parity(3)
    s = generate_stream(m, None, 1, 0)
    assert (s.x, s.pairs()) == (1, [(0, 1)])
    s = generate_stream(LearningMatrix.parity(8), None, 4, 2026)
    assert (s.x, s.pairs()) == (14, [(43, 1), (106, 1), (1, 1), (79, -1)])
    assert PRNG_ID == "numpy.Philox4x64-10"


def test_stream_properties():
    m = LearningMatrix.parity(4)
    s1, s2 = generate_stream(m, None, 50, 9), generate_stream(m, None, 50, 9)
    assert s1.pairs() == s2.pairs() and s1.x == s2.x
    assert (generate_stream(m, 0, 30, 1).b == 1).all()
    assert s1.check(m)
    assert not from_pairs(m, 3, [(1, 1)]).check(m)
    with pytest.raises(ValueError):
        generate_stream(m, None, 0, 1)
    with pytest.raises(ValueError):
        s1.a[0] = 1


def test_success_prob_constant(tmp_path):
    code, recs, _ = _run(tmp_path, "success-prob", "--matrix", "parity:3", "--constant", "0", "--T", "2")
    assert code == 0
    assert untag(recs[0]["aggregate"]["success"]) == Fraction(1, 8)
    assert recs[0]["aggregate"]["success"] == {"rational": "1/8"}


def test_success_prob_with_rules_and_program_file(tmp_path):
    m = LearningMatrix.parity(2)
    p = random_program(make_rng(1), 4, 4, 2, q=2)
    store(p, tmp_path / "p.bp")
    rules = ThresholdSet.custom(1, [1, 2], 3, 1, [None, 1], 1, 3, r_len=1)
    (tmp_path / "t.json").write_text(json.dumps(rules.to_dict()))
    code, recs, _ = _run(tmp_path, "success-prob", "--matrix", "parity:2", "--program", str(tmp_path / "p.bp"),
                         "--thresholds", str(tmp_path / "t.json"), "--modify", "--engine", "dp")
    assert code == 0
    agg = recs[0]["aggregate"]
    assert 0 <= untag(agg["stop_probability"]) <= 1


def test_verify_lemmas(tmp_path):
    code, recs, _ = _run(tmp_path, "verify-lemmas", "--instances", "5", "--seed", "7")
    assert code == 0 and recs[0]["aggregate"]["all_hold"] is True


def test_learn_multipass_record(tmp_path):
    code, recs, _ = _run(tmp_path, "learn-multipass", "--n", "8", "--q", "1024", "--trials", "100", "--seed", "1",
                         "--csv", str(tmp_path / "t.csv"))
    assert code == 0
    rec = recs[0]
    assert validate(rec) == []
    assert rec["config"]["learner"]["K"] == 2
    assert untag(rec["aggregate"]["success_rate"]) >= 0.55
    assert untag(rec["meters"]["passes_used"]["max"]) <= 1024
    assert len((tmp_path / "t.csv").read_text().splitlines()) == 101


def test_records_reproducible(tmp_path):
    argv = ["baselines", "--n", "4", "--trials", "30", "--seed", "3"]
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    _, _, a = _run(tmp_path / "a", *argv)
    _, _, b = _run(tmp_path / "b", *argv)
    assert strip_timestamp(a[0]) == strip_timestamp(b[0])
    rec = json.loads(a[0])
    assert rec["schema"] == SCHEMA_VERSION and rec["prng"] == PRNG_ID and validate(rec) == []


def test_workers_do_not_change_results(tmp_path, monkeypatch):
    argv = ["learn-multipass", "--n", "4", "--q", "32", "--trials", "20", "--seed", "2"]
    _, _, a = _run(tmp_path, *argv)
    monkeypatch.setenv("PASSLAB_WORKERS", "2")
    (tmp_path / "rec.jsonl").unlink()
    _, _, b = _run(tmp_path, *argv)
    assert strip_timestamp(a[0]) == strip_timestamp(b[0])


def test_simulate_and_certify(tmp_path):
    code, recs, _ = _run(tmp_path, "simulate", "--matrix", "parity:3", "--learner", "bruteforce", "--T", "64",
                         "--trials", "300", "--seed", "4")
    assert code == 0 and untag(recs[0]["aggregate"]["success"]) >= 0.9
    code, recs, _ = _run(tmp_path, "certify-extractor", "--matrix", "parity:3", "--k", "2", "--l", "3/2", "--r", "10")
    assert code == 0 and recs[-1]["aggregate"]["verdict"] == "refuted"


def test_exit_codes(tmp_path, capsys):
    assert main(["learn-multipass", "--n", "4", "--q", "2", "--out", str(tmp_path / "x")]) == 2
    assert main(["nonsense"]) == 2
    assert main(["baselines", "--trials", "0"]) == 2
    assert main(["certify-extractor", "--matrix", "parity:5", "--out", str(tmp_path / "x")]) == 4
    assert validate({"schema": "other"})


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "passlab.experiment_cli", "success-prob", "--constant", "0", "--T", "1"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert json.loads(out.stdout)["aggregate"]["success"] == {"rational": "1/8"}
