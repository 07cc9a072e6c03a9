"""JSON-lines experiment records.

Numbers are tagged: ``{"rational": "1/8"}`` when the producing engine was
exact, ``{"decimal": 0.8}`` otherwise. Keys are sorted so that two runs with
the same seed and version agree byte for byte once ``timestamp`` is removed.
"""
from __future__ import annotations

import datetime as _dt
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Union

from .. import __version__
from ..learning_matrix import PRNG_ID

SCHEMA_VERSION = "passlab.record/1"

REQUIRED = {
    "schema": str, "command": str, "config": dict, "seed": (int, type(None)), "trials": list,
    "aggregate": dict, "meters": dict, "version": str, "prng": str, "timestamp": str, "status": str,
}


def rational(v) -> dict:
    return {"rational": str(Fraction(v))}


def decimal(v) -> dict:
    return {"decimal": float(v)}


def untag(v):
    if isinstance(v, dict) and set(v) == {"rational"}:
        return Fraction(v["rational"])
    if isinstance(v, dict) and set(v) == {"decimal"}:
        return v["decimal"]
    return v


@dataclass
class ExperimentRecord:
    command: str
    config: dict
    seed: Optional[int]
    trials: list = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    meters: dict = field(default_factory=dict)
    status: str = "ok"  # ok | invariant_violation | refused
    version: str = __version__
    prng: str = PRNG_ID
    timestamp: str = ""

    def to_dict(self) -> dict:
        return {"schema": SCHEMA_VERSION, "command": self.command, "config": self.config, "seed": self.seed,
                "trials": self.trials, "aggregate": self.aggregate, "meters": self.meters,
                "status": self.status, "version": self.version, "prng": self.prng,
                "timestamp": self.timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def write(self, path: Union[str, Path, None]) -> str:
        line = self.to_json()
        if path is None or str(path) == "-":
            print(line)
        else:
            with open(path, "a") as fh:
                fh.write(line + "\n")
        return line


def validate(obj: dict) -> list:
    """Problems with a decoded record; empty when it matches the schema."""
    problems = []
    for key, typ in REQUIRED.items():
        if key not in obj:
            problems.append(f"missing field {key}")
        elif not isinstance(obj[key], typ):
            problems.append(f"field {key} has type {type(obj[key]).__name__}")
    if obj.get("schema") != SCHEMA_VERSION:
        problems.append(f"unknown schema {obj.get('schema')!r}")
    if obj.get("status") not in ("ok", "invariant_violation", "refused"):
        problems.append("bad status")
    return problems


def strip_timestamp(line: str) -> str:
    obj = json.loads(line)
    obj.pop("timestamp", None)
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_csv(path: Union[str, Path], rows: list) -> None:
    import csv
    if not rows:
        Path(path).write_text("")
        return
    keys = sorted({k for r in rows for k in r})
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: json.dumps(r[k]) if isinstance(r.get(k), (dict, list)) else r.get(k) for k in keys})
