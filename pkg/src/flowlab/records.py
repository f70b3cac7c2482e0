"""Verification records, deterministic seeding, and stable serialization."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

PASS = "pass"
FAIL = "fail"
INCONCLUSIVE = "inconclusive"
OUT_OF_REGIME = "out_of_regime"


def canonical_json(obj) -> str:
    """Stable JSON text: sorted keys, compact separators, no NaN."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def digest_inputs(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


def task_seed(global_seed: int, task_name: str) -> int:
    """Per-task seed as a pure function of (global seed, task name)."""
    h = hashlib.sha256(f"{global_seed}:{task_name}".encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big")


def fmt17(x) -> str:
    # 17 significant digits round-trips IEEE doubles
    return "%.17g" % float(x)


@dataclass
class VerificationRecord:
    name: str
    inputs_digest: str
    lhs: float
    rhs: float
    ratio: float
    fitted_constants: dict = field(default_factory=dict)
    status: str = PASS
    error_estimate: float = 0.0
    seed: int | None = None

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("lhs", "rhs", "ratio", "error_estimate"):
            d[k] = fmt17(d[k])
        d["fitted_constants"] = {k: fmt17(v) for k, v in self.fitted_constants.items()}
        return d


def write_csv(path, fieldnames, rows) -> None:
    """One row per dict; floats serialized with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames)
        w.writeheader()
        for row in rows:
            w.writerow({k: fmt17(v) if isinstance(v, float) else v for k, v in row.items()})


def write_json(path, obj) -> None:
    Path(path).write_text(canonical_json(obj) + "\n")


def round_trip_check(record: VerificationRecord) -> bool:
    d = record.to_dict()
    return json.loads(canonical_json(d)) == d
