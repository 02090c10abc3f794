"""Canonical JSON helpers for checkpoints, records, and reports.

Canonical means sorted keys, compact separators, and a trailing newline,
so that identical state always serializes to identical bytes.  Floats go
through Python's repr, which round-trips float64 exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def canonical_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(canonical_dumps(obj), encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def encode_array(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def decode_array(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])
