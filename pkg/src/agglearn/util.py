"""Shared plumbing: seeded RNG construction, config hashing, JSON-lines I/O."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np


def make_rng(seed, *stream) -> np.random.Generator:
    """Return a counter-based generator for a 64-bit seed.

    Extra integers in `stream` derive independent substreams (one per
    trial / run / collection) that stay reproducible under reordering.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def config_hash(obj) -> str:
    """Hex digest of a JSON-serializable object, stable across runs."""
    canon = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def write_jsonl(path, records) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def as_float_list(arr) -> list:
    return [float(v) for v in np.asarray(arr).ravel()]
