"""Atomic, deterministic artifact writers (CSV / JSON / JSONL)."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .dpp import ValueField
from .geometry import LABEL_NAMES
from .kernel import KernelWeights

SCHEMA_VERSION = "liftpde-artifacts/1"


def _num(v):
    """Round-trip text for a float; ints and strings pass through."""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def atomic_write(path, text: str) -> Path:
    """Write ``text`` to a sibling temp file, fsync, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, obj) -> Path:
    return atomic_write(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def write_jsonl(path, records) -> Path:
    lines = [json.dumps(_jsonable(r), sort_keys=True, allow_nan=False) for r in records]
    return atomic_write(path, "".join(line + "\n" for line in lines))


def write_csv(path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_num(v) for v in r])
    return atomic_write(path, buf.getvalue())


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def field_rows(field: ValueField):
    g = field.grid
    keep = np.flatnonzero(g.labels != 2)
    coords = g.coords[keep]
    for i, node in enumerate(keep):
        yield [int(node), *coords[i].tolist(), LABEL_NAMES[g.labels[node]], float(field.values[node])]


def write_field(path, field: ValueField) -> Path:
    """``node_id, x_1..x_n, label, value`` for interior and strip nodes."""
    header = ["node_id", *[f"x_{i + 1}" for i in range(field.grid.n)], "label", "value"]
    return write_csv(path, header, field_rows(field))


def write_weights(path, weights: KernelWeights) -> Path:
    header = [*[f"d_{i + 1}" for i in range(weights.n)], "weight"]
    return write_csv(path, header, ([*d.tolist(), w] for d, w in zip(weights.offsets, weights.weights)))


def with_schema(config: dict, **payload) -> dict:
    return {"schema": SCHEMA_VERSION, "config": config, **payload}
