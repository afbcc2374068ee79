"""File formats: point CSVs, binary field dumps, sweep tables and JSON manifests."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from pathlib import Path

import numpy as np

from .errors import SedlabError

FIELD_MAGIC = b"CLSF"
FIELD_VERSION = 1
_HEADER = struct.Struct("<4sIQQQ")


def _fmt(x) -> str:
    return repr(float(x))


def write_points_csv(path, points: np.ndarray, d: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j + 1}" for j in range(d)])
        for p in np.asarray(points, dtype=float).reshape(-1, d):
            w.writerow([_fmt(c) for c in p])


def read_points_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    d = len(rows[0])
    return np.array([[float(c) for c in row] for row in rows[1:]], dtype=float).reshape(-1, d)


def write_field(path, values: np.ndarray, d: int, n: int) -> None:
    """Binary dump: ``CLSF``, u32 version, u64 d, n, DOF count, then little-endian f64 values."""
    vals = np.ascontiguousarray(values, dtype="<f8").ravel()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FIELD_MAGIC, FIELD_VERSION, d, n, len(vals)))
        fh.write(vals.tobytes())


def read_field(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise SedlabError(f"{path}: truncated field header")
        magic, version, d, n, count = _HEADER.unpack(head)
        if magic != FIELD_MAGIC:
            raise SedlabError(f"{path}: bad magic {magic!r}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if len(data) != count:
        raise SedlabError(f"{path}: expected {count} values, found {len(data)}")
    return {"version": version, "d": d, "n": n, "dofs": count}, data.astype(float)


def write_table(path, rows: list, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) if isinstance(row[c], float) else row[c] for c in columns])


def read_table(path) -> list:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
