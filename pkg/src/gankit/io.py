"""File plumbing shared by the CLI: atomic writes, CSV point sets, JSON-lines."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def format_csv(columns: dict) -> str:
    """Columns of equal length -> CSV text with a header row.

    Integer columns are written as integers; floats use ``repr`` so they
    parse back to the identical double.
    """
    names = list(columns)
    cols = [np.asarray(columns[k]).ravel() for k in names]
    n = {len(c) for c in cols}
    if len(n) > 1:
        raise ValueError(f"columns have unequal lengths: {dict(zip(names, map(len, cols)))}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    fmts = [str if c.dtype.kind in "iu" else (lambda v: repr(float(v))) for c in cols]
    for row in zip(*cols):
        w.writerow([f(v) for f, v in zip(fmts, row)])
    return buf.getvalue()


def write_points_csv(path, points, header: bool = True) -> None:
    """One point per row; columns named x0, x1, ..."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow([f"x{j}" for j in range(points.shape[1])])
    for row in points:
        w.writerow([repr(float(v)) for v in row])
    atomic_write_text(Path(path), buf.getvalue())


def read_points_csv(path) -> np.ndarray:
    """Read a CSV point file; a non-numeric first row is treated as a header."""
    path = Path(path)
    with path.open(newline="") as f:
        rows = [r for r in csv.reader(f) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: no rows")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]
    if not rows:
        raise ValueError(f"{path}: header but no data rows")
    width = len(rows[0])
    out = np.empty((len(rows), width))
    for i, r in enumerate(rows):
        if len(r) != width:
            raise ValueError(f"{path}: row {i + 1} has {len(r)} fields, expected {width}")
        try:
            out[i] = [float(c) for c in r]
        except ValueError as exc:
            raise ValueError(f"{path}: row {i + 1}: {exc}") from None
    return out


def read_csv_columns(path) -> dict:
    with Path(path).open(newline="") as f:
        rows = list(csv.reader(f))
    names, data = rows[0], rows[1:]
    return {name: np.array([float(r[j]) for r in data]) for j, name in enumerate(names)}


def dumps_jsonl(records) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def read_jsonl(path) -> list:
    with Path(path).open() as f:
        return [json.loads(line) for line in f if line.strip()]
