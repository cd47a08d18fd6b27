"""CSV / JSON helpers with line-numbered error messages and atomic writes."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import InputError


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    atomic_write_text(path, buf.getvalue())


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def read_table(path, columns: list[str], numeric: list[str] | None = None) -> dict[str, list]:
    """Read a headed CSV that must contain ``columns``.

    Columns listed in ``numeric`` are converted to float; any failure names
    ``file:line``.
    """
    path = Path(path)
    numeric = list(columns) if numeric is None else numeric
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from exc
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise InputError(f"{path}:1: empty file, expected header {','.join(columns)}")
    missing = [c for c in columns if c not in header]
    if missing:
        raise InputError(f"{path}:1: missing column(s) {', '.join(missing)}")
    pos = {c: header.index(c) for c in columns}
    out: dict[str, list] = {c: [] for c in columns}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        for c in columns:
            if pos[c] >= len(row) or not row[pos[c]].strip():
                raise InputError(f"{path}:{lineno}: missing value for column '{c}'")
            cell = row[pos[c]].strip()
            if c in numeric:
                try:
                    val = float(cell)
                except ValueError:
                    raise InputError(f"{path}:{lineno}: column '{c}' is not a number: {cell!r}")
                if not math.isfinite(val):
                    raise InputError(f"{path}:{lineno}: column '{c}' is not finite")
                out[c].append(val)
            else:
                out[c].append(cell)
    return out


def read_points_csv(path):
    """``x,y,value`` -> (locations (n, 2), values (n,))."""
    t = read_table(path, ["x", "y", "value"])
    xy = np.column_stack([t["x"], t["y"]]) if t["x"] else np.empty((0, 2))
    return xy, np.asarray(t["value"], dtype=float)


def read_areas_csv(path):
    """``area_id,value`` -> (ids, values)."""
    t = read_table(path, ["area_id", "value"], numeric=["value"])
    return t["area_id"], np.asarray(t["value"], dtype=float)


def read_targets_csv(path) -> np.ndarray:
    t = read_table(path, ["x", "y"])
    return np.column_stack([t["x"], t["y"]]) if t["x"] else np.empty((0, 2))


def write_pgm(path, values: np.ndarray, vmin: float | None = None, vmax: float | None = None) -> None:
    """Plain (P2) portable graymap; row 0 of ``values`` is the bottom of the map."""
    v = np.asarray(values, dtype=float)
    lo = np.nanmin(v) if vmin is None else vmin
    hi = np.nanmax(v) if vmax is None else vmax
    span = hi - lo if hi > lo else 1.0
    g = np.clip(np.round(255 * (v - lo) / span), 0, 255).astype(int)[::-1]
    lines = ["P2", f"# range {lo!r} {hi!r}", f"{g.shape[1]} {g.shape[0]}", "255"]
    lines += [" ".join(map(str, r)) for r in g]
    atomic_write_text(path, "\n".join(lines) + "\n")
