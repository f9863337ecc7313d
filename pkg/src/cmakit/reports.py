"""Deterministic report writing: JSON records and plot-data CSV files."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np

PLOT_COLUMNS = {
    "sfamily": ("s", "t", "sup_phi", "inf_phi", "residual", "iters"),
    "sublevel": ("level", "nodes", "a", "b", "F"),
    "annulus": ("delta", "pole", "annulus_index", "inner_r", "outer_r", "sup_dev"),
    "capacity_trend": ("s", "capacity"),
}

# Record keys that differ from the column name.
_ALIASES = {"iters": "iterations"}


def format_number(x) -> str:
    """17 significant digits for reals, plain digits for integers and booleans."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _rows(report, kind):
    if isinstance(report, (list, tuple)):
        return list(report)
    if hasattr(report, "records"):
        return report.records()
    if kind == "sfamily" and hasattr(report, "history"):
        return list(report.history)
    raise TypeError(f"cannot extract {kind} records from {type(report).__name__}")


def plot_csv(report, kind: str) -> str:
    """CSV text for a report of a known kind."""
    if kind not in PLOT_COLUMNS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {sorted(PLOT_COLUMNS)}")
    cols = PLOT_COLUMNS[kind]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for rec in _rows(report, kind):
        w.writerow([format_number(rec[c] if c in rec else rec[_ALIASES[c]]) for c in cols])
    return buf.getvalue()


def emit_plot_data(report, kind: str, path) -> Path:
    """Write the plot-data CSV of ``report`` to ``path`` and return the path.

    Kinds and columns:

    ``sfamily``
        ``s, t, sup_phi, inf_phi, residual, iters`` (one row per solve record)
    ``sublevel``
        ``level, nodes, a, b, F``
    ``annulus``
        ``delta, pole, annulus_index, inner_r, outer_r, sup_dev`` (one row per delta and annulus)
    ``capacity_trend``
        ``s, capacity``
    """
    text = plot_csv(report, kind)
    path = Path(path)
    path.write_bytes(text.encode("utf-8"))
    return path


def jsonable(obj):
    """Convert dataclasses, numpy scalars and arrays to plain JSON values."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if hasattr(obj, "numerator") and hasattr(obj, "denominator"):
        return int(obj) if obj.denominator == 1 else float(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True)


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_bytes((json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n").encode("utf-8"))
    return path


def write_jsonl(path, records) -> Path:
    path = Path(path)
    path.write_bytes("".join(dumps(r) + "\n" for r in records).encode("utf-8"))
    return path
