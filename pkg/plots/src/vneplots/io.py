"""Readers for the simulation log formats.

All inputs are the documented on-disk artifacts of the placement engine:

- ``metrics.csv``: one row per simulation event with columns
  ``t, event, r_t, raw_hops, accept_ratio, solve_ms, reward``.
- ``events.jsonl``: one JSON object per event.
- ``summary.json``: aggregate means per run, ``schema`` field "v1".
- ``*.curves.csv``: training curves with columns ``series, step, value``.
- probability dumps: JSON with ``rows`` (agent ids), ``cols`` (substrate node
  ids) and ``matrix`` (rectangular list of lists).

Nothing here imports the engine; only the file formats are shared.
"""

from __future__ import annotations

import csv
import json

import numpy as np

METRICS_COLUMNS = ("t", "event", "r_t", "raw_hops", "accept_ratio",
                   "solve_ms", "reward")
SUMMARY_SCHEMA = "v1"

NUMERIC_COLUMNS = ("t", "r_t", "raw_hops", "accept_ratio", "solve_ms",
                   "reward")


class SchemaMismatch(ValueError):
    """An input file does not carry the expected schema/columns."""


def load_metrics(path: str) -> dict:
    """Parse ``metrics.csv`` into numeric column arrays.

    Blank cells (e.g. accept_ratio before the first arrival) become NaN.
    Raises :class:`SchemaMismatch` when the header differs from the
    documented column set.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != METRICS_COLUMNS:
            raise SchemaMismatch(
                f"{path}: expected columns {METRICS_COLUMNS}, got {header}")
        rows = list(reader)
    out = {"event": np.array([r[1] for r in rows], dtype=object)}
    for name in NUMERIC_COLUMNS:
        i = METRICS_COLUMNS.index(name)
        out[name] = np.array(
            [float(r[i]) if r[i] != "" else np.nan for r in rows])
    return out


def load_events(path: str) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_summary(path: str) -> dict:
    with open(path) as fh:
        summary = json.load(fh)
    if summary.get("schema") != SUMMARY_SCHEMA:
        raise SchemaMismatch(
            f"{path}: summary schema {summary.get('schema')!r}, "
            f"expected {SUMMARY_SCHEMA!r}")
    return summary


def load_curves(path: str) -> dict:
    """Training curves as ``{series: (steps, values)}`` arrays."""
    series = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["series", "step", "value"]:
            raise SchemaMismatch(
                f"{path}: expected series/step/value columns, "
                f"got {reader.fieldnames}")
        for row in reader:
            series.setdefault(row["series"], []).append(
                (int(row["step"]), float(row["value"])))
    return {name: (np.array([s for s, _ in pts]),
                   np.array([v for _, v in pts]))
            for name, pts in series.items()}


def load_probability_dump(path: str) -> tuple:
    """Probability dump as ``(row_labels, col_labels, matrix)``."""
    with open(path) as fh:
        payload = json.load(fh)
    for key in ("rows", "cols", "matrix"):
        if key not in payload:
            raise SchemaMismatch(f"{path}: missing {key!r}")
    matrix = payload["matrix"]
    widths = {len(row) for row in matrix}
    if len(widths) > 1:
        raise SchemaMismatch(f"{path}: non-rectangular matrix "
                             f"(row widths {sorted(widths)})")
    arr = np.array(matrix, dtype=float)
    if arr.size and arr.shape != (len(payload["rows"]), len(payload["cols"])):
        raise SchemaMismatch(
            f"{path}: matrix shape {arr.shape} does not match "
            f"{len(payload['rows'])} rows x {len(payload['cols'])} cols")
    return payload["rows"], payload["cols"], arr


def moving_average(values, window: int) -> np.ndarray:
    """Trailing moving average with partial windows at the start.

    ``window=1`` returns the raw series, so smoothing is strictly opt-in.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    values = np.asarray(values, dtype=float)
    if window == 1 or values.size == 0:
        return values.copy()
    out = np.empty_like(values)
    csum = np.cumsum(values)
    for i in range(values.size):
        lo = max(0, i - window + 1)
        total = csum[i] - (csum[lo - 1] if lo else 0.0)
        out[i] = total / (i - lo + 1)
    return out
