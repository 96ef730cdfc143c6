"""Line-delimited run records and CSV summaries."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TIMING_FIELDS = ("elapsed_ms",)


def _clean(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        value = float(value)
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def dumps(record: dict, drop_timing: bool = False) -> str:
    rec = {k: _clean(v) for k, v in record.items() if not (drop_timing and k in TIMING_FIELDS)}
    return json.dumps(rec, sort_keys=True, allow_nan=False)


def write_records(path, records: Iterable[dict], drop_timing: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(dumps(rec, drop_timing) + "\n")
    return path


def read_records(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def strip_timing(path) -> bytes:
    """File contents with timing fields removed, for replay comparisons."""
    return b"".join((dumps(r, drop_timing=True) + "\n").encode() for r in read_records(path))


def write_csv(path, rows: Sequence[dict], columns: Sequence[str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if columns is None:
        columns = []
        for r in rows:
            columns.extend(k for k in r if k not in columns)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, columns, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: _clean(r.get(k)) for k in columns})
    return path


def summarize(records: Sequence[dict], keys: Sequence[str], value: str = "value_over_N") -> list[dict]:
    """Group by ``keys``; mean, sample std and count of ``value`` and of unique queries."""
    groups: dict[tuple, list[dict]] = {}
    for r in records:
        groups.setdefault(tuple(r.get(k) for k in keys), []).append(r)
    rows = []
    for key, recs in groups.items():
        vals = np.array([r[value] for r in recs if r.get(value) is not None], float)
        q = np.array([r["unique_queries"] for r in recs], float)
        row = dict(zip(keys, key))
        row.update(
            n=len(recs),
            **{f"mean_{value}": vals.mean() if len(vals) else None,
               f"std_{value}": vals.std(ddof=1) if len(vals) > 1 else None},
            mean_unique_queries=q.mean(),
        )
        if "hit" in recs[0]:
            row["hit_fraction"] = float(np.mean([bool(r["hit"]) for r in recs]))
        rows.append(row)
    return rows


def write_columns(path, *cols, header: str | None = None) -> Path:
    """Whitespace-separated plot data, one column per array."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.column_stack(cols), fmt="%.12g", header=header or "")
    return path
