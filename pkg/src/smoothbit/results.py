"""Bit-stable result emission: results.csv, run.jsonl and trajectory snapshots.

Every numeric field is written with 17 significant digits so values round-trip
exactly. Rows are sorted by a fixed key before writing, which makes the CSV a
pure function of the computed values and independent of worker scheduling.
"""

from __future__ import annotations

import csv
import io
import json
import math
import platform
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from smoothbit import __version__
from smoothbit.errors import DomainError

HEADER = ("run_id", "metric", "layer", "time", "epsilon", "width", "value", "tag")
TAGS = ("measured", "bound", "diagnostic")


@dataclass(frozen=True)
class ResultRecord:
    run_id: str
    metric: str
    value: float
    tag: str
    layer: int | None = None
    time: float | None = None
    epsilon: float | None = None
    width: int | None = None

    def __post_init__(self):
        if self.tag not in TAGS:
            raise DomainError(f"tag {self.tag!r} not in {TAGS}")
        if not math.isfinite(self.value):
            raise DomainError(f"non-finite value for metric {self.metric!r}")
        if "," in self.metric or "\n" in self.metric:
            raise DomainError(f"metric name {self.metric!r} is not CSV-safe")

    def sort_key(self):
        def k(v):
            return (0, 0.0) if v is None else (1, float(v))

        # None sorts before any number; value and tag last for a total order
        return (self.run_id, self.metric, k(self.layer), k(self.width),
                k(self.epsilon), k(self.time), self.tag, self.value)


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def records_from_rows(run_id: str, rows) -> list[ResultRecord]:
    """Wrap sweep/suite row dicts (metric, value, tag, optional indices)."""
    return [
        ResultRecord(
            run_id, r["metric"], float(r["value"]), r["tag"],
            layer=r.get("layer"), time=r.get("time"),
            epsilon=r.get("epsilon"), width=r.get("width"),
        )
        for r in rows
    ]


def render_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in sorted(records, key=ResultRecord.sort_key):
        w.writerow([r.run_id, r.metric, fmt(r.layer), fmt(r.time), fmt(r.epsilon),
                    fmt(r.width), fmt(r.value), r.tag])
    return buf.getvalue()


def write_csv(path, records) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_csv(records), encoding="utf-8")
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def module_versions() -> dict:
    return {
        "smoothbit": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


class EventLog:
    """Append-only JSON-lines log; one object per line with event, timestamp, payload."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("", encoding="utf-8")

    def emit(self, event: str, **payload):
        line = {"event": event, "timestamp": time.time(), "payload": payload}
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(line, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def snapshot_name(run_id: str, layer: int, step: int) -> str:
    return f"traj_{run_id}_{layer}_{step}.csv"


def write_snapshots(directory, run_id: str, traj) -> list[Path]:
    """One CSV per (layer, recorded step): header w0..w{m-1}, one row per particle."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for step, snap in zip(traj.steps, traj.snapshots):
        for layer, W in enumerate(snap):
            path = directory / snapshot_name(run_id, layer, step)
            lines = [",".join(f"w{j}" for j in range(W.shape[1]))]
            lines += [",".join(fmt(x) for x in row) for row in W]
            path.write_text("\n".join(lines) + "\n", encoding="utf-8")
            paths.append(path)
    return paths


def read_snapshot(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2))
