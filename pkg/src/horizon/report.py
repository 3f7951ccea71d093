"""Experiment reports and the small fits shared by the probes.

A report is a flat record: named scalars, named series, named boolean
flags, an echo of the configuration, and the seed. Serialization is
canonical (sorted keys, shortest round-trip float repr) so that two runs
with the same inputs give byte-identical JSON once the ``timestamp``
field is removed.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np


def _clean(v):
    """Convert numpy values to plain JSON-ready Python objects; non-finite floats become None."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_clean(x) for x in v.tolist()]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else None
    if isinstance(v, (complex, np.complexfloating)):
        return [_clean(v.real), _clean(v.imag)]
    return v


@dataclass
class ExperimentReport:
    experiment: str
    map_descriptor: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    scalars: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    seed: int | None = None
    notes: list = field(default_factory=list)
    timestamp: dict = field(default_factory=dict)

    def set_scalar(self, name: str, value) -> None:
        """Store a scalar; a non-finite value is stored as null with a flag ``<name>_missing``."""
        if value is None or (isinstance(value, (float, np.floating)) and not math.isfinite(float(value))):
            self.scalars[name] = None
            self.flags[f"{name}_missing"] = True
        else:
            self.scalars[name] = value

    def stamp(self, started: float) -> None:
        """Record wall time; kept out of the deterministic part of the report."""
        self.timestamp = {"finished_unix": time.time(), "wall_seconds": time.time() - started}

    @property
    def unreliable(self) -> bool:
        return any(bool(v) for k, v in self.flags.items() if k in UNRELIABLE_FLAGS)

    def to_dict(self, with_timestamp: bool = True) -> dict:
        d = {
            "experiment": self.experiment,
            "map": self.map_descriptor,
            "config": self.config,
            "scalars": self.scalars,
            "series": self.series,
            "flags": self.flags,
            "seed": self.seed,
            "notes": self.notes,
        }
        if with_timestamp:
            d["timestamp"] = self.timestamp
        return _clean(d)

    def to_json(self, with_timestamp: bool = True) -> str:
        return json.dumps(self.to_dict(with_timestamp), sort_keys=True, indent=2, allow_nan=False) + "\n"

    def series_csv(self) -> str:
        """All series as columns, padded with empty cells, 17 significant digits."""
        return write_csv(list(self.series.keys()), list(self.series.values()))


UNRELIABLE_FLAGS = {
    "unreliable",
    "resolution_limited",
    "unreliable_sampling",
    "budget_saturated",
    "undersampled",
    "degenerate_observables",
    "not_certified",
}


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return format(f, ".17g") if math.isfinite(f) else ""
    return str(v)


def write_csv(header: Sequence[str], columns: Sequence[Sequence[Any]]) -> str:
    cols = [list(np.asarray(c).tolist()) if isinstance(c, np.ndarray) else list(c) for c in columns]
    n = max((len(c) for c in cols), default=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for i in range(n):
        w.writerow([fmt(c[i]) if i < len(c) else "" for c in cols])
    return buf.getvalue()


@dataclass
class LineFit:
    slope: float
    intercept: float
    r2: float
    points: int


def line_fit(x, y) -> LineFit:
    """Least-squares line through (x, y) with the coefficient of determination."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2:
        raise ValueError("a line fit needs at least two points")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss if ss > 0 else 1.0
    return LineFit(float(slope), float(intercept), r2, len(x))


def geometric_rate(n, err) -> LineFit | None:
    """Fit |err_n| ~ A lambda^-n; returns the log-linear fit (rate = exp(-slope)) or None."""
    n = np.asarray(n, dtype=float)
    err = np.abs(np.asarray(err, dtype=float))
    ok = err > 0
    if ok.sum() < 2:
        return None
    return line_fit(n[ok], np.log(err[ok]))


def aitken_limit(a: Sequence[float]) -> float:
    """Aitken delta-squared extrapolation from the last three terms."""
    a0, a1, a2 = (float(v) for v in a[-3:])
    den = a2 - 2 * a1 + a0
    if abs(den) < 1e-300:
        return a2
    return a2 - (a2 - a1) ** 2 / den
