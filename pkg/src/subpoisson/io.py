"""File formats: JSON configs, histogram and distribution CSVs, reports, manifests.

Floats are written with ``repr`` so every value round-trips exactly.
"""
from __future__ import annotations

import csv
import json
import math
import os
import platform
import sys
from datetime import datetime, timezone

import numpy as np

from .criteria import CriteriaReport
from .detector import DetectorParams
from .distributions import PhotonNumberDistribution, TwinBeamParams
from .errors import ConfigError, DataError, ParameterDomainError

__all__ = [
    "load_json",
    "read_params",
    "write_params",
    "read_detectors",
    "write_detectors",
    "read_joint_csv",
    "write_joint_csv",
    "read_distribution_csv",
    "write_distribution_csv",
    "write_rows_csv",
    "write_report",
    "Manifest",
]


def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def _clean(obj):
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python numbers."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def load_json(path, kind: str = "config"):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{kind} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{kind} file {path} is not valid JSON: {exc}") from None


def read_params(path) -> TwinBeamParams:
    d = load_json(path, "twin-beam parameter")
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a JSON object with keys {list(TwinBeamParams.KEYS)}")
    try:
        return TwinBeamParams.from_dict(d)
    except ParameterDomainError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def write_params(params: TwinBeamParams, path) -> None:
    with open(path, "w") as fh:
        json.dump(params.to_dict(), fh, indent=2)
        fh.write("\n")


def read_detectors(path):
    """``{"signal": {...}, "idler": {...}}`` -> ``(det_s, det_i)``."""
    d = load_json(path, "detector")
    if not isinstance(d, dict) or set(d) - {"signal", "idler"} or "idler" not in d:
        raise ConfigError(f"{path}: expected an object with keys 'signal' and 'idler'")
    try:
        det_i = DetectorParams.from_dict(d["idler"])
        det_s = DetectorParams.from_dict(d["signal"]) if "signal" in d else None
    except (ParameterDomainError, TypeError, AttributeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return det_s, det_i


def write_detectors(det_s: DetectorParams, det_i: DetectorParams, path) -> None:
    with open(path, "w") as fh:
        json.dump({"signal": det_s.to_dict(), "idler": det_i.to_dict()}, fh, indent=2)
        fh.write("\n")


def write_joint_csv(joint, path) -> None:
    """Sparse ``cs,ci,count`` rows (nonzero cells only, row-major order)."""
    counts = joint.counts
    with open(path, "w", newline="") as fh:
        fh.write("cs,ci,count\n")
        for cs, ci in zip(*np.nonzero(counts)):
            fh.write(f"{cs},{ci},{counts[cs, ci]}\n")


def read_joint_csv(path):
    from .pipeline import JointHistogram

    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise DataError(f"joint histogram file not found: {path}") from None
    cells = {}
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["cs", "ci", "count"]:
            raise DataError(f"{path}: header must be 'cs,ci,count'")
        for line, row in enumerate(reader, start=2):
            if not row or all(not x.strip() for x in row):
                continue
            try:
                cs, ci, count = (int(x) for x in row)
            except ValueError:
                raise DataError(f"{path}:{line}: expected three integers, got {row}") from None
            if cs < 0 or ci < 0 or count < 0:
                raise DataError(f"{path}:{line}: negative entry {row}")
            if (cs, ci) in cells:
                raise DataError(f"{path}:{line}: duplicate cell ({cs}, {ci})")
            cells[(cs, ci)] = count
    if not cells:
        return JointHistogram(np.zeros((1, 1), dtype=np.int64))
    shape = (max(k[0] for k in cells) + 1, max(k[1] for k in cells) + 1)
    counts = np.zeros(shape, dtype=np.int64)
    for (cs, ci), v in cells.items():
        counts[cs, ci] = v
    return JointHistogram(counts)


def write_distribution_csv(dist, path, abscissa: str = "n", value: str = "p") -> None:
    probs = dist.probs if isinstance(dist, PhotonNumberDistribution) else np.asarray(dist)
    with open(path, "w", newline="") as fh:
        fh.write(f"{abscissa},{value}\n")
        for n, p in enumerate(probs):
            fh.write(f"{n},{_num(p)}\n")


def read_distribution_csv(path) -> np.ndarray:
    """Two-column ``(index, value)`` CSV; indices must be 0, 1, 2, ... in order.

    Values may be probabilities or raw counts; they are returned as given.
    """
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise DataError(f"distribution file not found: {path}") from None
    values = []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) != 2:
            raise DataError(f"{path}: expected a two-column header")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                n, v = int(row[0]), float(row[1])
            except (ValueError, IndexError):
                raise DataError(f"{path}:{line}: malformed row {row}") from None
            if n != len(values):
                raise DataError(f"{path}:{line}: index {n} out of order (expected {len(values)})")
            if not (v >= 0 and math.isfinite(v)):
                raise DataError(f"{path}:{line}: value must be finite and nonnegative")
            values.append(v)
    if not values or sum(values) <= 0:
        raise DataError(f"{path}: distribution is empty")
    return np.array(values)


def write_rows_csv(columns, rows, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(_num(r.get(c)) for c in columns) + "\n")


def write_report(report: CriteriaReport, stem) -> list:
    """``<stem>.json`` (per-family arrays) and ``<stem>.csv``; returns the paths."""
    jpath, cpath = f"{stem}.json", f"{stem}.csv"
    with open(jpath, "w") as fh:
        json.dump(_clean(report.to_dict()), fh, indent=2)
        fh.write("\n")
    write_rows_csv(["family", "k", "value", "err", "verdict"], report.rows(), cpath)
    return [jpath, cpath]


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2)
        fh.write("\n")


class Manifest:
    """Run record: command, inputs, seed, outputs and convention notes."""

    def __init__(self, command: str, argv=None):
        self.data = {
            "command": command,
            "argv": list(argv) if argv is not None else sys.argv[1:],
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "versions": _versions(),
            "inputs": {},
            "seed": None,
            "outputs": [],
            "notes": {},
        }

    def input(self, name: str, path) -> None:
        self.data["inputs"][name] = os.fspath(path) if path is not None else None

    def output(self, path) -> None:
        self.data["outputs"].append(os.fspath(path))

    def note(self, key: str, value) -> None:
        self.data["notes"][key] = value

    def write(self, path) -> None:
        missing = [p for p in self.data["outputs"] if not os.path.exists(p)]
        if missing:
            raise DataError(f"manifest lists outputs that were not written: {missing}")
        write_json(self.data, path)


def _versions() -> dict:
    import scipy

    from . import __version__

    return {"subpoisson": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}
