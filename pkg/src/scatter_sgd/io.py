"""CSV and JSON interchange.  Floats are written with 17 significant digits."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .rkhs import Dataset

FLOAT_FMT = "{:.17g}"


def _fmt(x: float) -> str:
    return FLOAT_FMT.format(float(x))


def write_dataset(ds: Dataset, path) -> None:
    header = [f"x{i + 1}" for i in range(ds.d)] + [f"y{j + 1}" for j in range(ds.m)]
    rows = np.hstack([ds.points, ds.targets])
    _write_rows(path, header, rows)


def read_dataset(path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        body = [[float(v) for v in row] for row in reader if row]
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    ycols = [i for i, h in enumerate(header) if h.startswith("y")]
    if not xcols or not ycols or len(xcols) + len(ycols) != len(header):
        raise ValueError(f"{path}: header must be x1..xd,y1..ym")
    arr = np.asarray(body, dtype=np.float64).reshape(len(body), len(header))
    return Dataset(arr[:, xcols], arr[:, ycols])


def write_coeffs(coeffs: np.ndarray, path) -> None:
    header = [f"c{j + 1}" for j in range(coeffs.shape[1])]
    _write_rows(path, header, coeffs)


def read_coeffs(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        return np.asarray([[float(v) for v in row] for row in reader if row])


def write_curve(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "mean", "stderr", "trials"])
        for k, mu, se in zip(curve.k, curve.mean, curve.stderr):
            w.writerow([int(k), _fmt(mu), _fmt(se), int(curve.trials)])


def read_curve(path):
    from .harness import ErrorCurve

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return ErrorCurve(
        np.array([int(r["k"]) for r in rows], dtype=np.int64),
        np.array([float(r["mean"]) for r in rows]),
        np.array([float(r["stderr"]) for r in rows]),
        int(rows[0]["trials"]),
    )


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
