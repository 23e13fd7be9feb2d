"""CSV ingestion/serialization and the flat ``key=value`` config format."""

from __future__ import annotations

import csv
import math
import re
from pathlib import Path
from typing import Iterable

import numpy as np

from .model import CensusFrame, SurveySample

__all__ = [
    "SchemaError",
    "fmt",
    "read_sample",
    "read_census",
    "read_config",
    "write_rows",
    "read_rows",
]

_COVARIATE = re.compile(r"^x(\d+)$")


class SchemaError(ValueError):
    """Input file does not follow the expected column layout."""


def fmt(value) -> str:
    """Serialize a value; floats keep 17 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    return str(value)


def _read_table(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader, [])]
            rows = [r for r in reader if r and any(c.strip() for c in r)]
    except FileNotFoundError:
        raise SchemaError(f"{path}: file not found") from None
    if not header:
        raise SchemaError(f"{path}: missing header row")
    for i, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise SchemaError(f"{path}:{i}: expected {len(header)} fields, got {len(r)}")
    return header, rows


def _columns(path, header, rows, required, optional=()):
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
    cov = sorted((int(m.group(1)), h) for h in header
                 if (m := _COVARIATE.match(h)))
    if [k for k, _ in cov] != list(range(1, len(cov) + 1)):
        raise SchemaError(f"{path}: covariate columns must be x1..xp without gaps")
    names = list(required) + [c for c in optional if c in header] + [h for _, h in cov]
    out = {}
    for name in names:
        j = header.index(name)
        try:
            out[name] = np.array([float(r[j]) for r in rows], dtype=float)
        except ValueError as exc:
            raise SchemaError(f"{path}: non-numeric value in column {name}: {exc}") from None
    nrow = len(rows)
    X = (np.column_stack([out[h] for _, h in cov]) if cov
         else np.empty((nrow, 0)))
    return out, X


def _area_ids(path, values) -> np.ndarray:
    if np.any(values != np.round(values)):
        raise SchemaError(f"{path}: area ids must be integers")
    if np.any(values < 0):
        raise SchemaError(f"{path}: area ids must be non-negative")
    return values.astype(np.int64)


def _design(X, intercept: bool):
    return np.column_stack([np.ones(X.shape[0]), X]) if intercept else X


def read_sample(path, intercept: bool = True) -> SurveySample:
    """``area,welfare[,het_weight][,survey_weight],x1..xp`` -> SurveySample."""
    header, rows = _read_table(path)
    cols, X = _columns(path, header, rows, ("area", "welfare"),
                       ("het_weight", "survey_weight"))
    X = _design(X, intercept)
    if X.shape[1] == 0:
        raise SchemaError(f"{path}: no covariates and no intercept")
    return SurveySample(_area_ids(path, cols["area"]), cols["welfare"], X,
                        cols.get("het_weight"), cols.get("survey_weight"))


def read_census(path, intercept: bool = True) -> CensusFrame:
    """``area[,het_weight],count,x1..xp`` -> CensusFrame (N_d derived)."""
    header, rows = _read_table(path)
    cols, X = _columns(path, header, rows, ("area", "count"), ("het_weight",))
    count = cols["count"]
    if np.any(count != np.round(count)) or np.any(count < 1):
        raise SchemaError(f"{path}: count must be a positive integer")
    return CensusFrame(_area_ids(path, cols["area"]), _design(X, intercept),
                       count.astype(np.int64), cols.get("het_weight"))


def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def write_rows(path, rows: Iterable[dict], columns: list[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(row[c]) for c in columns])


def _parse(cell: str):
    try:
        return int(cell)
    except ValueError:
        pass
    try:
        return float(cell)
    except ValueError:
        return cell


def read_rows(path) -> list[dict]:
    """Inverse of :func:`write_rows` (ints, floats and strings restored)."""
    header, rows = _read_table(path)
    return [{h: _parse(c) for h, c in zip(header, r)} for r in rows]


def same_value(a, b) -> bool:
    if isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b):
        return True
    return a == b
