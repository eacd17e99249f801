"""CSV input and JSON/CSV output formats used by the command line tool."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .estimators import FitResult
from .simulation import MethodOutcome, MetricsRow, MonteCarloResult, ReplicateRecord

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    """Input file does not match the expected layout."""


def atomic_write(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
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


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2) + "\n"


def fit_result_json(result: FitResult) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "method": result.method,
        "alpha": result.alpha,
        "n": result.n,
        "N": result.N,
        "coefficients": [result.coefficient(k) for k in range(len(result.beta))],
    }


def metrics_json(result: MonteCarloResult, methods) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "setting": result.setting.to_dict(),
        "base_seed": result.base_seed,
        "n_reps": len(result.records),
        "alpha": result.alpha,
        "methods": list(methods),
        "n_failed": result.n_failed,
        "rows": [asdict(r) for r in result.rows],
    }


_ROW_FIELDS = [f.name for f in fields(MetricsRow)]
_RECORD_FIELDS = ["rep_index", "base_seed", "stream_index", "method",
                  "estimate", "se", "ci_low", "ci_high", "p_value", "error"]


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_ROW_FIELDS)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(r, k) for k in _ROW_FIELDS)])
    return buf.getvalue()


def records_csv(records) -> str:
    """One line per (replicate, method); floats written with full precision."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_RECORD_FIELDS)
    for rec in sorted(records, key=lambda r: r.rep_index):
        for method, out in rec.outcomes.items():
            w.writerow([rec.rep_index, rec.base_seed, rec.stream_index, method,
                        repr(out.estimate), repr(out.se), repr(out.ci_low), repr(out.ci_high),
                        repr(out.p_value), ""])
        for method, err in rec.errors.items():
            w.writerow([rec.rep_index, rec.base_seed, rec.stream_index, method, "", "", "", "", "", err])
    return buf.getvalue()


def read_records_csv(text: str) -> list[ReplicateRecord]:
    grouped: dict = {}
    for row in csv.DictReader(io.StringIO(text)):
        key = (int(row["rep_index"]), int(row["base_seed"]), int(row["stream_index"]))
        outcomes, errors = grouped.setdefault(key, ({}, {}))
        if row["error"]:
            errors[row["method"]] = row["error"]
        else:
            outcomes[row["method"]] = MethodOutcome(
                float(row["estimate"]), float(row["se"]), float(row["ci_low"]),
                float(row["ci_high"]), float(row["p_value"]),
            )
    return [ReplicateRecord(k[0], k[1], k[2], o, e) for k, (o, e) in sorted(grouped.items())]


def load_metrics(path) -> list[MetricsRow]:
    """Parse a metrics JSON artifact, with line numbers in error messages."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict) or "schema_version" not in doc:
        raise SchemaError(f"{path}: line 1: missing schema_version")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise SchemaError(
            f"{path}: schema_version {doc['schema_version']!r} does not match supported version {SCHEMA_VERSION}"
        )
    rows = []
    for i, r in enumerate(doc.get("rows", [])):
        try:
            rows.append(MetricsRow(**{k: (math.nan if r[k] is None else r[k]) for k in _ROW_FIELDS}))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"{path}: row {i}: {exc}") from exc
    if not rows:
        raise SchemaError(f"{path}: no metrics rows")
    return rows


def read_csv_table(path) -> tuple[list[str], dict[str, np.ndarray]]:
    """Read a numeric CSV with a header row. Blank or non-numeric cells are rejected."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if len(set(header)) != len(header):
            raise SchemaError(f"{path}: duplicate column names in header")
        data = [[] for _ in header]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            for j, cell in enumerate(row):
                cell = cell.strip()
                if cell == "" or cell.lower() in ("na", "nan"):
                    raise SchemaError(f"{path}: line {lineno}: missing value in column {header[j]!r}")
                try:
                    value = float(cell)
                except ValueError:
                    raise SchemaError(
                        f"{path}: line {lineno}: non-numeric value {cell!r} in column {header[j]!r}"
                    ) from None
                if not math.isfinite(value):
                    raise SchemaError(f"{path}: line {lineno}: non-finite value in column {header[j]!r}")
                data[j].append(value)
    return header, {h: np.array(col, dtype=np.float64) for h, col in zip(header, data)}


def require_columns(path, header, columns) -> None:
    missing = [c for c in columns if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing column(s): {', '.join(missing)}")
