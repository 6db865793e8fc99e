"""
CSV and JSON tables for comparison runs and property suites.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

logger = logging.getLogger(__name__)

CSV_HEADER = ("engine", "w", "value", "error_estimate", "runtime_ms")
SIGNIFICANT_DIGITS = 12


def format_float(value: Optional[float]) -> str:
    """Fixed 12-significant-digit rendering; empty for a missing value."""
    if value is None:
        return ""
    value = float(value)
    if value == 0:
        # no negative zero in artifacts
        value = 0.0
    return f"{value:.{SIGNIFICANT_DIGITS}g}"


def _runtime(row, record_runtime: bool) -> str:
    return format_float(row.runtime_ms) if record_runtime else ""


def format_compare_csv(result) -> str:
    """
    One row per (engine, w) in run order.

    Args:
        result: CompareResult of an experiment run

    Returns:
        CSV text with a header line and "\\n" line endings
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in result.rows:
        writer.writerow([row.engine.value, row.w, format_float(row.value),
                         format_float(row.error_estimate), _runtime(row, result.record_runtime)])
    return buf.getvalue()


def compare_to_json(result) -> Dict:
    return {
        "triple": result.label,
        "seed": result.seed,
        "tolerance": format_float(result.tolerance),
        "passed": result.passed,
        "rows": [
            {
                "engine": row.engine.value,
                "w": row.w,
                "value": format_float(row.value),
                "error_estimate": format_float(row.error_estimate),
                "runtime_ms": _runtime(row, result.record_runtime),
            }
            for row in result.rows
        ],
        "discrepancies": {str(w): format_float(d) for w, d in result.discrepancies.items()},
        "failures": list(result.failures),
    }


def dumps(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def format_rows_csv(rows: Sequence[Dict], columns: Iterable[str]) -> str:
    """Generic table writer for audit rows such as the residue term table."""
    columns = list(columns)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_float(row[c]) if isinstance(row[c], float) else row[c] for c in columns])
    return buf.getvalue()


def write_text(path: Union[str, Path], text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    logger.info(f"wrote {path}")
    return path


def write_compare_report(result, path: Union[str, Path], fmt: str = "csv") -> Path:
    if fmt == "csv":
        return write_text(path, format_compare_csv(result))
    if fmt == "json":
        return write_text(path, dumps(compare_to_json(result)))
    raise ValueError(f"unknown report format {fmt!r}")


def write_suite_report(checks: List[Dict], path: Union[str, Path], suite: str, seed: int) -> Path:
    passed = all(c["passed"] for c in checks)
    return write_text(path, dumps({"suite": suite, "seed": seed, "passed": passed, "checks": checks}))
