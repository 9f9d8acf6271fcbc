"""Flat-file artifact layer for batch runs: CSV tables plus JSON sidecars.

Floats are written with 17 significant digits, which round-trips binary64
exactly, so golden files are stable across runs.  The only irreproducible
content is the timestamped comment on the first CSV line; `csv_body`
strips comment lines for byte comparisons.  Every CSV gets a sidecar
naming the code version, the sha256 of the resolved config, and the seed.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "Table", "format_float", "render_csv", "csv_body", "read_table",
    "config_hash", "write_table", "utc_stamp",
]


def format_float(x) -> str:
    return f"{float(x):.17g}"


def utc_stamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Table:
    """Rectangular artifact: named float columns in a fixed order."""
    name: str
    columns: tuple
    units: tuple
    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2:
            raise ConfigurationError("table rows must be a 2-d array")
        if rows.shape[1] != len(self.columns):
            raise ConfigurationError(
                f"table {self.name!r}: {rows.shape[1]} data columns for "
                f"{len(self.columns)} names")
        if len(self.units) != len(self.columns):
            raise ConfigurationError(
                f"table {self.name!r}: units/columns length mismatch")
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "units", tuple(self.units))
        object.__setattr__(self, "rows", rows)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.rows[:, self.columns.index(name)]
        except ValueError:
            raise ConfigurationError(
                f"table {self.name!r} has no column {name!r}") from None


def render_csv(table: Table, stamp: str | None = None) -> str:
    lines = [f"# generated {stamp or utc_stamp()}",
             ",".join(table.columns)]
    lines.extend(",".join(format_float(v) for v in row) for row in table.rows)
    return "\n".join(lines) + "\n"


def csv_body(source) -> str:
    """CSV content with comment lines removed -- the byte-comparable part."""
    text = source.read_text() if isinstance(source, Path) else str(source)
    kept = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return "\n".join(kept) + "\n"


def read_table(path) -> Table:
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines()
             if ln and not ln.startswith("#")]
    if not lines:
        raise ConfigurationError(f"{path}: no header line")
    cols = tuple(lines[0].split(","))
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]],
                    dtype=float).reshape(len(lines) - 1, len(cols))
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        units = tuple(json.loads(sidecar.read_text())["units"])
    else:
        units = ("",) * len(cols)
    return Table(path.stem, cols, units, data)


def write_table(table: Table, out_dir, *, kind: str, cfg_hash: str,
                seed: int, code_version: str, stamp: str | None = None,
                summary: dict | None = None) -> Path:
    """Write `<name>.csv` and its `<name>.json` sidecar; return the CSV path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stamp = stamp or utc_stamp()
    csv_path = out_dir / f"{table.name}.csv"
    csv_path.write_text(render_csv(table, stamp))
    meta = {
        "artifact": csv_path.name,
        "kind": kind,
        "code_version": code_version,
        "config_hash": cfg_hash,
        "seed": int(seed),
        "columns": list(table.columns),
        "units": list(table.units),
        "rows": int(table.rows.shape[0]),
        "created": stamp,
    }
    if summary:
        meta["summary"] = summary
    (out_dir / f"{table.name}.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return csv_path
