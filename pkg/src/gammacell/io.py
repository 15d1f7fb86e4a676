"""Config loading and result export (TOML in, JSON and CSV out).

JSON documents carry ``"schema": 1`` and a ``timestamp`` field; everything
else is a deterministic function of the inputs, written with sorted keys so
reruns are byte-identical apart from the timestamp line.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
import sys
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w

SCHEMA = 1


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


def read_toml(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def write_toml(path, data: dict) -> Path:
    path = Path(path)
    path.write_text(tomli_w.dumps(to_jsonable(data)))
    return path


def to_jsonable(obj):
    """Convert numpy scalars / arrays and tuples into plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path, payload: dict, timestamp: bool = True) -> Path:
    doc = {"schema": SCHEMA}
    doc.update(to_jsonable(payload))
    if timestamp:
        doc["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def strip_timestamp(doc: dict) -> dict:
    return {k: v for k, v in doc.items() if k != "timestamp"}


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows) -> Path:
    """Comma-separated values with a header row and '.' decimals."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path


def read_csv(path):
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [[float(x) for x in row] for row in r]
