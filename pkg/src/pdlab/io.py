"""Self-describing CSV and JSON output.

Every CSV starts with a schema line ``# pd-diffusion-lab v1`` and a
``# config: {...}`` line holding the resolved run configuration, followed by
an ordinary header row.  JSON files carry the same configuration under the
``"config"`` key.  Output is deterministic: keys are sorted and floats are
written with ``repr`` precision.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SCHEMA_LINE = "# pd-diffusion-lab v1"
CONFIG_PREFIX = "# config: "
# where a run writes is not part of what it computes, so reruns into another
# directory stay byte-identical
_LOCATION_KEYS = ("out", "config")


def embedded_config(config: dict) -> dict:
    return {k: v for k, v in config.items() if k not in _LOCATION_KEYS}


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path: Path, payload: dict, config: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = dict(payload)
    if config is not None:
        body["config"] = embedded_config(config)
    path.write_text(dumps(body))
    return path


def write_text(path: Path, text: str, config: dict) -> Path:
    """Plain-text report followed by the config line used in CSV files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    line = CONFIG_PREFIX + json.dumps(to_jsonable(embedded_config(config)), sort_keys=True)
    path.write_text(text + line + "\n")
    return path


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence], config: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(SCHEMA_LINE + "\n")
        fh.write(CONFIG_PREFIX + json.dumps(to_jsonable(embedded_config(config)), sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def read_csv(path: Path) -> tuple[dict, list[str], list[list[str]]]:
    """Inverse of :func:`write_csv`: ``(config, header, rows)`` with string cells."""
    with Path(path).open(newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != SCHEMA_LINE:
            raise ValueError(f"{path}: missing schema line, found {first!r}")
        second = fh.readline().rstrip("\n")
        if not second.startswith(CONFIG_PREFIX):
            raise ValueError(f"{path}: missing config line")
        config = json.loads(second[len(CONFIG_PREFIX):])
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader]
    return config, header, rows
