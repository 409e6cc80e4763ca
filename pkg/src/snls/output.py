"""CSV/JSON emission and run manifests.

Floats are written with ``repr``, the shortest decimal that round-trips, so
identical computations give byte-identical files.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

TRAJECTORY_HEADER = ("step", "time", "mass", "grad_sq", "l4_fourth", "ham_disc", "ham_mod", "h2",
                     "f_val", "phi_exp_neg_mass", "phi_inv_mass", "phi_sin_mode1")
RATE_HEADER = ("resolution", "error", "stderr")
VERDICTS = ("PASS", "FAIL", "N/A")


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _atomic_write(path: Path, text: str):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_csv(path, header, rows) -> Path:
    """Rows are sequences (in header order) or dicts keyed by header names."""
    lines = [",".join(header)]
    for row in rows:
        if isinstance(row, dict):
            row = [row[h] for h in header]
        lines.append(",".join(format_value(v) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")
    return Path(path)


def to_jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_json(path, obj) -> Path:
    _atomic_write(path, json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return Path(path)


def write_trajectory(path, rows) -> Path:
    return write_csv(path, TRAJECTORY_HEADER, rows)


def write_rate_table(path, table) -> Path:
    return write_csv(path, RATE_HEADER, table)


def write_fit(path, fit) -> Path:
    """Fit summary JSON ``{slope, ci_low, ci_high, r_squared, points}``; null fit if absent."""
    payload = fit.as_dict() if fit is not None else {
        "slope": None, "ci_low": None, "ci_high": None, "r_squared": None, "points": []}
    return write_json(path, payload)


def write_manifest(path, *, config: dict, version: str, timestamp: str, seed: int,
                   outputs: dict, wall_clock: float, verdicts: dict) -> Path:
    for name, v in verdicts.items():
        if v not in VERDICTS:
            raise ValueError(f"verdict for {name} must be one of {VERDICTS}, got {v!r}")
    return write_json(path, {"config": config, "tool_version": version, "timestamp": timestamp,
                             "seed": seed, "outputs": outputs, "wall_clock_seconds": wall_clock,
                             "verdicts": verdicts})
