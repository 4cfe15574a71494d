import json
import logging
import math
import os
import tempfile
from dataclasses import asdict, is_dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd

from dynamics import Permutation
from errors import OutputError, UsageError

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.17g"


# Atomic file output
# ----------------------------------------------------------------------
def write_text_atomic(path, text):
    """
    Write text to a temporary file beside the target, then rename it into place.

    Args:
        path: destination file
        text: full file content

    Returns:
        Path: the destination
    """
    path = Path(path)
    try:
        handle, temp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(handle, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(temp_name, path)
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}", path=str(path))
    return path


# JSON helpers
# ----------------------------------------------------------------------
def to_jsonable(value):
    """
    Convert results to plain JSON types.

    Floats keep Python's shortest round-trip repr; non-finite floats become
    the strings 'nan', 'inf' and '-inf' so the document stays strict JSON.
    """
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Permutation):
        return value.label
    if is_dataclass(value) and not isinstance(value, type):
        return to_jsonable(asdict(value))
    if isinstance(value, dict):
        return {str(key): to_jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(item) for item in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    if isinstance(value, Path):
        return str(value)
    return value


def write_json(path, payload):
    text = json.dumps(to_jsonable(payload), indent=2, allow_nan=False) + "\n"
    return write_text_atomic(path, text)


# CSV tables
# ----------------------------------------------------------------------
def write_table(path, frame):
    """Write a DataFrame as CSV with 17 significant digits."""
    text = frame.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, na_rep="nan", lineterminator="\n")
    return write_text_atomic(path, text)


def profile_frame(flow):
    """Node-wise flow fields. Columns: x, h, zb, eta, u, Fr"""
    return pd.DataFrame({"x": flow.x, "h": flow.h, "zb": flow.zb, "eta": flow.eta, "u": flow.u, "Fr": flow.Fr})


def trajectory_frame(flow, depths):
    """Layer trajectories z_n(x), one column per layer. Columns: x, z1 .. zNz"""
    frame = pd.DataFrame({"x": flow.x})
    for n, trajectory in enumerate(np.asarray(depths), start=1):
        frame[f"z{n}"] = trajectory
    return frame


def layer_frame(report):
    """Per-layer periodic start state and objective share of one evaluation."""
    return pd.DataFrame(
        {
            "layer": np.arange(1, report.layer_contributions.size + 1),
            "c0": report.state.c0,
            "contribution": report.layer_contributions,
        }
    )


def _coefficient_columns(coefficients, modes, a0=None):
    """a0 .. aM from a decision vector; the fixed regime prepends the frozen a0."""
    values = list(coefficients)
    if a0 is not None and values:
        values = [a0] + values
    if len(values) < modes + 1:
        values = values + [float("nan")] * (modes + 1 - len(values))
    return {f"a{m}": values[m] for m in range(modes + 1)}


def search_frame(rows, modes, a0=None):
    """
    Per-permutation table of a search.

    Args:
        rows: search.SearchRow list in enumeration order
        modes: M
        a0: frozen mean height for the fixed regime, None for the variable one
    """
    records = []
    for row in rows:
        record = {
            "perm_id": row.perm_id,
            "sigma": row.perm.label,
            "cycles": row.perm.cycle_notation(),
            "objective": row.value,
            "feasible": row.feasible,
            "iterations": row.iterations,
        }
        record.update(_coefficient_columns(row.coefficients, modes, a0))
        records.append(record)
    return pd.DataFrame.from_records(records)


def sweep_frame(rows, modes, a0=None):
    records = []
    for row in rows:
        record = {"L": row.L, "sigma": row.sigma, "cycles": row.cycles, "objective": row.objective, "r1": row.r1, "r2": row.r2}
        record.update(_coefficient_columns(row.coefficients, modes, a0))
        record["note"] = row.note
        records.append(record)
    return pd.DataFrame.from_records(records)


def convergence_frame(rows):
    return pd.DataFrame.from_records([asdict(row) for row in rows])


def gradient_frame(report):
    """One row per coefficient of every gradient-check instance."""
    records = []
    for row in report.rows:
        for k, (analytic, reference) in enumerate(zip(row.analytic, row.finite_difference)):
            records.append(
                {
                    "instance": row.instance,
                    "L": row.L,
                    "Nz": row.Nz,
                    "M": row.M,
                    "sigma": row.sigma,
                    "coefficient": k,
                    "value": row.coefficients[k],
                    "analytic": analytic,
                    "finite_difference": reference,
                }
            )
    return pd.DataFrame.from_records(records)


# Command-line value parsing
# ----------------------------------------------------------------------
def parse_float_list(text, name="value"):
    """Parse '0.01,0.02' into a list of floats."""
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"--{name}: '{text}' is not a comma-separated list of numbers")


def parse_int_range(text, name="nz-range"):
    """Parse 'lo:hi' (inclusive) or a comma-separated list of integers."""
    try:
        if ":" in text:
            lo, hi = (int(part) for part in text.split(":", 1))
            values = list(range(lo, hi + 1))
        else:
            values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"--{name}: '{text}' is not an integer range")
    if not values or min(values) < 1:
        raise UsageError(f"--{name}: '{text}' must give integers >= 1")
    return values


def read_mapping(path):
    """
    Read a layer-count to permutation mapping.

    The file is a JSON object such as {"7": "2-4-6-7-5-3-1"}.

    Returns:
        dict: {Nz: Permutation}
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read mapping file {path}: {e}", path=str(path))
    if not isinstance(raw, dict):
        raise UsageError(f"mapping file {path} must hold a JSON object", path=str(path))
    mapping = {}
    for key, text in raw.items():
        if not str(key).isdigit():
            raise UsageError(f"mapping key '{key}' is not a layer count", path=str(path))
        perm = Permutation.parse(str(text))
        if perm.size != int(key):
            raise UsageError(f"mapping entry {key}: '{text}' has {perm.size} layers", path=str(path))
        mapping[int(key)] = perm
    logger.info(f"Loaded {len(mapping)} permutations from {path}")
    return mapping
