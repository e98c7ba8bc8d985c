"""CSV / JSON readers and writers for every exported artifact.

Numbers are written with 17 significant digits so files round-trip exactly.
A file may start with a ``# config_hash=<hex>`` line; readers skip ``#`` lines.
"""

import csv
import hashlib
import json
import math

import numpy as np

from .dynamics import Trajectory
from .observation import ObservationSeries


def fmt(x):
    return format(float(x), ".17g")


def config_hash(payload):
    """Short stable digest of a JSON-serialisable mapping."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _nan_to_none(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_nan_to_none(v) for v in obj]
    return obj


def write_json(path, payload):
    """Deterministic JSON (sorted keys); NaN / inf become null."""
    payload = json.loads(json.dumps(payload, default=_jsonable))
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_nan_to_none(payload), fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_rows(path, header, rows, config_hash=None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if config_hash is not None:
            fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_rows(path):
    """Returns (config_hash or None, header, rows)."""
    chash = None
    with open(path, encoding="utf-8", newline="") as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                if line.startswith("# config_hash="):
                    chash = line.strip().split("=", 1)[1]
                continue
            lines.append(line)
    reader = csv.reader(lines)
    header = next(reader)
    return chash, header, list(reader)


def read_config_hash(path):
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if first.startswith("# config_hash="):
        return first.strip().split("=", 1)[1]
    return None


def write_trajectory_csv(traj, path, config_hash=None):
    d = traj.dimension
    header = ["t"] + [f"x{i + 1}" for i in range(d)]
    rows = ([fmt(t)] + [fmt(v) for v in row] for t, row in zip(traj.times, traj.states))
    _write_rows(path, header, rows, config_hash)


def read_trajectory_csv(path):
    _, header, rows = _read_rows(path)
    data = np.array([[float(v) for v in r] for r in rows])
    t = data[:, 0]
    dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
    return Trajectory(t0=float(t[0]), dt=dt, states=data[:, 1:])


def write_observations_csv(obs, path, config_hash=None):
    d = obs.dimension
    header = ["t"] + [f"y{i + 1}" for i in range(d)] + [f"m{i + 1}" for i in range(d)]

    def row(t, vals, m):
        return ([fmt(t)] + [fmt(v) if ok else "" for v, ok in zip(vals, m)]
                + ["1" if ok else "0" for ok in m])

    rows = (row(t, v, m) for t, v, m in zip(obs.times, obs.values, obs.mask))
    _write_rows(path, header, rows, config_hash)


def read_observations_csv(path):
    _, header, rows = _read_rows(path)
    d = (len(header) - 1) // 2
    t = np.array([float(r[0]) for r in rows])
    mask = np.array([[r[1 + d + j] == "1" for j in range(d)] for r in rows], dtype=bool)
    values = np.array([[float(r[1 + j]) if r[1 + j] != "" else np.nan for j in range(d)] for r in rows])
    dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
    return ObservationSeries(float(t[0]), dt, values, mask)


def write_smoother_csv(times, result, path, config_hash=None):
    d = result.means.shape[1]
    header = ["t"] + [f"xmean{i + 1}" for i in range(d)] + [f"xsd{i + 1}" for i in range(d)]
    rows = ([fmt(t)] + [fmt(v) for v in m] + [fmt(v) for v in s]
            for t, m, s in zip(times, result.means, result.spreads))
    _write_rows(path, header, rows, config_hash)


def write_table_csv(path, header, rows, config_hash=None):
    """Generic table; floats get 17 significant digits, everything else ``str``."""
    def cell(v):
        if isinstance(v, (float, np.floating)):
            return fmt(v)
        return "" if v is None else str(v)

    _write_rows(path, header, ([cell(v) for v in r] for r in rows), config_hash)


def read_table_csv(path):
    _, header, rows = _read_rows(path)
    return header, rows
