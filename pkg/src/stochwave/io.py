"""Plain-text output formats: profile columns, path CSVs and YAML manifests.

Data files start with ``# key: value`` header lines (config hash included)
and never contain timestamps, so identical runs give identical bytes.
"""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import platform
from pathlib import Path

import numpy as np
import yaml

from . import __version__

FLOAT = "%.17g"


def config_hash(cfg: dict) -> str:
    return hashlib.sha1(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _header_lines(header: dict) -> list[str]:
    return [f"# {k}: {json.dumps(v, default=float)}" for k, v in header.items()]


def write_profiles(path, x, columns: dict, header: dict):
    """Columnar text: x followed by one column per named profile."""
    path = Path(path)
    names = ["x"] + list(columns)
    data = np.column_stack([x] + [np.asarray(v, float) for v in columns.values()])
    with path.open("w") as fh:
        fh.write("\n".join(_header_lines(header)) + "\n")
        fh.write("# columns: " + " ".join(names) + "\n")
        np.savetxt(fh, data, fmt=FLOAT)
    return path


def read_profiles(path):
    """Returns (header dict, {column: array})."""
    header, names = {}, None
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, val = line[2:].partition(": ")
            if key == "columns":
                names = val.split()
            else:
                header[key] = json.loads(val)
    data = np.loadtxt(path, comments="#", ndmin=2)
    return header, {n: data[:, i] for i, n in enumerate(names)}


def write_wave(path, wave, model, cfg_hash: str, extra: dict | None = None):
    n = wave.phi.shape[0]
    cols = {f"phi_{i}": wave.phi[i] for i in range(n)}
    if wave.psi is not None:
        cols.update({f"psi_{i}": wave.psi[i] for i in range(n)})
    header = {"model": model.name, "model_hash": model.model_hash(), "config_hash": cfg_hash,
              "L": wave.grid.L, "N": wave.grid.N, "c": wave.c, "beta": wave.beta}
    header.update(extra or {})
    return write_profiles(path, wave.grid.x, cols, header)


def write_table(path, columns: dict, header: dict):
    """CSV with a commented header; columns of equal length."""
    path = Path(path)
    names = list(columns)
    rows = zip(*[np.asarray(columns[k]) for k in names])
    with path.open("w", newline="") as fh:
        for line in _header_lines(header):
            fh.write(line + "\n")
        w = csv.writer(fh)
        w.writerow(names)
        for row in rows:
            w.writerow([FLOAT % v if np.ndim(v) == 0 and isinstance(v, (float, np.floating)) else v
                        for v in row])
    return path


def read_table(path) -> tuple[dict, dict]:
    header, lines = {}, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[2:].partition(": ")
                header[key] = json.loads(val)
            else:
                lines.append(line)
    reader = csv.reader(lines)
    names = next(reader)
    rows = list(reader)
    cols = {}
    for i, n in enumerate(names):
        vals = [r[i] for r in rows]
        try:
            cols[n] = np.array(vals, dtype=float)
        except ValueError:
            cols[n] = np.array(vals)
    return header, cols


def write_path_csv(path, times, gamma, v_l2sq, a, b_hs_sq, cfg_hash: str, extra: dict | None = None):
    header = {"config_hash": cfg_hash, **(extra or {})}
    return write_table(path, {"t": times, "gamma": gamma, "v_l2sq": v_l2sq, "a": a, "b_hs_sq": b_hs_sq},
                       header)


def write_manifest(path, payload: dict):
    """YAML manifest; the only output that carries a timestamp and versions."""
    import scipy

    body = {"created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            "versions": {"stochwave": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "python": platform.python_version()},
            **_plain(payload)}
    Path(path).write_text(yaml.safe_dump(body, sort_keys=False))
    return path


def read_manifest(path) -> dict:
    return yaml.safe_load(Path(path).read_text())


def _plain(obj):
    """Recursively convert numpy scalars/arrays for YAML."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
