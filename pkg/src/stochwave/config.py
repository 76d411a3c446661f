"""Run configuration: YAML sections with defaults, overrides and hypothesis checks.

Precedence, lowest first: built-in defaults, the config file, command-line
flags.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import HypothesisCheckFailed
from .grid import Grid
from .models import fitzhugh_nagumo, nagumo
from .noise import CovarianceKernel, NotPositiveSemidefinite, kernel_fourier

DEFAULTS = {
    "model": {"name": "nagumo", "a": 0.25, "rho": 1.0, "mu": 0},
    "kernel": {"kind": "gaussian", "param": 1.0, "file": None},
    "grid": {"L": 40.0, "N": 2048, "order": 2},
    "solver": {"tol": 1e-10, "maxiter": 50, "max_sigma_step": 0.1},
    "simulation": {"dt": 1e-2, "T": 10.0, "frame": "wave_V", "record_every": 10, "k_up": 10.0,
                   "R": 1, "profile_times": []},
    "ensemble": {"R": 100, "sigmas": [0.1], "seed": 0, "chunk": 25, "with_expansion": True,
                 "profile_times": []},
    "expansion": {"k_max": None, "dt_sg": 1e-3, "T_int": None, "cubic_R": 0, "cubic_T": 40.0},
}

# domain defaults for the pulse model, applied before the file is read
FHN_DEFAULTS = {
    "model": {"name": "fhn", "a": 0.1, "eps": 0.01, "varrho": 0.01, "gamma": 5.0, "mu": 0},
    "grid": {"L": 100.0, "N": 4001, "order": 2},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in (over or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


@dataclass
class RunConfig:
    data: dict

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        raw = {}
        if path is not None:
            raw = yaml.safe_load(Path(path).read_text()) or {}
            if not isinstance(raw, dict):
                raise HypothesisCheckFailed("bad-config", "config file must hold a mapping")
        name = ((overrides or {}).get("model") or {}).get("name") or (raw.get("model") or {}).get("name")
        base = _merge(DEFAULTS, FHN_DEFAULTS) if name == "fhn" else DEFAULTS
        cfg = cls(_merge(_merge(base, raw), overrides or {}))
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.data[key]

    # ---- built objects ---------------------------------------------------

    def model(self):
        m = self.data["model"]
        try:
            if m["name"] == "nagumo":
                return nagumo(a=float(m["a"]), rho=float(m.get("rho", 1.0)), mu=int(m.get("mu", 0)))
            if m["name"] == "fhn":
                return fitzhugh_nagumo(a=float(m["a"]), eps=float(m["eps"]), varrho=float(m["varrho"]),
                                       gamma=float(m["gamma"]), mu=int(m.get("mu", 0)))
        except ValueError as exc:
            raise HypothesisCheckFailed("bistability", str(exc)) from exc
        raise HypothesisCheckFailed("unknown-model", f"model {m['name']!r} is not available")

    def grid(self) -> Grid:
        g = self.data["grid"]
        return Grid(float(g["L"]), int(g["N"]), order=int(g.get("order", 2)))

    def kernel(self, grid=None) -> CovarianceKernel:
        k = self.data["kernel"]
        grid = grid or self.grid()
        if k.get("file"):
            return CovarianceKernel.from_file(grid, k["file"])
        return CovarianceKernel(k["kind"], grid, float(k["param"]))

    # ---- checks ------------------------------------------------------------

    def validate(self):
        """Structural hypotheses; raises HypothesisCheckFailed before any run."""
        model = self.model()
        try:
            grid = self.grid()
        except ValueError as exc:
            raise HypothesisCheckFailed("bad-grid", str(exc)) from exc
        try:
            kernel = self.kernel(grid)
            kernel_fourier(kernel)
        except NotPositiveSemidefinite as exc:
            raise HypothesisCheckFailed("kernel-not-psd", str(exc)) from exc
        except (ValueError, OSError) as exc:
            raise HypothesisCheckFailed("bad-kernel", str(exc)) from exc
        res = model.equilibrium_residual(kernel.q_at_zero)
        if res > 1e-12:
            raise HypothesisCheckFailed("equilibria", f"f, g or h do not vanish at u_-/u_+ ({res:.2e})")
        sig = np.asarray(self.data["ensemble"]["sigmas"], dtype=float)
        if np.any(sig < 0):
            raise HypothesisCheckFailed("bad-sigma", "noise strengths must be non-negative")
        sim = self.data["simulation"]
        if sim["dt"] <= 0 or sim["T"] <= 0:
            raise HypothesisCheckFailed("bad-simulation", "dt and T must be positive")
        if int(self.data["ensemble"]["R"]) < 2:
            raise HypothesisCheckFailed("bad-ensemble", "an ensemble needs at least two realizations")
