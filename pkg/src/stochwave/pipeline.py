"""High-level helpers that chain the modules for the standard models."""
from __future__ import annotations

from .grid import Grid
from .models import ModelSpec
from .wave import (WavePair, complete_wave, nagumo_explicit, pulse_guess_by_simulation,
                   solve_wave_bvp)


def deterministic_wave(model: ModelSpec, grid: Grid, with_gap=True, c_guess=0.5, tol=1e-10) -> WavePair:
    """Solve the deterministic wave and attach ψ (and the spectral gap).

    Fronts start Newton from the closed-form Nagumo profile; pulses from a
    profile grown by simulation with its front a quarter-domain right of 0.
    """
    if model.name == "nagumo":
        guess = nagumo_explicit(grid, model.params["a"], model.params["rho"])
    else:
        guess = pulse_guess_by_simulation(model, grid, c_guess, front_at=grid.L / 4)
    wave = solve_wave_bvp(model, guess, tol=tol)
    return complete_wave(model, wave, with_gap=with_gap)
