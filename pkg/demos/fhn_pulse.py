"""Travelling pulse of the FitzHugh-Nagumo system and its noise-induced slow-down.

Builds the pulse, its adjoint eigenfunction and spectral gap, then the
second-order and orbital-drift speed coefficients.  The orbital drift needs
a few minutes on one core because the pulse relaxes slowly.

    python3 demos/fhn_pulse.py
"""
import numpy as np

from stochwave.config import RunConfig
from stochwave.expansion import ExpansionContext, expected_gamma2_rate
from stochwave.pipeline import deterministic_wave
from stochwave.stochastic_wave import expand_second_order

cfg = RunConfig.load(None, {"model": {"name": "fhn"}})
model, grid = cfg.model(), cfg.grid()
kernel = cfg.kernel(grid)
wave = deterministic_wave(model, grid)
u = wave.phi[0]
print(f"c0 = {wave.c:.6f}  beta = {wave.beta:.5f}  peak u = {u.max():.4f} at x = {grid.x[np.argmax(u)]:.2f}")

c02, _, _ = expand_second_order(model, kernel, wave)
print(f"c02 = {c02:.5f}")
cod, tail = expected_gamma2_rate(ExpansionContext(model, kernel, wave, dt_sg=1e-2))
print(f"c_od = {cod:.5f} (tail bound {tail:.1e})")
for s in (0.05, 0.1, 0.2):
    print(f"sigma = {s:4.2f}: predicted speed {wave.c + s**2 * (c02 + cod):.5f}")
