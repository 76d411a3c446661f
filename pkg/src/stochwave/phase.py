"""Cut-off guarded phase functionals a_sigma, b_sigma and the generator K_sigma.

With U = Phi_sigma + V (wave frame) or the lab-frame U paired against the
shifted adjoint T_Gamma psi:

    chi_l = 1 / chi_low(<U', psi>),   chi_h = chi_high(||U - Phi_ref||),
    b[w]  = -chi_h^2 chi_l <g(U) w, psi>,      ||b||_HS^2 = chi_h^4 chi_l^2 B(U),
    K     = c U' + rho U'' + f(U) + sigma^2 h(U) + sigma^2/2 ||b||_HS^2 U''
            - sigma^2 (chi_h^2 chi_l g Q g^T psi)',
    a     = -chi_l <K, psi>.

Every function accepts a batch axis in front of (n, N).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import apply_pointwise
from .stochastic_wave import PhaseNoise


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10 - 15 * t + 6 * t**2)


def cutoff_low(theta):
    """1/4 below 1/4, identity above 1/2, monotone C^2 blend in between."""
    theta = np.asarray(theta, dtype=float)
    s = _smoothstep((theta - 0.25) / 0.25)
    return (1 - s) * 0.25 + s * theta


def cutoff_high(theta, k_up=10.0):
    """1 up to k_up, 0 beyond k_up + 1."""
    return 1.0 - _smoothstep(np.asarray(theta, dtype=float) - k_up)


@dataclass
class Functionals:
    a: np.ndarray            # (R,)
    b_row: np.ndarray        # (R, m, N): b[w] = dx * sum(b_row * w)
    b_hs_sq: np.ndarray      # (R,)
    K: np.ndarray            # (R, n, N)
    dU: np.ndarray           # (R, n, N)
    chi_l: np.ndarray
    chi_h: np.ndarray


class PhaseFunctionals:
    """Evaluates K_sigma, a_sigma and b_sigma for a model/kernel pair."""

    def __init__(self, model, kernel, psi, phi_ref, sigma, c_sigma, k_up=10.0):
        self.model = model
        self.grid = kernel.grid
        self.noise = PhaseNoise(model, kernel, psi)
        self.psi = np.asarray(psi, dtype=float)
        self.phi_ref = np.asarray(phi_ref, dtype=float)
        self.sigma = float(sigma)
        self.c = float(c_sigma)
        self.k_up = float(k_up)

    def derivatives(self, U):
        m, grid = self.model, self.grid
        return (grid.first_difference(U, m.u_minus, m.u_plus),
                grid.second_difference(U, m.u_minus, m.u_plus))

    def evaluate(self, U, psi=None, phi_ref=None, with_K=True) -> Functionals:
        """Functionals at U; psi/phi_ref default to the unshifted ones."""
        m, grid, noise = self.model, self.grid, self.noise
        psi = self.psi if psi is None else psi
        phi_ref = self.phi_ref if phi_ref is None else phi_ref
        U = np.asarray(U, dtype=float)
        dx = grid.dx
        dU, dUU = self.derivatives(U)
        pair = dx * np.sum(dU * psi, axis=(-2, -1))
        chi_l = 1.0 / cutoff_low(pair)
        dist = np.sqrt(dx * np.sum((U - phi_ref) ** 2, axis=(-2, -1)))
        chi_h = cutoff_high(dist, self.k_up)
        G = m.g(U)
        z = np.einsum("...ijx,...ix->...jx", G, np.broadcast_to(psi, U.shape))
        Qz = noise.conv(z)
        B = dx * np.sum(z * Qz, axis=(-2, -1))
        w = chi_h**2 * chi_l
        b_row = -w[..., None, None] * z
        b_hs_sq = w**2 * B
        K = None
        a = np.zeros(np.shape(pair))
        if with_K:
            s2 = self.sigma**2
            K = (self.c * dU + m.rho[:, None] * dUU + m.f(U)
                 + s2 * m.h(U, noise.q0)
                 + 0.5 * s2 * b_hs_sq[..., None, None] * dUU
                 - s2 * w[..., None, None] * grid.first_difference(apply_pointwise(G, Qz)))
            a = -chi_l * dx * np.sum(K * psi, axis=(-2, -1))
        return Functionals(a, b_row, b_hs_sq, K, dU, chi_l, chi_h)

    def b_apply(self, F: Functionals, w):
        """b[w] for a batch of noise fields w of shape (..., m, N)."""
        return self.grid.dx * np.sum(F.b_row * w, axis=(-2, -1))
