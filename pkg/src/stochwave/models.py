"""Reaction-diffusion models: nonlinearities, noise coefficients, equilibria.

Component arrays have shape (..., n, N); leading axes batch realizations.
Jacobians are returned as (..., n, n, N) and noise coefficients as
(..., n, m, N), i.e. pointwise matrices stored along the last axis.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class UnsupportedCorrection(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    name: str
    n: int
    m: int
    rho: np.ndarray
    f: Callable
    Df: Callable
    D2f: Callable          # (U, V, W) -> D^2 f(U)[V, W]
    g: Callable
    dg: Callable           # (U) -> d g_ij / d u_k, shape (..., n, m, n, N)
    dh_unit: Callable      # (U) -> Jacobian of the correction per unit q(0), (..., n, n, N)
    u_minus: np.ndarray    # limit as x -> -infinity
    u_plus: np.ndarray     # limit as x -> +infinity
    mu: int = 0
    params: dict = field(default_factory=dict)

    def h(self, U, q0) -> np.ndarray:
        """Ito-Stratonovich correction mu * (1/2) q_i(0) (d_i g_ii) g_ii."""
        return self.mu * ito_stratonovich_correction(self, U, q0)

    def Dh(self, U, q0) -> np.ndarray:
        q0 = np.broadcast_to(np.asarray(q0, dtype=float), (self.n,))
        return self.mu * q0[:, None, None] * self.dh_unit(U)

    def Dg(self, U, V) -> np.ndarray:
        """Dg(U)[V], shape (..., n, m, N)."""
        return np.einsum("...ijkx,...kx->...ijx", self.dg(U), V)

    def phi_ref(self, x) -> np.ndarray:
        """Smooth reference profile joining u_minus to u_plus."""
        s = 0.5 * (1 - np.tanh(x))
        return self.u_minus[:, None] * s[None, :] + self.u_plus[:, None] * (1 - s)[None, :]

    @property
    def is_front(self) -> bool:
        return not np.allclose(self.u_minus, self.u_plus)

    def with_mu(self, mu: int) -> "ModelSpec":
        return ModelSpec(**{**self.__dict__, "mu": int(mu)})

    def model_hash(self) -> str:
        payload = {"name": self.name, "params": self.params, "mu": self.mu,
                   "rho": list(map(float, self.rho))}
        return hashlib.sha1(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:12]

    def equilibrium_residual(self, q0=(1.0,)) -> float:
        """|f| + |g| + |h| at both equilibria (should vanish)."""
        tot = 0.0
        for u in (self.u_minus, self.u_plus):
            U = np.asarray(u, float)[:, None]
            tot += np.abs(self.f(U)).sum() + np.abs(self.g(U)).sum()
            tot += np.abs(ito_stratonovich_correction(self, U, q0)).sum()
        return float(tot)


def ito_stratonovich_correction(model: ModelSpec, U, q0) -> np.ndarray:
    """(1/2) q_i(0) (d g_ii / d u_i) g_ii for diagonal noise coupling."""
    U = np.asarray(U, dtype=float)
    G = model.g(U)
    off = G.copy()
    k = min(model.n, model.m)
    idx = np.arange(k)
    off[..., idx, idx, :] = 0.0
    if model.n != model.m or np.any(off != 0.0):
        raise UnsupportedCorrection("Stratonovich correction needs diagonal noise coupling")
    q0 = np.broadcast_to(np.asarray(q0, dtype=float), (model.n,))
    gd = G[..., idx, idx, :]
    dgd = model.dg(U)[..., idx, idx, idx, :]
    return 0.5 * q0[:, None] * dgd * gd


def _cubic(a):
    f = lambda u: u * (1 - u) * (u - a)
    df = lambda u: -3 * u**2 + 2 * (1 + a) * u - a
    d2f = lambda u: -6 * u + 2 * (1 + a)
    return f, df, d2f


def nagumo(a=0.25, rho=1.0, mu=0, noise="u(1-u)") -> ModelSpec:
    """u_t = rho u_xx + u(1-u)(u-a) + sigma g(u) dW, front from 1 (left) to 0."""
    if not 0 < a < 1:
        raise ValueError("Nagumo detuning a must lie in (0, 1)")
    fc, dfc, d2fc = _cubic(a)
    if noise == "u(1-u)":
        gs, dgs = (lambda u: u * (1 - u)), (lambda u: 1 - 2 * u)
        # d/du of (1/2) g' g
        dcorr = lambda u: 0.5 * (-2 * u * (1 - u) + (1 - 2 * u) ** 2)
    else:
        raise ValueError(f"unknown noise coefficient {noise!r}")
    return ModelSpec(
        name="nagumo", n=1, m=1, rho=np.array([float(rho)]),
        f=lambda U: fc(U),
        Df=lambda U: dfc(U)[..., :, None, :],
        D2f=lambda U, V, W: d2fc(U) * V * W,
        g=lambda U: gs(U)[..., :, None, :],
        dg=lambda U: dgs(U)[..., :, None, None, :],
        dh_unit=lambda U: dcorr(U)[..., :, None, :],
        u_minus=np.array([1.0]), u_plus=np.array([0.0]), mu=int(mu),
        params={"a": float(a), "rho": float(rho), "noise": noise},
    )


def fitzhugh_nagumo(a=0.1, eps=0.01, varrho=0.01, gamma=5.0, mu=0) -> ModelSpec:
    """u_t = u_xx + f(u) - w + sigma u dW1,  w_t = varrho w_xx + eps (u - gamma w)."""
    fc, dfc, d2fc = _cubic(a)

    def f(U):
        u, w = U[..., 0, :], U[..., 1, :]
        return np.stack([fc(u) - w, eps * (u - gamma * w)], axis=-2)

    def Df(U):
        u = U[..., 0, :]
        J = np.zeros(U.shape[:-2] + (2, 2) + U.shape[-1:])
        J[..., 0, 0, :] = dfc(u)
        J[..., 0, 1, :] = -1.0
        J[..., 1, 0, :] = eps
        J[..., 1, 1, :] = -eps * gamma
        return J

    def D2f(U, V, W):
        out = np.zeros(np.broadcast_shapes(U.shape, V.shape, W.shape))
        out[..., 0, :] = d2fc(U[..., 0, :]) * V[..., 0, :] * W[..., 0, :]
        return out

    def g(U):
        G = np.zeros(U.shape[:-2] + (2, 2) + U.shape[-1:])
        G[..., 0, 0, :] = U[..., 0, :]
        return G

    def dg(U):
        d = np.zeros(U.shape[:-2] + (2, 2, 2) + U.shape[-1:])
        d[..., 0, 0, 0, :] = 1.0
        return d

    def dh_unit(U):
        # correction is (u/2, 0): constant Jacobian
        d = np.zeros(U.shape[:-2] + (2, 2) + U.shape[-1:])
        d[..., 0, 0, :] = 0.5
        return d

    return ModelSpec(
        name="fhn", n=2, m=2, rho=np.array([1.0, float(varrho)]),
        f=f, Df=Df, D2f=D2f, g=g, dg=dg, dh_unit=dh_unit,
        u_minus=np.zeros(2), u_plus=np.zeros(2), mu=int(mu),
        params={"a": float(a), "eps": float(eps), "varrho": float(varrho), "gamma": float(gamma)},
    )


def apply_pointwise(M, V) -> np.ndarray:
    """(M V)_i = sum_j M_ij V_j at every node; M (..., n, k, N), V (..., k, N)."""
    return np.einsum("...ijx,...jx->...ix", M, V)


def apply_transpose(M, V) -> np.ndarray:
    """(M^T V)_j = sum_i M_ij V_i at every node."""
    return np.einsum("...ijx,...ix->...jx", M, V)
