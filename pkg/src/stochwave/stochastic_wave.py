"""The instantaneous stochastic wave (Phi_sigma, c_sigma) and its sigma^2 expansion.

F_sigma(Phi, c) = F_0(Phi, c) + sigma^2 F_{0;2}(Phi), with

    F_{0;2}(Phi) = B/(2 D^2) Phi'' - (g Q g^T psi)'/D + h(Phi),
    B = <Q g^T psi, g^T psi>,   D = <Phi', psi>,

and psi the fixed adjoint eigenfunction of the deterministic wave.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl

from .errors import SolverFailed
from .models import ModelSpec, apply_pointwise, apply_transpose
from .noise import Convolver, CovarianceKernel
from .wave import (BorderedSolver, WavePair, derivative, difference_matrices, f0_residual,
                   linear_operator, pointwise_block, second_derivative)


class PhaseNoise:
    """Noise-dependent pieces shared by F_sigma, the phase SODE and the expansions."""

    def __init__(self, model: ModelSpec, kernel: CovarianceKernel, psi):
        self.model = model
        self.kernel = kernel
        self.grid = kernel.grid
        self.psi = np.asarray(psi, dtype=float)
        self.conv = Convolver(kernel)
        self.q0 = kernel.q_at_zero

    def gt_psi(self, U, psi=None):
        """g(U)^T psi, shape (..., m, N)."""
        return apply_transpose(self.model.g(U), self.psi if psi is None else psi)

    def hs_and_flux(self, U, psi=None):
        """(B, G): B = <Q g^T psi, g^T psi> and G = g Q g^T psi."""
        z = self.gt_psi(U, psi)
        Qz = self.conv(z)
        B = self.grid.dx * np.sum(z * Qz, axis=(-2, -1))
        return B, apply_pointwise(self.model.g(U), Qz)

    def pairing(self, U, psi=None):
        """D = <U', psi> with the model's far-field ghosts."""
        dU = self.grid.first_difference(U, self.model.u_minus, self.model.u_plus)
        return self.grid.dx * np.sum(dU * (self.psi if psi is None else psi), axis=(-2, -1))


def F02(noise: PhaseNoise, phi) -> np.ndarray:
    model, grid = noise.model, noise.grid
    D = noise.pairing(phi)
    if abs(D) < 1e-6:
        raise SolverFailed("phase-pairing-degenerate", f"<Phi', psi> = {D:.3e}")
    B, G = noise.hs_and_flux(phi)
    return (0.5 * B / D**2 * second_derivative(model, grid, phi)
            - grid.first_difference(G) / D + model.h(phi, noise.q0))


def F_sigma(model: ModelSpec, kernel: CovarianceKernel, wave_det: WavePair, phi, c, sigma) -> np.ndarray:
    noise = PhaseNoise(model, kernel, wave_det.psi)
    res = f0_residual(model, kernel.grid, phi, c)
    if sigma != 0.0:
        res = res + sigma**2 * F02(noise, phi)
    return res


def kernel_matrix(kernel: CovarianceKernel, rtol=1e-16) -> sp.csr_matrix:
    """Banded sparse matrix of v -> q * v (entries dx q(x_i - x_j))."""
    grid = kernel.grid
    lags = np.arange(grid.N) * grid.dx
    qv = kernel.q(lags)
    keep = np.nonzero(np.abs(qv) > rtol * np.abs(qv[0]))[0]
    width = int(keep.max()) if keep.size else 0
    offsets = list(range(-width, width + 1))
    diags = [np.full(grid.N - abs(o), qv[abs(o)] * grid.dx) for o in offsets]
    return sp.diags(diags, offsets, shape=(grid.N, grid.N), format="csr")


class FSigmaJacobian:
    """Analytic Jacobian of F_sigma in (Phi, c).

    The two nonlocal scalars B(Phi) and D(Phi) enter through rank-one terms,
    returned separately as (a_B, grad_B) and (a_D, grad_D) so callers can
    border them instead of forming a dense matrix.
    """

    def __init__(self, noise: PhaseNoise):
        self.noise = noise
        self.Q = kernel_matrix(noise.kernel)

    def parts(self, phi, c, sigma):
        noise, model, grid = self.noise, self.noise.model, self.noise.grid
        n, m, N, dx = model.n, model.m, grid.N, grid.dx
        D1, D2 = difference_matrices(grid)
        J = linear_operator(model, grid, phi, c).tocsr()
        if sigma == 0.0:
            return J, []
        s2 = sigma**2
        psi = noise.psi
        D = noise.pairing(phi)
        z = noise.gt_psi(phi)
        Qz = noise.conv(z)
        B = dx * np.sum(z * Qz)
        G = apply_pointwise(model.g(phi), Qz)
        phi_xx = second_derivative(model, grid, phi)
        dG = grid.first_difference(G)
        dg = model.dg(phi)                                  # (n, m, n, N)
        Z = np.einsum("ix,ijkx->jkx", psi, dg)              # dz_j / du_k
        gradB = 2 * dx * np.einsum("jx,jkx->kx", Qz, Z)     # (n, N)
        # grad of D = <D1 phi, psi>: D1^T psi dx
        gradD = np.stack([(D1.T @ psi[i]) * dx for i in range(n)])
        # d(G) = Dg[V] Qz + g Q Z V
        A1 = np.einsum("ijkx,jx->ikx", dg, Qz)              # (n, n, N)
        gmat = model.g(phi)                                 # (n, m, N)
        blocks = [[None] * n for _ in range(n)]
        Dblk = sp.block_diag([D1] * n, format="csr")
        for i in range(n):
            for k in range(n):
                acc = sp.diags(A1[i, k])
                for j in range(m):
                    if np.any(gmat[i, j]) and np.any(Z[j, k]):
                        acc = acc + sp.diags(gmat[i, j]) @ self.Q @ sp.diags(Z[j, k])
                blocks[i][k] = acc
        dGmat = sp.bmat(blocks, format="csr")
        local = (0.5 * B / D**2) * sp.block_diag([D2] * n, format="csr") - (Dblk @ dGmat) / D
        local = local + pointwise_block(model.Dh(phi, noise.q0))
        J = (J + s2 * local).tocsr()
        a_B = s2 * 0.5 / D**2 * phi_xx
        a_D = s2 * (-B / D**3 * phi_xx + dG / D**2)
        return J, [(a_B, gradB), (a_D, gradD)]


def _newton_fsigma(model, kernel, wave_det, sigma, phi0, c0, tol=1e-10, maxiter=50):
    grid = kernel.grid
    noise = PhaseNoise(model, kernel, wave_det.psi)
    jac = FSigmaJacobian(noise)
    psi = wave_det.psi
    dx = grid.dx
    res_norm = np.inf
    phi, c = np.array(phi0, dtype=float), float(c0)
    for it in range(maxiter + 1):
        r = f0_residual(model, grid, phi, c) + (sigma**2 * F02(noise, phi) if sigma else 0.0)
        phase = grid.inner_product(phi - wave_det.phi, psi)
        res_norm = max(np.abs(r).max(), abs(phase))
        if not np.isfinite(res_norm):
            break
        if res_norm <= tol:
            return phi, c, it, res_norm
        if it == maxiter:
            break
        J, rank1 = jac.parts(phi, c, sigma)
        k = len(rank1)
        dphi = derivative(model, grid, phi).ravel()
        # unknowns: (dPhi, dc, t_1..t_k) with t_r = grad_r . dPhi
        cols = [sp.csr_matrix(dphi[:, None])] + [sp.csr_matrix(a.ravel()[:, None]) for a, _ in rank1]
        top = sp.hstack([J] + cols)
        rows = [sp.hstack([sp.csr_matrix((psi.ravel() * dx)[None, :]), sp.csr_matrix((1, 1 + k))])]
        for r_i, (_, grad) in enumerate(rank1):
            tail = np.zeros(1 + k)
            tail[1 + r_i] = -1.0
            rows.append(sp.hstack([sp.csr_matrix(grad.ravel()[None, :]), sp.csr_matrix(tail[None, :])]))
        A = sp.vstack([top] + rows, format="csc")
        rhs = -np.concatenate([r.ravel(), [phase], np.zeros(k)])
        try:
            step = spl.splu(A).solve(rhs)
        except RuntimeError as exc:
            raise SolverFailed("degenerate-jacobian", str(exc), last_sigma=sigma) from exc
        if not np.all(np.isfinite(step)):
            break
        nN = phi.size
        phi = phi + step[:nN].reshape(phi.shape)
        c = c + step[nN]
        if np.abs(step[:nN + 1]).max() < 1e-13 * (1 + np.abs(phi).max()):
            r = f0_residual(model, grid, phi, c) + (sigma**2 * F02(noise, phi) if sigma else 0.0)
            res_norm = np.abs(r).max()
            if res_norm <= 10 * tol:
                return phi, c, it + 1, res_norm
    raise SolverFailed("newton-diverged", f"sigma={sigma}: residual {res_norm:.3e}", last_sigma=sigma)


@dataclass
class StochWaveResult:
    sigma: float
    wave: WavePair
    phi_02: np.ndarray | None
    c_02: float | None
    converged: bool
    residual_norm: float


def expand_second_order(model: ModelSpec, kernel: CovarianceKernel, wave_det: WavePair):
    """c_{0;2} = -<F_{0;2}(Phi_0), psi> and Phi_{0;2} from the bordered solve.

    Returns (c_02, phi_02, multiplier); the multiplier of the bordered
    system is zero up to rounding because the right side is compatible.
    """
    noise = PhaseNoise(model, kernel, wave_det.psi)
    grid = kernel.grid
    F = F02(noise, wave_det.phi)
    c02 = -grid.inner_product(F, wave_det.psi)
    dphi = derivative(model, grid, wave_det.phi)
    phi02, s = BorderedSolver(model, wave_det).solve(-F - c02 * dphi)
    return float(c02), phi02, s


_DIRECT_MAXITER = 8
_STEP_MAXITER = 12


def solve_instantaneous_wave(model: ModelSpec, kernel: CovarianceKernel, wave_det: WavePair,
                             sigma: float, tol=1e-10, max_step=0.1, with_expansion=True) -> StochWaveResult:
    """Newton on F_sigma = 0 with <Phi - Phi_0, psi> = 0, continuing in sigma if needed."""
    c02 = phi02 = None
    if with_expansion:
        c02, phi02, _ = expand_second_order(model, kernel, wave_det)
    if sigma == 0.0:
        w = WavePair(wave_det.grid, wave_det.phi.copy(), wave_det.c, wave_det.psi, wave_det.beta,
                     wave_det.kappa_norm, {"sigma": 0.0, "newton_iterations": 0})
        return StochWaveResult(0.0, w, phi02, c02, True, 0.0)
    # a direct solve that needs many iterations may have jumped to another branch
    try:
        phi, c, its, res = _newton_fsigma(model, kernel, wave_det, sigma, wave_det.phi, wave_det.c,
                                          tol, maxiter=_DIRECT_MAXITER)
    except SolverFailed:
        phi, c, its, res = _continue_in_sigma(model, kernel, wave_det, sigma, tol, max_step)
    w = WavePair(wave_det.grid, phi, float(c), wave_det.psi, wave_det.beta, wave_det.kappa_norm,
                 {"sigma": sigma, "newton_iterations": its, "residual": res})
    return StochWaveResult(float(sigma), w, phi02, c02, True, float(res))


def _continue_in_sigma(model, kernel, wave_det, sigma, tol, max_step):
    nsteps = max(2, int(np.ceil(abs(sigma) / max_step)))
    path = np.linspace(0, sigma, nsteps + 1)[1:]
    prev = (wave_det.phi, wave_det.c, 0.0)
    older = None
    out = None
    for s in path:
        if older is None:
            guess_phi, guess_c = prev[0], prev[1]
        else:   # secant predictor
            t = (s - prev[2]) / (prev[2] - older[2])
            guess_phi = prev[0] + t * (prev[0] - older[0])
            guess_c = prev[1] + t * (prev[1] - older[1])
        try:
            phi, c, its, res = _newton_fsigma(model, kernel, wave_det, s, guess_phi, guess_c, tol,
                                              maxiter=_STEP_MAXITER)
        except SolverFailed as exc:
            raise SolverFailed("newton-diverged", f"continuation stopped at sigma={prev[2]:.3g}",
                               last_sigma=prev[2]) from exc
        older, prev = prev, (phi, c, s)
        out = (phi, c, its, res)
    return out


def sne_wave(grid, a: float, sigma: float, q0: float):
    """Small-noise-expansion wave of the Stratonovich Nagumo equation."""
    s2q = sigma**2 * q0
    if s2q >= 1:
        raise ValueError("sne-out-of-range: sigma^2 q(0) must be below 1")
    a_eff = (2 * a - s2q) / (2 - 2 * s2q)
    if not 0 <= a_eff <= 1:
        raise ValueError("sne-out-of-range: effective detuning leaves (0, 1)")
    phi = 0.5 * (1 - np.tanh(np.sqrt(1 - s2q) / (2 * np.sqrt(2)) * grid.x))
    c = np.sqrt(2 * (1 - s2q)) * (0.5 - a_eff)
    return phi[None, :], float(c), float(a_eff)
