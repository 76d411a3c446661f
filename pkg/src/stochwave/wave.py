"""Deterministic travelling waves, their linearization and its adjoint kernel.

The wave convention is u(x, t) = Phi(x - c t), so Phi solves
rho Phi'' + c Phi' + f(Phi) = 0 and c > 0 means motion to the right.
Discrete operators use zero ghosts beyond the grid for perturbations, which
makes the discrete adjoint of L_tw exactly its matrix transpose.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spl

from .errors import SolverFailed
from .grid import Grid
from .models import ModelSpec


@dataclass
class WavePair:
    grid: Grid
    phi: np.ndarray          # (n, N)
    c: float
    psi: np.ndarray | None = None
    beta: float | None = None
    kappa_norm: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.phi.shape[0]


@lru_cache(maxsize=16)
def difference_matrices(grid: Grid):
    return grid.d1_matrix().tocsr(), grid.d2_matrix().tocsr()


def derivative(model: ModelSpec, grid: Grid, phi) -> np.ndarray:
    return grid.first_difference(phi, model.u_minus, model.u_plus)


def second_derivative(model: ModelSpec, grid: Grid, phi) -> np.ndarray:
    return grid.second_difference(phi, model.u_minus, model.u_plus)


def f0_residual(model: ModelSpec, grid: Grid, phi, c) -> np.ndarray:
    """rho Phi'' + c Phi' + f(Phi)."""
    return (model.rho[:, None] * second_derivative(model, grid, phi)
            + c * derivative(model, grid, phi) + model.f(phi))


def pointwise_block(M) -> sp.csr_matrix:
    """Sparse (nN x nN) matrix of a pointwise (n, n, N) matrix field."""
    n = M.shape[0]
    return sp.bmat([[sp.diags(M[i, j]) for j in range(n)] for i in range(n)], format="csr")


def linear_operator(model: ModelSpec, grid: Grid, phi, c, extra_diffusion=0.0) -> sp.csc_matrix:
    """rho d_xx + c d_x + Df(phi) (+ extra_diffusion * d_xx on every component)."""
    D1, D2 = difference_matrices(grid)
    n = model.n
    diff = sp.block_diag([(model.rho[i] + extra_diffusion) * D2 + c * D1 for i in range(n)], format="csr")
    return (diff + pointwise_block(model.Df(phi))).tocsc()


def build_linearization(model: ModelSpec, wave: WavePair):
    L = linear_operator(model, wave.grid, wave.phi, wave.c)
    return L, L.T.tocsc()


def nagumo_explicit(grid: Grid, a: float, rho: float = 1.0) -> WavePair:
    """Closed-form Nagumo front and speed."""
    if not 0 < a < 1:
        raise ValueError("Nagumo detuning a must lie in (0, 1)")
    phi = 0.5 * (1 - np.tanh(grid.x / (2 * np.sqrt(2 * rho))))
    c = np.sqrt(2 * rho) * (0.5 - a)
    return WavePair(grid, phi[None, :], float(c), meta={"source": "explicit"})


def newton_wave(residual, jacobian, phi0, c0, phase_dir, phase_ref, dx,
                tol=1e-10, maxiter=50):
    """Newton on residual(phi, c) = 0 with <phi - phase_ref, phase_dir> = 0.

    ``jacobian(phi, c)`` returns (J_phi sparse, J_c vector).  Returns
    (phi, c, iterations, residual_norm).
    """
    phi = np.array(phi0, dtype=float)
    c = float(c0)
    shape = phi.shape
    row = (phase_dir.ravel() * dx)[None, :]
    res_norm = np.inf
    for it in range(maxiter + 1):
        r = residual(phi, c)
        phase = float(np.sum((phi - phase_ref) * phase_dir) * dx)
        res_norm = max(np.abs(r).max(), abs(phase))
        if not np.isfinite(res_norm):
            break
        if res_norm <= tol:
            return phi, c, it, res_norm
        if it == maxiter:
            break
        Jp, Jc = jacobian(phi, c)
        A = sp.bmat([[Jp, Jc.reshape(-1, 1)], [row, None]], format="csc")
        try:
            step = spl.splu(A).solve(-np.concatenate([r.ravel(), [phase]]))
        except RuntimeError as exc:
            raise SolverFailed("degenerate-jacobian", str(exc)) from exc
        if not np.all(np.isfinite(step)):
            raise SolverFailed("degenerate-jacobian", "non-finite Newton step")
        phi = phi + step[:-1].reshape(shape)
        c = c + step[-1]
        # rounding floor: the update is below what the residual can resolve
        if np.abs(step).max() < 1e-13 * (1 + np.abs(phi).max()):
            r = residual(phi, c)
            res_norm = np.abs(r).max()
            if res_norm <= 10 * tol:
                return phi, c, it + 1, res_norm
    raise SolverFailed("newton-diverged", f"residual {res_norm:.3e} after {maxiter} iterations")


def solve_wave_bvp(model: ModelSpec, guess: WavePair, tol=1e-10, maxiter=50) -> WavePair:
    """Newton solve of rho Phi'' + c Phi' + f(Phi) = 0 for (Phi, c).

    Translation is pinned by <Phi - Phi_guess, Phi_guess'> = 0.
    """
    grid = guess.grid
    dguess = derivative(model, grid, guess.phi)

    def jac(phi, c):
        return linear_operator(model, grid, phi, c), derivative(model, grid, phi).ravel()

    phi, c, its, res = newton_wave(lambda p, s: f0_residual(model, grid, p, s), jac,
                                   guess.phi, guess.c, dguess, guess.phi, grid.dx, tol, maxiter)
    return WavePair(grid, phi, float(c), meta={"newton_iterations": its, "residual": res,
                                               "model_hash": model.model_hash()})


def adjoint_eigenfunction(model: ModelSpec, wave: WavePair, method="bordered") -> np.ndarray:
    """Kernel of L_tw^* normalised by <Phi', psi> = 1.

    ``bordered`` solves [[L^T, Phi'], [Phi'^T, 0]] [psi; s] = [0; 1], one exact
    inverse-iteration step at lambda = 0 (s must vanish for a simple kernel).
    ``closed_form`` uses kappa exp(c x / rho) Phi' (scalar models only).
    """
    grid = wave.grid
    dphi = derivative(model, grid, wave.phi)
    if method == "closed_form":
        if model.n != 1:
            raise ValueError("closed form exists for scalar models only")
        w = np.exp(wave.c * grid.x / model.rho[0])[None, :] * dphi
        return w / grid.inner_product(dphi, w)
    L, Lt = build_linearization(model, wave)
    d = dphi.ravel()
    A = sp.bmat([[Lt, d[:, None]], [(d * grid.dx)[None, :], None]], format="csc")
    rhs = np.zeros(A.shape[0])
    rhs[-1] = 1.0
    try:
        sol = spl.splu(A).solve(rhs)
    except RuntimeError as exc:
        raise SolverFailed("non-simple-kernel", str(exc)) from exc
    psi = sol[:-1].reshape(wave.phi.shape)
    s = sol[-1]
    if abs(s) > 1e-6 * np.abs(d).max():
        raise SolverFailed("non-simple-kernel", f"multiplier {s:.3e} does not vanish")
    return psi / grid.inner_product(dphi, psi)


def spectral_gap(model: ModelSpec, wave: WavePair, k=8, dense_below=1200):
    """Eigenvalues of L_tw nearest zero; returns (beta, kernel eigenvalue, spectrum).

    beta is minus the largest real part among the eigenvalues other than the
    translational zero.
    """
    L, _ = build_linearization(model, wave)
    if L.shape[0] < dense_below:
        ev = sla.eigvals(L.toarray())
        ev = ev[np.argsort(-ev.real)][:k]
    else:
        ev = spl.eigs(L, k=k, sigma=0.01, return_eigenvectors=False)
    ev = ev[np.argsort(np.abs(ev))]
    zero = ev[0]
    rest = ev[1:]
    beta = float(-np.max(rest.real))
    return beta, complex(zero), np.sort_complex(ev)


def spectral_projection(model: ModelSpec, wave: WavePair, v) -> np.ndarray:
    """P v = <psi, v> Phi'."""
    dphi = derivative(model, wave.grid, wave.phi)
    v = np.asarray(v, dtype=float).reshape(wave.phi.shape)
    return wave.grid.inner_product(wave.psi, v) * dphi


def complete_wave(model: ModelSpec, wave: WavePair, with_gap=True) -> WavePair:
    """Attach psi_tw (and the measured spectral gap) to a solved wave."""
    psi = adjoint_eigenfunction(model, wave)
    beta = spectral_gap(model, wave)[0] if with_gap else None
    kappa = float(np.max(np.abs(psi)))
    return WavePair(wave.grid, wave.phi, wave.c, psi, beta, kappa, dict(wave.meta))


class BandedSolver:
    """LU solve of a component-blocked sparse matrix in banded form.

    Rows and columns ordered (component, node) are interleaved to
    (node, component), which makes stencil-plus-pointwise operators banded;
    LAPACK's banded LU is then much faster than a general sparse solve for
    many right-hand sides.
    """

    def __init__(self, A, n_components: int):
        A = sp.csr_matrix(A)
        size = A.shape[0]
        N = size // n_components
        perm = np.arange(size).reshape(n_components, N).T.ravel()   # new -> old
        self.perm = perm
        self.inv = np.argsort(perm)
        B = A[perm][:, perm].tocoo()
        kl = int(max(0, np.max(B.row - B.col)))
        ku = int(max(0, np.max(B.col - B.row)))
        ab = np.zeros((2 * kl + ku + 1, size))
        ab[kl + ku + B.row - B.col, B.col] = B.data
        lu, piv, info = sla.lapack.dgbtrf(ab, kl, ku)
        if info != 0:
            raise SolverFailed("singular-step-matrix", f"banded LU failed (info={info})")
        self._lu, self._piv, self.kl, self.ku = lu, piv, kl, ku
        self.shape = A.shape

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        x, info = sla.lapack.dgbtrs(self._lu, self.kl, self.ku, b[self.perm], self._piv)
        if info != 0:
            raise SolverFailed("singular-step-matrix", f"banded solve failed (info={info})")
        return x[self.inv]


def step_solver(A, max_band: int = 64):
    """Banded LU if some component interleaving makes A narrow, sparse LU otherwise."""
    A = sp.csr_matrix(A)
    size = A.shape[0]
    B = A.tocoo()
    for n in (1, 2, 3, 4):
        if size % n or not B.nnz:
            continue
        N = size // n
        r = (B.row % N) * n + B.row // N
        c = (B.col % N) * n + B.col // N
        if np.max(np.abs(r - c)) <= max_band:
            return BandedSolver(A, n)
    return spl.splu(A.tocsc())


class Semigroup:
    """Crank-Nicolson realisation of S(t) = exp(t L) on stacked columns."""

    def __init__(self, L, dt: float):
        self.L = L.tocsc()
        self.dt = dt
        I = sp.identity(L.shape[0], format="csc")
        self._lu = step_solver(I - 0.5 * dt * self.L)
        self._rhs = (I + 0.5 * dt * self.L).tocsr()

    def step(self, V):
        return self._lu.solve(self._rhs @ V)

    def step_forced(self, Y, r0, r1):
        """One step of Y' = L Y + r(s), trapezoidal in the forcing."""
        return self._lu.solve(self._rhs @ Y + 0.5 * self.dt * (r0 + r1))

    def apply(self, v, t: float):
        """S(t) v for v of shape (n, N) or (nN, K)."""
        if t < 0:
            raise ValueError("t must be non-negative")
        shape = np.shape(v)
        V = np.asarray(v, dtype=float).reshape(self.L.shape[0], -1)
        nsteps = int(round(t / self.dt))
        if abs(nsteps * self.dt - t) > 1e-9 * max(1.0, t):
            raise ValueError("t must be a multiple of dt")
        for _ in range(nsteps):
            V = self.step(V)
        return V.reshape(shape)


def semigroup_apply(model: ModelSpec, wave: WavePair, v0, t: float, dt: float) -> np.ndarray:
    L, _ = build_linearization(model, wave)
    return Semigroup(L, dt).apply(v0, t)


def integrate_trajectories(L, V0, T, dt0, functional, dt_max=None, growth_after=10.0):
    """Trapezoid integral of functional(S(s) V0) over s in [0, T].

    Crank-Nicolson with step dt0 up to s = growth_after, after which the step
    doubles every ``growth_after`` time units up to dt_max (fast modes have
    decayed by then).  Returns (integral, s_values, functional values).
    """
    dt_max = dt_max or dt0
    V = np.array(V0, dtype=float)
    s, dt = 0.0, dt0
    stepper = Semigroup(L, dt)
    ss, vals = [0.0], [functional(V)]
    next_growth = growth_after
    while s < T - 1e-12:
        if s >= next_growth and dt < dt_max:
            dt = min(2 * dt, dt_max)
            stepper = Semigroup(L, dt)
            next_growth += growth_after
        h = min(dt, T - s)
        if h < dt:
            stepper = Semigroup(L, h)
        V = stepper.step(V)
        s += h
        ss.append(s)
        vals.append(functional(V))
    ss, vals = np.array(ss), np.array(vals)
    return np.trapezoid(vals, ss, axis=0), ss, vals


class BorderedSolver:
    """Solves L u + s Phi' = rhs with <psi, u> = 0."""

    def __init__(self, model: ModelSpec, wave: WavePair, L=None):
        grid = wave.grid
        L = build_linearization(model, wave)[0] if L is None else L
        self.shape = wave.phi.shape
        dphi = derivative(model, grid, wave.phi).ravel()
        A = sp.bmat([[L, dphi[:, None]], [(wave.psi.ravel() * grid.dx)[None, :], None]], format="csc")
        try:
            self._lu = spl.splu(A)
        except RuntimeError as exc:
            raise SolverFailed("bordered-singular", str(exc)) from exc

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float).reshape(self.shape)
        sol = self._lu.solve(np.concatenate([rhs.ravel(), [0.0]]))
        if not np.all(np.isfinite(sol)):
            raise SolverFailed("bordered-singular", "non-finite solution")
        return sol[:-1].reshape(self.shape), float(sol[-1])


def solve_bordered(model: ModelSpec, wave: WavePair, rhs):
    return BorderedSolver(model, wave).solve(rhs)


def front_position(u, x, level=0.5) -> float:
    """Rightmost crossing of ``level`` by u, linearly interpolated."""
    above = np.nonzero(u > level)[0]
    if above.size == 0 or above[-1] == len(u) - 1:
        raise SolverFailed("no-front", "profile has no downward crossing of the level")
    i = above[-1]
    return float(x[i] + (u[i] - level) / (u[i] - u[i + 1]) * (x[i + 1] - x[i]))


def pulse_guess_by_simulation(model: ModelSpec, grid: Grid, c_guess: float, front_at: float,
                              T=600.0, dt=0.05, bump_width=5.0, recentre_every=25.0) -> WavePair:
    """Grow a pulse from a bump in a frame moving with the running speed estimate.

    The deterministic equation is stepped with implicit diffusion and
    transport and explicit reaction.  Every ``recentre_every`` time units the
    front of the first component is moved back to ``front_at`` and the frame
    speed is corrected by the observed drift.
    """
    D1, D2 = difference_matrices(grid)
    I = sp.identity(grid.N, format="csc")
    x = grid.x
    U = np.zeros((model.n, grid.N))
    U[0] = np.where(np.abs(x - front_at + bump_width) < bump_width, 1.0, 0.0)
    c = float(c_guess)

    def factor(speed):
        return [spl.splu((I - dt * (model.rho[i] * D2 + speed * D1)).tocsc()) for i in range(model.n)]

    lus = factor(c)
    steps = int(round(recentre_every / dt))
    for _ in range(int(round(T / recentre_every))):
        for _ in range(steps):
            rhs = U + dt * model.f(U)
            U = np.stack([lus[i].solve(rhs[i]) for i in range(model.n)])
        drift = front_position(U[0], x) - front_at
        U = grid.shift(U, -drift, model.u_minus, model.u_plus)
        c += drift / recentre_every
        lus = factor(c)
    return WavePair(grid, U, c, meta={"source": "simulation", "guess_T": T})
