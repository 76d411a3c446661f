"""sigma-power expansion of the wave-frame perturbation V and the phase Gamma.

    dV1 = L V1 dt + S0 dW,                       dG1 = b0[dW]
    dV2 = [L V2 + R2[V1, V1]] dt + S1(V1) dW,    dG2 = a2[V1] dt + b1[V1][dW]

with L the linearization about the deterministic wave, ψ its adjoint
eigenfunction and Phi the (possibly noise-corrected) instantaneous wave:

    b0[w]     = -<ψ, g w>/D,                     D = <Phi', ψ>
    S0 w      = g w + Phi' b0[w]
    R2[V, V]  = 1/2 D²f[V, V] - Phi' <1/2 D²f[V, V], ψ>/D
    a2[V]     = -<1/2 D²f[V, V], ψ>/D
    b1[V][w]  = -<ψ, Dg[V] w>/D + <V', ψ><ψ, g w>/D²
    S1(V)[w]  = Dg[V] w + V' b0[w] + Phi' b1[V][w]

Linear terms are implicit (backward Euler), the rest explicit, so each run
factorizes one matrix.  Deterministic expectations (orbital drift, E||V1||²,
E[V2]) are integrals over the trajectories s -> S(s) I_k of a truncated
cosine/sine basis, I_k = sqrt(λ_k) S0 e_k.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.integrate import cumulative_trapezoid

from .models import apply_pointwise, apply_transpose
from .noise import CovarianceKernel, NoiseSampler, basis_eigendata, kmax_for
from .wave import (BorderedSolver, Semigroup, WavePair, build_linearization, derivative,
                   step_solver)


class MeshMismatch(ValueError):
    pass


@dataclass
class ExpansionPath:
    times: np.ndarray
    V1: np.ndarray             # (T, R, n, N) on the record mesh
    V2: np.ndarray | None
    Gamma1: np.ndarray         # (T, R)
    Gamma2: np.ndarray | None
    Gamma3: np.ndarray | None  # drift part of Gamma_apx - c t - sigma G1 - sigma² G2
    seeds: list = field(default_factory=list)
    dt: float = 0.0


@dataclass
class BasisPass:
    """Everything integrated along the basis trajectories in one sweep."""
    s: np.ndarray
    drift_integrand: np.ndarray     # -sum_k <1/2 D²f[v_k, v_k], ψ>/D
    norm_integrand: np.ndarray      # sum_k ||v_k||²
    r2_integral: np.ndarray         # ∫ sum_k R2[v_k, v_k] ds
    mean_V2: dict                   # t -> E[V2(t)]
    tail_bound: float


class ExpansionContext:
    """Model, kernel, wave and basis data shared by all expansion computations.

    ``det`` is the deterministic wave (with ψ and β); ``wave`` is the wave the
    expansion is built around and defaults to ``det``.
    """

    def __init__(self, model, kernel: CovarianceKernel, det: WavePair, wave: WavePair | None = None,
                 k_max: int | None = None, dt_sg: float = 1e-3, T_int: float | None = None,
                 dt_max: float = 0.2, growth_after: float = 1.0):
        if det.psi is None:
            raise ValueError("deterministic wave needs its adjoint eigenfunction")
        self.model = model
        self.kernel = kernel
        self.grid = kernel.grid
        self.det = det
        self.wave = det if wave is None else wave
        zeta = kernel.param if kernel.kind == "gaussian" else 1.0
        self.k_max = kmax_for(self.grid.L, zeta) if k_max is None else int(k_max)
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        self.dt_sg = dt_sg
        self.dt_max = dt_max
        self.growth_after = growth_after
        beta = det.beta if det.beta else 0.25
        self.T_int = max(20.0, np.ceil(10 * np.log(1e4) / beta) / 10) if T_int is None else float(T_int)  # e^{-beta T} <= 1e-4
        self.psi = det.psi
        self.L = build_linearization(model, det)[0]
        self.phi = self.wave.phi
        self.dphi = derivative(model, self.grid, self.phi)
        self.D = self.grid.inner_product(self.dphi, self.psi)
        self.G = model.g(self.phi)                       # (n, m, N)
        self.dG = model.dg(self.phi)                     # (n, m, n, N)
        self.gt_psi = apply_transpose(self.G, self.psi)  # (m, N)
        self._pass = None

    # ---- pointwise pieces -------------------------------------------------

    def inner(self, a, b):
        a, b = np.broadcast_arrays(a, b)
        return self.grid.dx * np.einsum("...ij,...ij->...", a, b)

    def b0(self, w):
        """-<ψ, g w>/D for noise fields w (..., m, N)."""
        return -self.inner(self.gt_psi, w) / self.D

    def S0(self, w):
        w = np.asarray(w, dtype=float)
        return apply_pointwise(self.G, w) + self.dphi * self.b0(w)[..., None, None]

    def half_d2f(self, V):
        return 0.5 * self.model.D2f(self.phi, V, V)

    def a2(self, V):
        return -self.inner(self.half_d2f(V), self.psi) / self.D

    def R2(self, V):
        return self.half_d2f(V) + self.dphi * self.a2(V)[..., None, None]

    def Dg_apply(self, V, w):
        """Dg(Phi)[V] w, shape (..., n, N)."""
        dgV = np.einsum("ijkx,...kx->...ijx", self.dG, V)
        return np.einsum("...ijx,...jx->...ix", dgV, w)

    def b1(self, V, w):
        dV = self.grid.first_difference(V)
        return (-self.inner(self.psi, self.Dg_apply(V, w)) / self.D
                + self.inner(dV, self.psi) * self.inner(self.gt_psi, w) / self.D**2)

    def S1(self, V, w):
        dV = self.grid.first_difference(V)
        return (self.Dg_apply(V, w) + dV * self.b0(w)[..., None, None]
                + self.dphi * self.b1(V, w)[..., None, None])

    # ---- basis ------------------------------------------------------------

    def noise_components(self):
        """Noise components that actually enter (nonzero column of g)."""
        return [j for j in range(self.model.m) if np.any(self.G[:, j])]

    def basis_columns(self):
        """I_k = sqrt(λ_k) S0 e_k for every basis function and active component.

        Returns an (nN, K) array.
        """
        E, lam, _ = basis_eigendata(self.grid, self.kernel, self.k_max)
        cols = []
        for j in self.noise_components():
            w = np.zeros((E.shape[0], self.model.m, self.grid.N))
            w[:, j, :] = E * np.sqrt(lam)[:, None]
            cols.append(self.S0(w))
        I = np.concatenate(cols, axis=0)                  # (K, n, N)
        return I.reshape(I.shape[0], -1).T

    def basis_pass(self, mean_V2_times=(), horizon=None):
        """Sweep S(s) I_k over [0, max(T_int, horizon)] once and cache every integral.

        E R2[V1(s)] is the running integral of the basis sum r2, so E[V2]
        solves Y' = L Y + ∫_0^s r2 and is forced by that running integral.
        """
        want = tuple(sorted(float(t) for t in mean_V2_times))
        horizon = max([self.T_int, horizon or 0.0] + list(want))
        if (self._pass is not None and all(t in self._pass.mean_V2 for t in want)
                and self._pass.s[-1] >= horizon - 1e-9):
            return self._pass
        shape = self.phi.shape
        V = self.basis_columns()
        K = V.shape[1]

        def as_fields(V):
            return V.T.reshape((K,) + shape)

        def evaluate(V):
            F = as_fields(V)
            h = self.half_d2f(F)
            drift = -np.sum(self.inner(h, self.psi)) / self.D
            norm = self.grid.dx * np.sum(V * V)
            r2 = np.sum(h, axis=0) + self.dphi * (-np.sum(self.inner(h, self.psi)) / self.D)
            return drift, norm, r2

        targets = list(want)
        landings = sorted(set(targets) | {self.T_int})
        s, dt = 0.0, self.dt_sg
        stepper = Semigroup(self.L, dt)
        d0, n0, r0 = evaluate(V)
        ss, drift, norm, r2_int = [0.0], [d0], [n0], np.zeros(shape)
        Y = np.zeros(self.phi.size)
        cum = np.zeros(shape)                 # ∫_0^s r2
        mean_V2 = {}
        next_growth = self.growth_after
        while s < horizon - 1e-12:
            if s >= next_growth and dt < self.dt_max:
                dt = min(2 * dt, self.dt_max)
                stepper = Semigroup(self.L, dt)
                next_growth += self.growth_after
            h = dt
            if landings and s + h > landings[0] + 1e-12:
                h = landings[0] - s
            h = min(h, horizon - s)
            st = stepper if abs(h - dt) < 1e-14 else Semigroup(self.L, h)
            V = st.step(V)
            d1, n1, r1 = evaluate(V)
            cum_next = cum + 0.5 * h * (r0 + r1)
            Y = st.step_forced(Y, cum.ravel(), cum_next.ravel())
            cum = cum_next
            if s + h <= self.T_int + 1e-12:
                r2_int = cum.copy()
            s += h
            ss.append(s)
            drift.append(d1)
            norm.append(n1)
            r0 = r1
            while landings and abs(s - landings[0]) < 1e-9:
                landings.pop(0)
            while targets and abs(s - targets[0]) < 1e-9:
                mean_V2[targets.pop(0)] = Y.reshape(shape).copy()
        ss, drift, norm = np.array(ss), np.array(drift), np.array(norm)
        beta = self.det.beta if self.det.beta else 0.25
        inside = ss <= self.T_int + 1e-12
        peak = np.max(np.abs(drift[inside]))
        tail = float(np.exp(-beta * self.T_int) * peak / beta)
        old = self._pass.mean_V2 if self._pass is not None else {}
        self._pass = BasisPass(ss, drift, norm, r2_int, {**old, **mean_V2}, tail)
        return self._pass


# ---- deterministic predictions ---------------------------------------------


def expected_gamma2_rate(ctx: ExpansionContext):
    """Orbital drift speed coefficient; returns (value, tail bound)."""
    bp = ctx.basis_pass()
    inside = bp.s <= ctx.T_int + 1e-12
    return float(np.trapezoid(bp.drift_integrand[inside], bp.s[inside])), bp.tail_bound


def predicted_V1_norm(ctx: ExpansionContext, t):
    """E||V1(t)||² from the basis sum (array-valued for array t)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    bp = ctx.basis_pass(horizon=float(np.max(t, initial=0.0)))
    cum = cumulative_trapezoid(bp.norm_integrand, bp.s, initial=0.0)
    return np.interp(t, bp.s, cum)


def expected_second_order(ctx: ExpansionContext, t: float) -> np.ndarray:
    """E[V2(t)] = ∫_0^t S(t-s) E R2[V1(s), V1(s)] ds."""
    return ctx.basis_pass(mean_V2_times=(t,)).mean_V2[float(t)]


def orbital_drift_shape(ctx: ExpansionContext) -> np.ndarray:
    """V_od = -L^{-1} ∫ sum_k R2[v_k, v_k] ds on the complement of the kernel."""
    bp = ctx.basis_pass()
    u, _ = BorderedSolver(ctx.model, ctx.det, ctx.L).solve(-bp.r2_integral)
    return u


def lyapunov_cod(ctx: ExpansionContext) -> float:
    """Dense oracle for the orbital drift speed via the stationary covariance.

    P solves Lt P + P Lt^T + C = 0 with Lt = L - Phi' ψ^T dx (the kernel
    shifted to -1) and C = S0 Q S0^T the nodal covariance rate of S0 dW.
    Only practical for small grids.
    """
    grid, model = ctx.grid, ctx.model
    n, m, N, dx = model.n, model.m, grid.N, grid.dx
    if n * N > 2500:
        raise ValueError("Lyapunov oracle is dense; use a grid with n N <= 2500")
    lags = np.abs(grid.x[:, None] - grid.x[None, :])
    Qn = ctx.kernel.q(lags)
    S = np.zeros((n * N, m * N))
    for i in range(n):
        for j in range(m):
            S[i * N:(i + 1) * N, j * N:(j + 1) * N] = np.diag(ctx.G[i, j])
    d = ctx.dphi.ravel()
    S -= np.outer(d, (ctx.gt_psi.ravel() * dx)) / ctx.D
    C = S @ sp.block_diag([Qn] * m).toarray() @ S.T
    Lt = ctx.L.toarray() - np.outer(d, ctx.psi.ravel() * dx) / ctx.D
    P = sla.solve_continuous_lyapunov(Lt, -C)
    total = 0.0
    for a in range(n):
        for b in range(n):
            ea = np.zeros((n, N))
            eb = np.zeros((n, N))
            ea[a] = 1.0
            eb[b] = 1.0
            Pab = np.diag(P[a * N:(a + 1) * N, b * N:(b + 1) * N])
            total += np.sum(0.5 * model.D2f(ctx.phi, ea, eb) * Pab * ctx.psi) * dx
    return float(-total / ctx.D)


# ---- stochastic paths -------------------------------------------------------


class ExpansionStepper:
    """Advances (V1, G1, V2, G2) for a batch of realizations on a fixed dt.

    When ``phase`` (a PhaseFunctionals) and ``sigma`` are given it also
    accumulates the drift part of Gamma_apx - c t - sigma G1 - sigma² G2.
    """

    def __init__(self, ctx: ExpansionContext, dt: float, R: int, order: int = 2,
                 phase=None, sigma: float = 0.0):
        self.ctx = ctx
        self.dt = dt
        self.order = order
        nN = ctx.phi.size
        self._lu = step_solver(sp.identity(nN, format="csc") - dt * ctx.L)
        shape = (R,) + ctx.phi.shape
        self.V1 = np.zeros(shape)
        self.V2 = np.zeros(shape) if order >= 2 else None
        self.G1 = np.zeros(R)
        self.G2 = np.zeros(R) if order >= 2 else None
        self.phase = phase
        self.sigma = sigma
        self.G3 = np.zeros(R) if phase is not None else None

    def _solve(self, F):
        R = F.shape[0]
        out = self._lu.solve(F.reshape(R, -1).T)
        return out.T.reshape(F.shape)

    def step(self, dW):
        ctx, dt = self.ctx, self.dt
        V1 = self.V1
        if self.G3 is not None:
            s = self.sigma
            F = self.phase.evaluate(ctx.phi + s * V1 + s**2 * self.V2)
            self.G3 += dt * (F.a - s**2 * ctx.a2(V1))
        self.G1 += ctx.b0(dW)
        if self.order >= 2:
            self.G2 += dt * ctx.a2(V1) + ctx.b1(V1, dW)
            self.V2 = self._solve(self.V2 + dt * ctx.R2(V1) + ctx.S1(V1, dW))
        self.V1 = self._solve(V1 + ctx.S0(dW))


def _run(ctx, noise: NoiseSampler, T, dt, order, record_every, phase=None, sigma=0.0):
    steps = int(np.ceil(T / dt - 1e-9))
    R = noise.R
    st = ExpansionStepper(ctx, dt, R, order, phase, sigma)
    times, V1s, V2s, G1s, G2s, G3s = [0.0], [st.V1.copy()], [], [st.G1.copy()], [], []
    if order >= 2:
        V2s.append(st.V2.copy())
        G2s.append(st.G2.copy())
    if phase is not None:
        G3s.append(st.G3.copy())
    for i in range(1, steps + 1):
        dW = noise.sample_increment(dt)
        if noise.single:
            dW = dW[None]
        st.step(dW)
        if i % record_every == 0 or i == steps:
            times.append(i * dt)
            V1s.append(st.V1.copy())
            G1s.append(st.G1.copy())
            if order >= 2:
                V2s.append(st.V2.copy())
                G2s.append(st.G2.copy())
            if phase is not None:
                G3s.append(st.G3.copy())
    arr = lambda xs: np.array(xs) if xs else None
    return ExpansionPath(np.array(times), np.array(V1s), arr(V2s), np.array(G1s), arr(G2s), arr(G3s),
                         list(noise.seeds), dt)


def evolve_first_order(ctx: ExpansionContext, noise: NoiseSampler, T: float, dt: float,
                       record_every: int = 1) -> ExpansionPath:
    return _run(ctx, noise, T, dt, 1, record_every)


def evolve_second_order(ctx: ExpansionContext, noise: NoiseSampler, T: float, dt: float,
                        first: ExpansionPath | None = None, record_every: int = 1) -> ExpansionPath:
    """Second-order pair on the same noise stream as the first-order pair.

    ``noise`` must be a fresh sampler; when ``first`` is given it must come
    from the same seeds and time mesh, and its V1 is checked against the
    recomputed one.
    """
    out = _run(ctx, noise, T, dt, 2, record_every)
    if first is not None:
        if (first.dt != dt or len(first.times) != len(out.times)
                or not np.allclose(first.times, out.times) or list(first.seeds) != list(noise.seeds)):
            raise MeshMismatch("first-order path was computed on a different mesh or stream")
        if not np.allclose(first.V1, out.V1, rtol=0, atol=1e-12):
            raise MeshMismatch("first-order path does not match the given noise stream")
    return out


@dataclass
class CubicEstimate:
    sigma: float
    value: float          # c_cub(sigma)
    stderr: float
    rate: float           # value / sigma³
    R: int
    small_ensemble: bool


def cubic_from_paths(times, G3, T: float, sigma: float) -> CubicEstimate:
    """(2/T)∫_{T/2}^T t^{-1} E[G3(t)] dt with the per-path spread as error."""
    times = np.asarray(times)
    sel = times >= T / 2 - 1e-12
    per_path = np.trapezoid(G3[sel] / times[sel, None], times[sel], axis=0) * 2 / T
    R = per_path.size
    val = float(per_path.mean())
    se = float(per_path.std(ddof=1) / np.sqrt(R)) if R > 1 else float("nan")
    small = R < 100
    if small:
        warnings.warn("cubic estimate from fewer than 100 realizations")
    return CubicEstimate(sigma, val, se, val / sigma**3, R, small)


def gamma3_rate(ctx: ExpansionContext, phase, sigma: float, noise: NoiseSampler, T: float,
                dt: float = 1e-2, record_every: int = 10) -> CubicEstimate:
    """Monte-Carlo cubic speed correction c_cub(sigma) and c_cub/sigma³.

    Only the drift of Gamma_apx - c t - sigma G1 - sigma² G2 is integrated:
    the stochastic integrals have mean zero and would only add variance.
    """
    path = _run(ctx, noise, T, dt, 2, record_every, phase, sigma)
    return cubic_from_paths(path.times, path.Gamma3, T, sigma)
