"""Full nonlinear simulation in the lab frame (U, Gamma) or the wave frame (V, Gamma).

Both schemes are semi-implicit Euler-Maruyama: the linear part is implicit,
everything else (reaction, Ito corrections, phase feedback, noise) explicit.

Wave frame:  (I - dt M) V+ = V + dt (R(V) - M V) + sigma S(V) dW, where
R(V) = K(Phi + V) + a(V) (Phi + V)', S(V) w = g(Phi + V) w + (Phi + V)' b(V)[w]
and M is the linearization of R at V = 0 with the extra diffusion
(sigma²/2) ||b(0)||²_HS frozen in.

Lab frame:   the SPDE for U is stepped in a frame moving with constant speed
``frame_speed`` (the noise law is translation invariant), and the phase
follows dGamma = [c + a(U, Gamma)] dt + sigma b(U, Gamma) dW with ψ and the
reference profile shifted to Gamma.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .grid import ShiftOutOfDomain
from .models import ModelSpec, apply_pointwise, ito_stratonovich_correction  # noqa: F401
from .noise import CovarianceKernel
from .phase import PhaseFunctionals, cutoff_high, cutoff_low  # noqa: F401
from .stochastic_wave import solve_instantaneous_wave
from .wave import WavePair, difference_matrices, linear_operator, step_solver

FRAMES = ("wave_V", "lab_U")


@dataclass
class SimConfig:
    dt: float = 1e-2
    T: float = 10.0
    frame: str = "wave_V"
    mu: int | None = None
    seed: int = 0
    k_up: float = 10.0
    record_every: int = 10
    frame_speed: float | None = None      # lab frame only; defaults to c_sigma
    profile_times: tuple = ()

    def __post_init__(self):
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("dt and T must be positive")
        if self.frame not in FRAMES:
            raise ValueError(f"frame must be one of {FRAMES}")
        if self.k_up < 1:
            raise ValueError("k_up must be at least 1")
        if self.record_every < 1:
            raise ValueError("record_every must be a positive integer")

    @property
    def steps(self) -> int:
        return int(np.ceil(self.T / self.dt - 1e-9))


class SimSetup:
    """Everything a run needs that does not depend on the realization."""

    def __init__(self, model: ModelSpec, kernel: CovarianceKernel, det: WavePair, sigma: float,
                 cfg: SimConfig, wave: WavePair | None = None):
        if cfg.mu is not None and cfg.mu != model.mu:
            model = model.with_mu(cfg.mu)
        if det.psi is None:
            raise ValueError("deterministic wave needs its adjoint eigenfunction")
        self.model, self.kernel, self.grid, self.det = model, kernel, kernel.grid, det
        self.sigma = float(sigma)
        self.cfg = cfg
        if wave is None:
            wave = solve_instantaneous_wave(model, kernel, det, sigma, with_expansion=False).wave
        self.wave = wave
        self.phi, self.c = wave.phi, wave.c
        self.phase = PhaseFunctionals(model, kernel, det.psi, det.phi, sigma, wave.c, cfg.k_up)
        self.dt = cfg.dt
        nN = self.phi.size
        I = sp.identity(nN, format="csc")
        if cfg.frame == "wave_V":
            F0 = self.phase.evaluate(self.phi[None])
            self.kappa0 = 0.5 * self.sigma**2 * float(F0.b_hs_sq[0])
            self.M = linear_operator(model, self.grid, self.phi, self.c, self.kappa0).tocsr()
            self.solver = step_solver(I - self.dt * self.M)
        else:
            self.v = self.c if cfg.frame_speed is None else float(cfg.frame_speed)
            D1, D2 = difference_matrices(self.grid)
            A = sp.block_diag([model.rho[i] * D2 + self.v * D1 for i in range(model.n)], format="csr")
            zero = np.zeros_like(self.phi)
            self.ghost = (model.rho[:, None] * self.grid.second_difference(zero, model.u_minus, model.u_plus)
                          + self.v * self.grid.first_difference(zero, model.u_minus, model.u_plus))
            self.solver = step_solver(I - self.dt * A)

    def solve(self, F):
        R = F.shape[0]
        return self.solver.solve(F.reshape(R, -1).T).T.reshape(F.shape)

    def apply_M(self, V):
        R = V.shape[0]
        return (self.M @ V.reshape(R, -1).T).T.reshape(V.shape)


@dataclass
class SimState:
    t: float
    X: np.ndarray            # V (wave frame) or U in the moving frame (lab frame)
    gamma: np.ndarray        # phase; in the lab frame relative to the moving frame
    alive: np.ndarray
    failed_at: np.ndarray    # tracking failure time or nan
    blowup_at: np.ndarray
    a: np.ndarray = None
    b_hs_sq: np.ndarray = None


def _mark_failures(state: SimState, X_new, ok_track, t_new):
    finite = np.all(np.isfinite(X_new), axis=(-2, -1))
    blow = state.alive & ~finite
    lost = state.alive & finite & ~ok_track
    state.blowup_at[blow] = t_new
    state.failed_at[lost] = t_new
    state.alive &= ~(blow | lost)


def step_wave_frame(state: SimState, setup: SimSetup, dW) -> SimState:
    """One step of the wave-frame SPDE and the phase SODE."""
    s, dt, model = setup.sigma, setup.dt, setup.model
    V = state.X
    U = setup.phi + V
    F = setup.phase.evaluate(U)
    bw = setup.phase.b_apply(F, dW)
    drift = F.K + F.a[:, None, None] * F.dU
    noise = apply_pointwise(model.g(U), dW) + F.dU * bw[:, None, None]
    Vn = setup.solve(V + dt * (drift - setup.apply_M(V)) + s * noise)
    ok_track = F.chi_h >= 1.0
    _mark_failures(state, Vn, ok_track, state.t + dt)
    live = state.alive
    state.gamma = np.where(live, state.gamma + (setup.c + F.a) * dt + s * bw, state.gamma)
    Vn[~live] = 0.0
    state.X = Vn
    state.a, state.b_hs_sq = F.a, F.b_hs_sq
    state.t += dt
    return state


def _shifted(setup: SimSetup, gamma):
    """ψ and the reference profile shifted by each realization's phase."""
    g, m = setup.grid, setup.model
    psi = np.stack([g.shift(setup.det.psi, x, 0.0, 0.0) for x in gamma])
    ref = np.stack([g.shift(setup.det.phi, x, m.u_minus, m.u_plus) for x in gamma])
    return psi, ref


def step_lab_frame(state: SimState, setup: SimSetup, dW) -> SimState:
    """One step of the lab-frame SPDE (in the moving frame) and the phase SODE."""
    s, dt, model = setup.sigma, setup.dt, setup.model
    U = state.X
    ok_track = np.abs(state.gamma) < setup.grid.L / 2
    gam = np.where(ok_track & state.alive, state.gamma, 0.0)
    try:
        psi, ref = _shifted(setup, gam)
    except ShiftOutOfDomain:       # guarded above; kept for safety
        psi, ref = _shifted(setup, np.zeros_like(gam))
    F = setup.phase.evaluate(U, psi=psi, phi_ref=ref)
    bw = setup.phase.b_apply(F, dW)
    rhs = U + dt * (model.f(U) + s**2 * model.h(U, setup.kernel.q_at_zero) + setup.ghost)
    Un = setup.solve(rhs + s * apply_pointwise(model.g(U), dW))
    ok_track &= F.chi_h >= 1.0
    _mark_failures(state, Un, ok_track, state.t + dt)
    live = state.alive
    state.gamma = np.where(live, state.gamma + (setup.c - setup.v + F.a) * dt + s * bw, state.gamma)
    Un[~live] = setup.phi
    state.X = Un
    state.a, state.b_hs_sq = F.a, F.b_hs_sq
    state.t += dt
    return state


def reconstruct_V_from_lab(U, gamma: float, setup: SimSetup) -> np.ndarray:
    """V = U(. + Gamma) - Phi_sigma; raises ShiftOutOfDomain if tracking is lost."""
    m = setup.model
    return setup.grid.shift(U, -gamma, m.u_minus, m.u_plus) - setup.phi


@dataclass
class SimPath:
    times: np.ndarray
    gamma: np.ndarray            # (T, R) lab-frame phase
    a: np.ndarray
    b_hs_sq: np.ndarray
    v_l2sq: np.ndarray
    v_h1sq: np.ndarray
    profiles: dict               # t -> V, (R, n, N)
    tracking_failed_at: np.ndarray
    blowup_at: np.ndarray
    frame: str
    sigma: float
    c_sigma: float
    seeds: list = field(default_factory=list)
    expansion: dict | None = None

    @property
    def ok(self) -> np.ndarray:
        return np.isnan(self.tracking_failed_at) & np.isnan(self.blowup_at)


def _norms(grid, V):
    dx = grid.dx
    l2 = dx * np.sum(V**2, axis=(-2, -1))
    dV = grid.first_difference(V)
    return l2, l2 + dx * np.sum(dV**2, axis=(-2, -1))


def initial_state(setup: SimSetup, R: int, V0=None) -> SimState:
    V0 = np.zeros((R,) + setup.phi.shape) if V0 is None else np.broadcast_to(V0, (R,) + setup.phi.shape).copy()
    X = V0 if setup.cfg.frame == "wave_V" else setup.phi + V0
    nan = np.full(R, np.nan)
    return SimState(0.0, X.astype(float), np.zeros(R), np.ones(R, bool), nan.copy(), nan.copy())


def simulate(setup: SimSetup, noise, V0=None, expansion=None) -> SimPath:
    """Run ``noise.R`` realizations to cfg.T, recording every cfg.record_every steps.

    ``expansion`` (an ExpansionContext around the same wave) switches on the
    first- and second-order expansion driven by the same increments, so the
    residual V - sigma V1 - sigma² V2 and Gamma1 can be recorded.
    """
    cfg, grid, s = setup.cfg, setup.grid, setup.sigma
    R = noise.R
    state = initial_state(setup, R, V0)
    step = step_wave_frame if cfg.frame == "wave_V" else step_lab_frame
    exp_st = None
    if expansion is not None:
        from .expansion import ExpansionStepper
        exp_st = ExpansionStepper(expansion, cfg.dt, R, order=2)
    profile_steps = {int(round(t / cfg.dt)): float(t) for t in cfg.profile_times}
    rec = {k: [] for k in ("t", "gamma", "a", "b", "l2", "h1", "g1", "g2", "v1", "res")}
    profiles, prof1, prof2 = {}, {}, {}

    def current_V():
        if cfg.frame == "wave_V":
            return state.X
        out = np.zeros_like(state.X)
        for r in range(R):
            if state.alive[r]:
                try:
                    out[r] = reconstruct_V_from_lab(state.X[r], state.gamma[r], setup)
                except ShiftOutOfDomain:
                    state.alive[r] = False
                    state.failed_at[r] = state.t
        return out

    def record(i):
        V = current_V()
        l2, h1 = _norms(grid, V)
        shift = setup.v * state.t if cfg.frame == "lab_U" else 0.0
        rec["t"].append(state.t)
        rec["gamma"].append(state.gamma + shift)
        rec["a"].append(np.zeros(R) if state.a is None else state.a.copy())
        rec["b"].append(np.zeros(R) if state.b_hs_sq is None else state.b_hs_sq.copy())
        rec["l2"].append(l2)
        rec["h1"].append(h1)
        if exp_st is not None:
            rec["g1"].append(exp_st.G1.copy())
            rec["g2"].append(exp_st.G2.copy())
            rec["v1"].append(grid.dx * np.sum(exp_st.V1**2, axis=(-2, -1)))
            res = V - s * exp_st.V1 - s**2 * exp_st.V2
            rec["res"].append(grid.dx * np.sum(res**2, axis=(-2, -1)))
        if i in profile_steps:
            t = profile_steps[i]
            profiles[t] = V.copy()
            if exp_st is not None:
                prof1[t], prof2[t] = exp_st.V1.copy(), exp_st.V2.copy()

    record(0)
    for i in range(1, cfg.steps + 1):
        dW = noise.sample_increment(cfg.dt)
        if noise.single:
            dW = dW[None]
        state = step(state, setup, dW)
        if exp_st is not None:
            exp_st.step(dW)
        if i % cfg.record_every == 0 or i == cfg.steps or i in profile_steps:
            record(i)
    arr = lambda k: np.array(rec[k])
    expansion_out = None
    if exp_st is not None:
        expansion_out = {"gamma1": arr("g1"), "gamma2": arr("g2"), "v1_l2sq": arr("v1"),
                         "vres_l2sq": arr("res"), "V1": prof1, "V2": prof2}
    return SimPath(arr("t"), arr("gamma"), arr("a"), arr("b"), arr("l2"), arr("h1"), profiles,
                   state.failed_at, state.blowup_at, cfg.frame, s, setup.c, list(noise.seeds),
                   expansion_out)


def phase_functionals(setup: SimSetup, V):
    """a_sigma(V), b_sigma(V) row and ||b||²_HS in the wave frame."""
    V = np.asarray(V, dtype=float)
    single = V.ndim == 2
    F = setup.phase.evaluate(setup.phi + (V[None] if single else V))
    if single:
        return {"a": float(F.a[0]), "b_row": F.b_row[0], "b_hs_sq": float(F.b_hs_sq[0])}
    return {"a": F.a, "b_row": F.b_row, "b_hs_sq": F.b_hs_sq}
