"""Monte-Carlo ensembles and the statistics computed from them.

Realization i always uses the seed (base_seed, i) and realizations are
simulated in fixed-size chunks, so results do not depend on how many worker
threads run the chunks or in which order they finish.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .noise import NoiseSampler, realization_seed
from .simulator import SimConfig, SimPath, SimSetup, simulate


@dataclass
class EnsembleSpec:
    R: int
    sigmas: tuple
    base_seed: int = 0
    cfg: SimConfig = field(default_factory=SimConfig)
    with_expansion: bool = False
    chunk: int = 25
    threads: int | None = None
    keep_paths: bool = False
    out_dir: str | None = None

    def __post_init__(self):
        if self.R < 2:
            raise ValueError("an ensemble needs at least two realizations")
        if self.chunk < 1:
            raise ValueError("chunk size must be positive")
        self.sigmas = tuple(float(s) for s in np.atleast_1d(self.sigmas))

    def seeds(self):
        return [realization_seed(self.base_seed, i) for i in range(self.R)]


def resolve_threads(threads=None) -> int:
    if threads:
        return max(1, int(threads))
    env = os.environ.get("STOCHWAVE_THREADS")
    return max(1, int(env)) if env else 1


@dataclass
class EnsembleStats:
    sigma: float
    c_sigma: float
    times: np.ndarray
    R: int
    R_eff: int
    failures: int
    valid: bool
    phase_mean: np.ndarray          # E[Gamma - c_sigma t]
    phase_var: np.ndarray
    phase_se: np.ndarray
    v_l2sq_mean: np.ndarray
    v_l2sq_se: np.ndarray
    sup_mean: np.ndarray            # E[sup_{s <= t} ||V(s)||²]
    sup_se: np.ndarray
    phi_sigma: np.ndarray
    profile_mean: dict = field(default_factory=dict)       # t -> E[V(t)]
    profile_se: dict = field(default_factory=dict)
    reduced_profile_mean: dict = field(default_factory=dict)   # t -> E[V - sigma V1]
    reduced_profile_se: dict = field(default_factory=dict)
    v1_l2sq_mean: np.ndarray | None = None
    vres_l2sq_mean: np.ndarray | None = None
    vres_l2sq_se: np.ndarray | None = None
    gamma1_mean: np.ndarray | None = None
    path: SimPath | None = None     # merged per-path records (ok realizations only)


def _mean_se(x, axis=-1):
    x = np.asarray(x, dtype=float)
    n = x.shape[axis]
    m = x.mean(axis=axis)
    se = x.std(axis=axis, ddof=1) / np.sqrt(n) if n > 1 else np.full_like(m, np.nan)
    return m, se


def _merge(paths: list[SimPath]) -> SimPath:
    cat = lambda name: np.concatenate([getattr(p, name) for p in paths], axis=-1)
    first = paths[0]
    prof = {t: np.concatenate([p.profiles[t] for p in paths]) for t in first.profiles}
    exp = None
    if first.expansion is not None:
        exp = {k: np.concatenate([p.expansion[k] for p in paths], axis=-1)
               for k in ("gamma1", "gamma2", "v1_l2sq", "vres_l2sq")}
        for k in ("V1", "V2"):
            exp[k] = {t: np.concatenate([p.expansion[k][t] for p in paths]) for t in first.expansion[k]}
    return SimPath(first.times, cat("gamma"), cat("a"), cat("b_hs_sq"), cat("v_l2sq"), cat("v_h1sq"),
                   prof, np.concatenate([p.tracking_failed_at for p in paths]),
                   np.concatenate([p.blowup_at for p in paths]), first.frame, first.sigma,
                   first.c_sigma, sum((p.seeds for p in paths), []), exp)


def _select(path: SimPath, keep) -> SimPath:
    exp = None
    if path.expansion is not None:
        exp = {k: path.expansion[k][:, keep] for k in ("gamma1", "gamma2", "v1_l2sq", "vres_l2sq")}
        for k in ("V1", "V2"):
            exp[k] = {t: v[keep] for t, v in path.expansion[k].items()}
    return SimPath(path.times, path.gamma[:, keep], path.a[:, keep], path.b_hs_sq[:, keep],
                   path.v_l2sq[:, keep], path.v_h1sq[:, keep],
                   {t: v[keep] for t, v in path.profiles.items()},
                   path.tracking_failed_at[keep], path.blowup_at[keep], path.frame, path.sigma,
                   path.c_sigma, [s for s, k in zip(path.seeds, keep) if k], exp)


def run_paths(setup: SimSetup, seeds, chunk=25, threads=None, expansion=None, V0=None) -> SimPath:
    """Simulate one realization per seed in fixed chunks and merge in seed order."""
    m = setup.model.m
    chunks = [seeds[i:i + chunk] for i in range(0, len(seeds), chunk)]

    def work(ch):
        return simulate(setup, NoiseSampler(setup.kernel, ch, m), V0=V0, expansion=expansion)

    nthreads = resolve_threads(threads)
    if nthreads == 1:
        results = [work(ch) for ch in chunks]
    else:
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            results = list(pool.map(work, chunks))
    return _merge(results)


def summarize(path: SimPath, phi_sigma, keep_path=False) -> EnsembleStats:
    R = path.gamma.shape[1]
    ok = path.ok
    failures = int(R - ok.sum())
    p = _select(path, ok)
    t = p.times
    excess = p.gamma - p.c_sigma * t[:, None]
    pm, pse = _mean_se(excess)
    pvar = excess.var(axis=1, ddof=1) if excess.shape[1] > 1 else np.zeros_like(t)
    vm, vse = _mean_se(p.v_l2sq)
    sup = np.maximum.accumulate(p.v_l2sq, axis=0)
    sm, sse = _mean_se(sup)
    st = EnsembleStats(p.sigma, p.c_sigma, t, R, int(ok.sum()), failures, failures <= 0.1 * R,
                       pm, pvar, pse, vm, vse, sm, sse, np.asarray(phi_sigma))
    for tt, V in p.profiles.items():
        st.profile_mean[tt], st.profile_se[tt] = _mean_se(V, axis=0)
    if p.expansion is not None:
        e = p.expansion
        st.v1_l2sq_mean = e["v1_l2sq"].mean(axis=1)
        st.vres_l2sq_mean, st.vres_l2sq_se = _mean_se(e["vres_l2sq"])
        st.gamma1_mean = e["gamma1"].mean(axis=1)
        for tt, V in p.profiles.items():
            if tt in e["V1"]:
                red = V - p.sigma * e["V1"][tt]
                st.reduced_profile_mean[tt], st.reduced_profile_se[tt] = _mean_se(red, axis=0)
    if keep_path:
        st.path = p
    return st


def run_ensemble(spec: EnsembleSpec, model, kernel, det, expansion_for=None) -> list[EnsembleStats]:
    """One EnsembleStats per sigma in spec.sigmas.

    ``expansion_for(setup)`` returns the ExpansionContext to drive alongside
    each run when spec.with_expansion is set.
    """
    out = []
    for s in spec.sigmas:
        setup = SimSetup(model, kernel, det, s, spec.cfg)
        ctx = None
        if spec.with_expansion:
            if expansion_for is None:
                from .expansion import ExpansionContext
                ctx = ExpansionContext(setup.model, kernel, det, wave=setup.wave)
            else:
                ctx = expansion_for(setup)
        path = run_paths(setup, spec.seeds(), spec.chunk, spec.threads, ctx)
        out.append(summarize(path, setup.phi, spec.keep_paths))
    return out


# ---- estimators -------------------------------------------------------------


def _late_average(times, values, T):
    """(2/T) ∫_{T/2}^T values(t)/t dt per column."""
    sel = (times >= T / 2 - 1e-12) & (times <= T + 1e-12)
    t = times[sel]
    return np.trapezoid(values[sel] / t[:, None], t, axis=0) * 2 / T


def observed_limiting_speed(stats: EnsembleStats, T: float | None = None):
    """c_sigma + (2/T)∫_{T/2}^T E[Gamma - c_sigma t - sigma Gamma1]/t dt; returns (value, se).

    Subtracting the mean-zero sigma Gamma1 leaves the mean unchanged and
    removes most of the variance.  Needs the merged path (keep_paths).
    """
    p = stats.path
    if p is None:
        raise ValueError("observed speed needs per-path records (keep_paths=True)")
    T = p.times[-1] if T is None else T
    excess = p.gamma - stats.c_sigma * p.times[:, None]
    if p.expansion is not None:
        excess = excess - stats.sigma * p.expansion["gamma1"]
    per = _late_average(p.times, excess, T)
    m, se = _mean_se(per)
    return float(stats.c_sigma + m), float(se)


def observed_limiting_shape(stats: EnsembleStats, t_eval: float, reduced=True) -> np.ndarray:
    """Phi_sigma + E[V(t_eval)] (minus the mean-zero sigma V1 when available)."""
    t_eval = float(t_eval)
    if reduced and t_eval in stats.reduced_profile_mean:
        return stats.phi_sigma + stats.reduced_profile_mean[t_eval]
    if t_eval not in stats.profile_mean:
        raise KeyError(f"no profile snapshot at t={t_eval}")
    return stats.phi_sigma + stats.profile_mean[t_eval]


def loglog_fit(x, y):
    """Slope of log y against log x with a 95% confidence half-width."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    r = sps.linregress(np.log(x), np.log(y))
    half = sps.t.ppf(0.975, len(x) - 2) * r.stderr if len(x) > 2 else np.inf
    return {"slope": float(r.slope), "ci": float(half), "intercept": float(r.intercept),
            "r2": float(r.rvalue**2)}


def scaling_report(stats_list: list[EnsembleStats], T_eval: float | None = None) -> dict:
    """Log-log exponents of E||V||², E||V_res||² and the running sup against sigma."""
    if len(stats_list) < 4:
        raise ValueError("scaling fits need at least four sigma values")
    sig = np.array([s.sigma for s in stats_list])
    if sig.max() / sig.min() < 10 - 1e-9:
        raise ValueError("sigma values must span at least one decade")

    def at(st, arr):
        i = -1 if T_eval is None else int(np.argmin(np.abs(st.times - T_eval)))
        return arr[i]

    out = {"sigma": sig.tolist(),
           "v_l2sq": loglog_fit(sig, [at(s, s.v_l2sq_mean) for s in stats_list]),
           "sup": loglog_fit(sig, [at(s, s.sup_mean) for s in stats_list])}
    if all(s.vres_l2sq_mean is not None for s in stats_list):
        out["vres_l2sq"] = loglog_fit(sig, [at(s, s.vres_l2sq_mean) for s in stats_list])
    return out


def running_sup_stat(times, v_l2sq, fit_window=(10.0, 200.0)) -> dict:
    """E[sup_{s<=t} ||V(s)||²] with R² of a log-t fit against a linear-t fit."""
    times = np.asarray(times)
    sup = np.maximum.accumulate(np.asarray(v_l2sq), axis=0)
    mean = sup.mean(axis=1)
    sel = (times >= fit_window[0]) & (times <= fit_window[1])
    res = {"times": times, "mean": mean}
    if sel.sum() >= 3:
        lo = sps.linregress(np.log(times[sel]), mean[sel])
        li = sps.linregress(times[sel], mean[sel])
        res.update(r2_log=float(lo.rvalue**2), r2_linear=float(li.rvalue**2))
    return res


def stability_functional(times, v_l2sq, v_h1sq, epsilon: float, eta: float | None = None):
    """N(t) = ||V(t)||² + ∫_0^t exp(-epsilon (t - s)) ||V(s)||²_H1 ds per path.

    Returns (N, t_st) where t_st is the first time N exceeds eta (T if never).
    """
    times = np.asarray(times, dtype=float)
    l2 = np.asarray(v_l2sq, dtype=float)
    h1 = np.asarray(v_h1sq, dtype=float)
    acc = np.zeros(l2.shape[1:])
    N = np.empty_like(l2)
    N[0] = l2[0]
    for k in range(1, len(times)):
        h = times[k] - times[k - 1]
        decay = np.exp(-epsilon * h)
        acc = decay * acc + 0.5 * h * (decay * h1[k - 1] + h1[k])
        N[k] = l2[k] + acc
    if eta is None:
        return N, None
    crossed = N > eta
    first = np.where(crossed.any(axis=0), times[np.argmax(crossed, axis=0)], times[-1])
    return N, first


def phase_diffusion(stats: EnsembleStats, t_min: float = 0.0) -> dict:
    """Slope of Var(Gamma(t)) in t, by OLS on the variance curve and by pooled increments.

    The pooled estimator averages squared centred phase increments over all
    realizations and record intervals; for a process with independent
    increments it estimates the same slope with far less variance.
    """
    p = stats.path
    if p is None:
        raise ValueError("phase diffusion needs per-path records (keep_paths=True)")
    t = p.times
    sel = t >= t_min
    fit = sps.linregress(t[sel], stats.phase_var[sel])
    inc = np.diff(p.gamma[sel], axis=0)
    inc = inc - inc.mean(axis=1, keepdims=True)
    dts = np.diff(t[sel])
    per_path = np.sum(inc**2, axis=0) / np.sum(dts)
    R = per_path.size
    pooled, pooled_se = _mean_se(per_path * R / (R - 1))
    return {"ols_slope": float(fit.slope), "ols_se": float(fit.stderr), "ols_r2": float(fit.rvalue**2),
            "pooled_slope": float(pooled), "pooled_se": float(pooled_se)}
