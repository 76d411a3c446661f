"""Command-line entry point: ``stochwave <command> [--config PATH] [flags]``.

Commands: wave, stochwave, expand, simulate, ensemble, report.
Exit codes: 0 success, 2 hypothesis check failed, 3 solver failure,
4 nothing to report.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import NothingToReport, StochwaveError
from .io import (config_hash, read_manifest, read_profiles, read_table, write_manifest, write_path_csv,
                 write_profiles, write_table, write_wave)

log = logging.getLogger("stochwave")


def _overrides(args) -> dict:
    over = {}
    if args.seed is not None:
        over.setdefault("ensemble", {})["seed"] = args.seed
    if args.sigma:
        over.setdefault("ensemble", {})["sigmas"] = list(args.sigma)
    return over


def _sigma_tag(s: float) -> str:
    return f"{s:g}".replace(".", "p")


def _det_wave(cfg: RunConfig, with_gap=True):
    from .pipeline import deterministic_wave

    model, grid = cfg.model(), cfg.grid()
    return model, grid, deterministic_wave(model, grid, with_gap=with_gap, tol=cfg["solver"]["tol"])


# ---- commands ----------------------------------------------------------------


def cmd_wave(cfg: RunConfig, out: Path, args):
    from .wave import build_linearization, derivative, spectral_gap

    model, grid, wave = _det_wave(cfg, with_gap=False)
    beta, zero, ev = spectral_gap(model, wave)
    wave.beta = beta
    h = config_hash(cfg.data)
    write_wave(out / "wave.txt", wave, model, h)
    _, Lt = build_linearization(model, wave)
    payload = {"command": "wave", "config": cfg.data, "config_hash": h, "c": wave.c, "beta": beta,
               "kernel_eigenvalue": [zero.real, zero.imag],
               "leading_eigenvalues": [[e.real, e.imag] for e in ev],
               "phase_pairing": grid.inner_product(derivative(model, grid, wave.phi), wave.psi),
               "adjoint_residual": float(np.abs(Lt @ wave.psi.ravel()).max()),
               "newton_iterations": wave.meta.get("newton_iterations")}
    write_manifest(out / "wave.yaml", payload)
    print(f"c = {wave.c:.10f}  beta = {beta:.6f}")


def cmd_stochwave(cfg: RunConfig, out: Path, args):
    from .stochastic_wave import solve_instantaneous_wave

    model, grid, wave = _det_wave(cfg, with_gap=False)
    kernel = cfg.kernel(grid)
    h = config_hash(cfg.data)
    rows = []
    for s in cfg["ensemble"]["sigmas"]:
        res = solve_instantaneous_wave(model, kernel, wave, float(s), tol=cfg["solver"]["tol"],
                                       max_step=cfg["solver"]["max_sigma_step"])
        extra = {"sigma": float(s), "mu": model.mu, "c_02": res.c_02,
                 "newton_iterations": res.wave.meta.get("newton_iterations")}
        write_wave(out / f"stochwave_s{_sigma_tag(s)}.txt", res.wave, model, h, extra)
        rows.append({"sigma": float(s), "c_sigma": res.wave.c, "c_02": res.c_02})
        print(f"sigma = {s:g}  c_sigma = {res.wave.c:.8f}")
    write_manifest(out / "stochwave.yaml", {"command": "stochwave", "config": cfg.data,
                                            "config_hash": h, "results": rows})


def cmd_expand(cfg: RunConfig, out: Path, args):
    from .expansion import ExpansionContext, expected_gamma2_rate, gamma3_rate, orbital_drift_shape
    from .noise import NoiseSampler, realization_seed
    from .phase import PhaseFunctionals
    from .stochastic_wave import expand_second_order, solve_instantaneous_wave

    model, grid, wave = _det_wave(cfg)
    kernel = cfg.kernel(grid)
    ex = cfg["expansion"]
    h = config_hash(cfg.data)
    c02, phi02, _ = expand_second_order(model, kernel, wave)
    ctx = ExpansionContext(model, kernel, wave, k_max=ex["k_max"], dt_sg=ex["dt_sg"], T_int=ex["T_int"])
    cod, tail = expected_gamma2_rate(ctx)
    vod = orbital_drift_shape(ctx)
    table = {k: [] for k in ("sigma", "c_sigma", "c_quadratic", "c_predicted", "c_cubic", "c_cubic_se")}
    for s in cfg["ensemble"]["sigmas"]:
        s = float(s)
        res = solve_instantaneous_wave(model, kernel, wave, s, tol=cfg["solver"]["tol"],
                                       max_step=cfg["solver"]["max_sigma_step"], with_expansion=False)
        cub, cub_se = float("nan"), float("nan")
        if ex["cubic_R"] and s > 0:
            sctx = ExpansionContext(model, kernel, wave, wave=res.wave, k_max=ctx.k_max)
            phase = PhaseFunctionals(model, kernel, wave.psi, wave.phi, s, res.wave.c)
            seeds = [realization_seed(cfg["ensemble"]["seed"], i) for i in range(int(ex["cubic_R"]))]
            est = gamma3_rate(sctx, phase, s, NoiseSampler(kernel, seeds, model.m), float(ex["cubic_T"]),
                              dt=cfg["simulation"]["dt"])
            cub, cub_se = est.value, est.stderr
        table["sigma"].append(s)
        table["c_sigma"].append(res.wave.c)
        table["c_quadratic"].append(wave.c + s**2 * c02)
        table["c_predicted"].append(wave.c + s**2 * (c02 + cod))
        table["c_cubic"].append(cub)
        table["c_cubic_se"].append(cub_se)
    header = {"config_hash": h, "model_hash": model.model_hash(), "c_0": wave.c, "c_02": c02, "c_od": cod}
    write_table(out / "expansion.csv", table, header)
    write_profiles(out / "expansion_profiles.txt", grid.x,
                   {**{f"phi0_{i}": wave.phi[i] for i in range(model.n)},
                    **{f"phi02_{i}": phi02[i] for i in range(model.n)},
                    **{f"vod_{i}": vod[i] for i in range(model.n)}}, header)
    write_manifest(out / "expansion.yaml", {"command": "expand", "config": cfg.data, "config_hash": h,
                                            "model_hash": model.model_hash(), "c_0": wave.c, "c_02": c02,
                                            "c_od": cod, "c_od_tail_bound": tail, "k_max": ctx.k_max,
                                            "T_int": ctx.T_int, "sigma_table": table})
    print(f"c_0 = {wave.c:.6f}  c_02 = {c02:.6f}  c_od = {cod:.6f} (tail <= {tail:.1e})")


def _sim_config(cfg: RunConfig, profile_key="simulation"):
    from .simulator import SimConfig

    sim = cfg["simulation"]
    times = cfg[profile_key].get("profile_times") or sim.get("profile_times") or []
    return SimConfig(dt=float(sim["dt"]), T=float(sim["T"]), frame=sim["frame"],
                     mu=int(cfg["model"].get("mu", 0)), seed=int(cfg["ensemble"]["seed"]),
                     k_up=float(sim["k_up"]), record_every=int(sim["record_every"]),
                     profile_times=tuple(float(t) for t in times))


def cmd_simulate(cfg: RunConfig, out: Path, args):
    from .noise import NoiseSampler, realization_seed
    from .simulator import SimSetup, simulate

    model, grid, wave = _det_wave(cfg, with_gap=False)
    kernel = cfg.kernel(grid)
    sc = _sim_config(cfg)
    h = config_hash(cfg.data)
    s = float(cfg["ensemble"]["sigmas"][0])
    setup = SimSetup(model, kernel, wave, s, sc)
    R = int(cfg["simulation"]["R"])
    seeds = [realization_seed(sc.seed, i) for i in range(R)]
    path = simulate(setup, NoiseSampler(kernel, seeds, model.m))
    for r in range(R):
        write_path_csv(out / f"path_{r:03d}.csv", path.times, path.gamma[:, r], path.v_l2sq[:, r],
                       path.a[:, r], path.b_hs_sq[:, r], h,
                       {"sigma": s, "seed": list(seeds[r]), "c_sigma": setup.c, "frame": sc.frame})
    for t, V in path.profiles.items():
        cols = {f"V{r:03d}_{i}": V[r, i] for r in range(R) for i in range(model.n)}
        write_profiles(out / f"profiles_t{_sigma_tag(t)}.txt", grid.x, cols, {"config_hash": h, "t": t})
    write_manifest(out / "simulate.yaml", {"command": "simulate", "config": cfg.data, "config_hash": h,
                                           "sigma": s, "seeds": [list(x) for x in seeds],
                                           "tracking_failed_at": path.tracking_failed_at,
                                           "blowup_at": path.blowup_at})
    print(f"Gamma(T) = {path.gamma[-1]}")


def cmd_ensemble(cfg: RunConfig, out: Path, args):
    from .ensemble import EnsembleSpec, observed_limiting_speed, phase_diffusion, run_ensemble

    model, grid, wave = _det_wave(cfg)
    kernel = cfg.kernel(grid)
    e = cfg["ensemble"]
    sc = _sim_config(cfg, "ensemble")
    spec = EnsembleSpec(R=int(e["R"]), sigmas=tuple(e["sigmas"]), base_seed=int(e["seed"]), cfg=sc,
                        with_expansion=bool(e["with_expansion"]), chunk=int(e["chunk"]),
                        threads=args.threads, keep_paths=True)
    h = config_hash(cfg.data)
    summary = []
    for st in run_ensemble(spec, model, kernel, wave):
        tag = _sigma_tag(st.sigma)
        cols = {"t": st.times, "phase_mean": st.phase_mean, "phase_var": st.phase_var,
                "phase_se": st.phase_se, "v_l2sq_mean": st.v_l2sq_mean, "v_l2sq_se": st.v_l2sq_se,
                "sup_mean": st.sup_mean, "sup_se": st.sup_se}
        if st.vres_l2sq_mean is not None:
            cols.update(v1_l2sq_mean=st.v1_l2sq_mean, vres_l2sq_mean=st.vres_l2sq_mean,
                        vres_l2sq_se=st.vres_l2sq_se)
        write_table(out / f"ensemble_s{tag}.csv", cols, {"config_hash": h, "sigma": st.sigma,
                                                          "c_sigma": st.c_sigma})
        prof = {}
        for t, m in st.profile_mean.items():
            prof.update({f"meanV_t{_sigma_tag(t)}_{i}": m[i] for i in range(model.n)})
        for t, m in st.reduced_profile_mean.items():
            prof.update({f"reducedV_t{_sigma_tag(t)}_{i}": m[i] for i in range(model.n)})
        if prof:
            write_profiles(out / f"profiles_s{tag}.txt", grid.x, prof, {"config_hash": h, "sigma": st.sigma})
        c_obs, c_se = observed_limiting_speed(st)
        diff = phase_diffusion(st)
        summary.append({"sigma": st.sigma, "c_sigma": st.c_sigma, "c_obs": c_obs, "c_obs_se": c_se,
                        "R": st.R, "R_effective": st.R_eff, "failures": st.failures, "valid": st.valid,
                        "phase_diffusion": diff, "file": f"ensemble_s{tag}.csv"})
        print(f"sigma = {st.sigma:g}  c_obs = {c_obs:.6f} +- {c_se:.1e}  failures = {st.failures}")
    write_manifest(out / "ensemble.yaml", {"command": "ensemble", "config": cfg.data, "config_hash": h,
                                           "c_0": wave.c, "base_seed": spec.base_seed,
                                           "results": summary})


def cmd_report(cfg: RunConfig | None, out: Path, args):
    from .ensemble import loglog_fit

    src = Path(args.stats_dir)
    man = src / "ensemble.yaml"
    if not man.is_file():
        raise NothingToReport("no-stats", f"{src} holds no ensemble.yaml")
    ens = read_manifest(man)
    results = [r for r in ens.get("results", []) if (src / r["file"]).is_file()]
    if not results:
        raise NothingToReport("no-stats", f"{src} holds no ensemble tables")
    tables = [(r, read_table(src / r["file"])[1]) for r in results]
    expansion = read_manifest(src / "expansion.yaml") if (src / "expansion.yaml").is_file() else None
    h = ens.get("config_hash", "")
    c0 = ens["c_0"]
    lines = [f"ensemble report for {src} (config {h})"]
    speed = {"sigma": [], "c_obs": [], "c_obs_se": [], "relative_change": []}
    series = {"phase_excess": ("phase_mean", "phase_se"), "v_norm": ("v_l2sq_mean", "v_l2sq_se"),
              "running_sup": ("sup_mean", "sup_se")}
    figs = {k: {"sigma": [], "t": [], "mean": [], "se": []} for k in series}
    for r, cols in tables:
        speed["sigma"].append(r["sigma"])
        speed["c_obs"].append(r["c_obs"])
        speed["c_obs_se"].append(r["c_obs_se"])
        speed["relative_change"].append((r["c_obs"] - c0) / c0 if c0 else float("nan"))
        for fig, (m, se) in series.items():
            figs[fig]["sigma"].extend([r["sigma"]] * len(cols["t"]))
            figs[fig]["t"].extend(cols["t"])
            figs[fig]["mean"].extend(cols[m])
            figs[fig]["se"].extend(cols[se])
        lines.append(f"sigma={r['sigma']:g}: c_obs={r['c_obs']:.6f} +- {r['c_obs_se']:.1e}, "
                     f"R_eff={r['R_effective']}/{r['R']}, valid={r['valid']}")
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "fig_limiting_speed.csv", speed, {"config_hash": h, "c_0": c0})
    for fig, cols in figs.items():
        write_table(out / f"fig_{fig}.csv", cols, {"config_hash": h})
    for r, _ in tables:
        prof = src / r["file"].replace("ensemble_", "profiles_").replace(".csv", ".txt")
        if prof.is_file():
            ph, pc = read_profiles(prof)
            write_profiles(out / f"fig_mean_profiles_s{_sigma_tag(r['sigma'])}.txt", pc.pop("x"), pc,
                           {"config_hash": h, "sigma": r["sigma"]})
    sig = np.array(speed["sigma"])
    if len(sig) >= 4 and sig.min() > 0 and sig.max() / sig.min() >= 10:
        final = lambda name: [cols[name][-1] for _, cols in tables]
        scal = {"quantity": [], "slope": [], "ci95": []}
        names = ["v_l2sq_mean", "sup_mean"] + (["vres_l2sq_mean"] if "vres_l2sq_mean" in tables[0][1] else [])
        for name in names:
            fit = loglog_fit(sig, final(name))
            scal["quantity"].append(name)
            scal["slope"].append(fit["slope"])
            scal["ci95"].append(fit["ci"])
            lines.append(f"log-log slope of {name} at T: {fit['slope']:.3f} +- {fit['ci']:.3f}")
        write_table(out / "fig_scaling.csv", scal, {"config_hash": h})
    if expansion is not None:
        lines.append(f"predicted: c_0={expansion['c_0']:.6f}, c_02={expansion['c_02']:.6f}, "
                     f"c_od={expansion['c_od']:.6f}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


COMMANDS = {"wave": cmd_wave, "stochwave": cmd_stochwave, "expand": cmd_expand,
            "simulate": cmd_simulate, "ensemble": cmd_ensemble, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochwave", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("stats_dir", nargs="?", help="input directory for 'report'")
    p.add_argument("--config", type=Path, help="YAML run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--sigma", type=float, action="append", help="noise strength (repeatable)")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--threads", type=int, help="worker threads (default: $STOCHWAVE_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            if args.stats_dir is None:
                raise NothingToReport("no-stats", "report needs a stats directory")
            cmd_report(None, args.out, args)
            return 0
        cfg = RunConfig.load(args.config, _overrides(args))
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, args.out, args)
    except StochwaveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
