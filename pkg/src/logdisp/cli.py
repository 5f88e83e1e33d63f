"""``logdisp`` command line: one subcommand per study.

Exit codes: 0 success, 1 numerical failure or fatal non-convergence,
2 configuration error.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path
from typing import Optional


from . import grid as fc
from . import rare_event as re_
from .config import ConfigError, RunConfig, load_config
from .mam import MamProblem, mam_optimize, write_result
from .outputs import write_json, write_manifest, write_table
from .parallel import worker_count
from .sde import NumericalError, SdeParams, describe, params_hash, sample_path, simulate, write_observables_csv
from .skeleton import Control, read_control, skeleton_solve, write_control
from .snapshot import write_field

SUBCOMMANDS = ("simulate", "skeleton", "mam", "exit-mc", "prop53", "delta-study", "scaling-check",
               "disp-study", "ldp-probe", "validate")


def _run_params(cfg: RunConfig, sub: str) -> dict:
    return {"subcommand": sub, "config": cfg.raw, "base_dir": str(cfg.base_dir)}


def _snapshots(cfg: RunConfig, out: Path, snaps: dict) -> list:
    names = []
    for n in sorted(snaps):
        name = f"snapshot_{n:06d}.lsdf"
        write_field(out / name, cfg.grid, snaps[n])
        names.append(name)
    return names


def _simulate(cfg: RunConfig, out: Path, workers) -> tuple[int, str, list]:
    params = SdeParams(cfg.eps, cfg.model, cfg.dt, cfg.T, cfg.splitting)
    path = sample_path(cfg.seed, cfg.T, cfg.dt)
    traj = simulate(cfg.grid, cfg.initial_field(), params, path, cfg.snapshot_steps())
    write_observables_csv(out / "observables.csv", traj, params_hash(describe(params, cfg.grid)))
    files = ["observables.csv"] + _snapshots(cfg, out, traj.snapshots)
    return 0, f"simulate: {params.steps} steps, final l2 {traj['l2'][-1]:.12g}", files


def _skeleton(cfg: RunConfig, out: Path, workers):
    st = cfg.study
    if st.get("control_file"):
        p = Path(st["control_file"])
        control = read_control(p if p.is_absolute() else cfg.base_dir / p)
        if abs(control.T - cfg.T) > 1e-12 * cfg.T:
            raise ConfigError(f"control horizon {control.T} does not match [noise] horizon {cfg.T}")
    else:
        control = Control.sine(cfg.T, st["intervals"], st["amplitude"], st["frequency"])
    steps = cfg.steps
    snaps = cfg.snapshot_steps()
    if steps % control.intervals:
        raise ConfigError(f"{steps} solver steps are not a multiple of {control.intervals} control intervals")
    sub = steps // control.intervals
    traj = skeleton_solve(cfg.grid, cfg.initial_field(), control, cfg.model, sub, cfg.splitting,
                          snapshot_steps=snaps)
    h = params_hash({"T": cfg.T, "steps": steps, "h": control.h.tolist(), "model": cfg.raw.get("model")})
    write_observables_csv(out / "observables.csv", traj, h)
    write_control(out / "control.csv", control)
    from .skeleton import action

    files = ["observables.csv", "control.csv", "control.json"] + _snapshots(cfg, out, traj.snapshots)
    return 0, f"skeleton: action {action(control):.12g}, final l2 {traj['l2'][-1]:.12g}", files


def _mam_options(st: dict) -> dict:
    keys = ("mu0", "mu_factor", "stages", "step0", "shrink", "armijo", "fd_step", "grad_tol",
            "max_iter", "ftol", "feas_tol")
    return {k: st[k] for k in keys if k in st}


def _mam(cfg: RunConfig, out: Path, workers):
    st = cfg.study
    horizons = st.get("horizons") or [cfg.T]
    best, results = None, []
    for i, T in enumerate(horizons):
        prob = MamProblem(cfg.grid, cfg.initial_field(), cfg.model, float(T), st["intervals"], st["target"],
                          st["norm"], steps=st.get("steps"), splitting=cfg.splitting, **_mam_options(st))
        res = mam_optimize(prob)
        name = "mam_result.json" if len(horizons) == 1 else f"mam_result_T{i}.json"
        write_result(out / name, res)
        results.append(name)
        if res.converged and (best is None or res.action < best.action):
            best = res
    files = results + [Path(r).stem + suffix for r in results for suffix in ("_control.csv", "_control.json")]
    if best is None:
        return 1, "mam: no feasible control found (not converged)", files
    return 0, f"mam: action {best.action:.10g} at T={best.T}", files


def _exit_mc(cfg: RunConfig, out: Path, workers):
    st = cfg.study
    ec = re_.ExitConfig(st["radius"], st["norm"], tuple(st["eps"]), st["ensemble"], cfg.T, cfg.dt,
                        cfg.model, cfg.seed, cfg.splitting)
    study = re_.exit_mc(cfg.grid, cfg.initial_field(), ec, workers=workers)
    write_table(out / "exit_mc.csv", re_.ESTIMATE_HEADER, [r.as_list() for r in study.rows])
    rows = []
    for eps in ec.eps_list:
        rows.extend([eps, r.index, r.step, r.value] for r in study.records[eps])
    write_table(out / "exit_records.csv", ["eps", "index", "exit_step", "value"], rows)
    cnt = ", ".join(f"{r.eps:g}:{r.count}" for r in study.rows)
    return 0, f"exit-mc: exits per eps {cnt} of {ec.ensemble}", ["exit_mc.csv", "exit_records.csv"]


def _prop53(cfg: RunConfig, out: Path, workers):
    st = cfg.study
    rep = re_.prop53_check(cfg.grid, cfg.initial_field(), st["radius"], cfg.T, st["eps"], st["ensemble"],
                           cfg.model, cfg.dt, cfg.seed, st["margin_constant"], workers, splitting=cfg.splitting)
    write_table(out / "prop53.csv", re_.PROP53_HEADER, rep.table())
    write_json(out / "prop53_summary.json", {"level": rep.level, "moment0": rep.moment0, "radius": rep.radius,
                                              "p_monotone": rep.p_monotone, "nested": rep.nested,
                                              "boundary_shell": rep.boundary})
    ok = all(rep.bound_holds)
    return 0, (f"prop53: level {rep.level:.6g}, bound {'holds' if ok else 'VIOLATED'}, "
               f"monotone {rep.p_monotone}"), ["prop53.csv", "prop53_summary.json"]


def _delta(cfg: RunConfig, out: Path, workers):
    st = cfg.study
    m = cfg.model
    ds = re_.delta_convergence_study(cfg.grid, cfg.initial_field(), cfg.eps, st["deltas"], st["ensemble"],
                                     m.lam, m.alpha1, cfg.T, cfg.dt, m.potential, cfg.seed, cfg.splitting,
                                     workers)
    write_table(out / "delta_study.csv", re_.DELTA_HEADER, ds.table())
    write_table(out / "delta_paths.csv", ["path", "slope", "monotone"],
                [[i, s, bool(mo)] for i, (s, mo) in enumerate(zip(ds.slopes, ds.monotone))])
    return 0, f"delta-study: median slope {ds.median_slope:.4g}", ["delta_study.csv", "delta_paths.csv"]


def _scaling(cfg: RunConfig, out: Path, workers):
    if cfg.eps <= 0:
        raise ConfigError("the scaling check needs epsilon > 0")
    rep = re_.scaling_check(cfg.grid, cfg.profile(), cfg.eps, cfg.model, cfg.T, cfg.dt, cfg.seed, cfg.splitting)
    write_table(out / "scaling.csv", ["quantity", "value"], rep.table())
    return 0, f"scaling-check: chain-rule discrepancy {rep.discrepancy:.3g}", ["scaling.csv"]


def _disp(cfg: RunConfig, out: Path, workers):
    st = cfg.study
    m = cfg.model
    if m.delta != 0 or m.alpha1 != 0 or m.potential is not None:
        raise ConfigError("disp-study needs delta = 0, alpha1 = 0 and potential = \"none\"")
    ds = re_.large_dispersion_study(cfg.grid, cfg.initial_field(), st["eps"], cfg.T, st["p"], st["ensemble"],
                                    m.lam, cfg.dt, cfg.seed, cfg.splitting, workers)
    write_table(out / "disp_study.csv", re_.DISP_HEADER, ds.table())
    write_json(out / "disp_summary.json", {"exponent": ds.exponent, "exponent_ci": list(ds.exponent_ci),
                                            "mass_error": ds.mass_error, "boundary_shell": ds.boundary})
    return 0, f"disp-study: exponent {ds.exponent:.4g}", ["disp_study.csv", "disp_summary.json"]


def _ldp(cfg: RunConfig, out: Path, workers):
    st = cfg.study
    rep = re_.ldp_deviation_probe(cfg.grid, cfg.initial_field(), st["rho"], cfg.T, st["eps"], st["ensemble"],
                                  cfg.model, cfg.dt, st["intervals"], cfg.seed, cfg.splitting,
                                  _mam_options(st), workers)
    write_table(out / "ldp_probe.csv", re_.LDP_HEADER, rep.table())
    return 0, f"ldp-probe: MAM tube action {rep.mam_action}", ["ldp_probe.csv"]


HANDLERS = {
    "simulate": _simulate, "skeleton": _skeleton, "mam": _mam, "exit-mc": _exit_mc, "prop53": _prop53,
    "delta-study": _delta, "scaling-check": _scaling, "disp-study": _disp, "ldp-probe": _ldp,
}


def _validate(cfg: RunConfig) -> str:
    u0 = cfg.initial_field()
    vals = ", ".join(f"{k} {float(fc.norm(cfg.grid, u0, k)):.10g}" for k in ("l2", "grad_l2", "weighted1", "x1"))
    return f"valid: grid d={cfg.grid.d} n={cfg.grid.n} L={cfg.grid.length}, {cfg.steps} steps; u0 {vals}"


def run_command(subcommand: str, config_path, out_dir: Optional[str] = None, workers: Optional[int] = None,
                stream=None) -> int:
    """Run one subcommand; returns the process exit code."""
    stream = stream or sys.stdout
    err = sys.stderr
    if subcommand not in SUBCOMMANDS:
        print(f"error: unknown subcommand {subcommand!r}", file=err)
        return 2
    try:
        cfg = load_config(config_path, None if subcommand == "validate" else subcommand)
        if subcommand == "validate":
            print(_validate(cfg), file=stream)
            return 0
        if workers is None:
            workers = worker_count()
        out = Path(out_dir) if out_dir else cfg.output_dir
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        code, summary, files = HANDLERS[subcommand](cfg, out, workers)
        write_manifest(out, subcommand, _run_params(cfg, subcommand), cfg.seed, time.perf_counter() - t0, files)
    except ConfigError as exc:
        print(f"config error: {exc}", file=err)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=err)
        return 1
    except ValueError as exc:
        # module preconditions evaluated on the assembled run (e.g. R inside u0)
        print(f"config error: {exc}", file=err)
        return 2
    print(summary, file=stream)
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="logdisp", description="Stochastic logarithmic Schrodinger experiments")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("config", help="TOML run configuration")
    p.add_argument("--out", help="output directory (overrides [output] dir)")
    p.add_argument("--workers", type=int, help="worker processes (default: LOGDISP_WORKERS or CPU count)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers is not None and args.workers < 1:
        print("error: --workers must be a positive integer", file=sys.stderr)
        return 2
    try:
        return run_command(args.subcommand, args.config, args.out, args.workers)
    except ValueError as exc:  # bad LOGDISP_WORKERS
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
