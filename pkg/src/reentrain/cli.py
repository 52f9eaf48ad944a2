"""Command-line driver: build families, infer them from data, solve
optimal re-entrainment problems, and evaluate controls on full models.

Exit codes: 0 success, 2 configuration error, 3 numerical
non-convergence, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICS = 3
EXIT_IO = 4


class ConfigError(ValueError):
    pass


def _load_config(path):
    from .io import read_json
    try:
        return read_json(path)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")


def _merged_config(args, defaults):
    cfg = dict(defaults)
    if getattr(args, "config", None):
        cfg.update(_load_config(args.config))
    for key in defaults:
        v = getattr(args, key.replace("-", "_"), None)
        if v is not None:
            cfg[key] = v
    return cfg


def _write_manifest(outdir, experiment, cfg, seeds, outputs, status="ok",
                    error=None):
    from .io import Manifest
    Manifest(experiment=experiment, config=cfg, seeds=list(seeds),
             outputs=list(outputs), status=status, error=error).save(outdir)


def _family_curves_rows(fam):
    from .dynamics import THETA_GRID
    from .family import CURVE_NAMES
    rows = []
    for name in CURVE_NAMES:
        cv = fam.curves[name]
        for j, p in enumerate(cv.p_grid):
            vals = cv(THETA_GRID, float(p))
            for th, v in zip(THETA_GRID, vals):
                rows.append(dict(curve=name, p=float(p), theta=float(th),
                                 value=float(v)))
    return rows


def _save_family(fam, outdir):
    from .io import write_csv
    os.makedirs(outdir, exist_ok=True)
    fam_path = os.path.join(outdir, "family.json")
    with open(fam_path, "w") as fh:
        fh.write(fam.to_json())
    rows = [dict(p=float(p), omega=fam.omega(float(p)), kappa=fam.kappa(float(p)))
            for p in fam.omega.p_grid]
    write_csv(os.path.join(outdir, "scalars.csv"), rows,
              ["p", "omega", "kappa"])
    write_csv(os.path.join(outdir, "curves.csv"), _family_curves_rows(fam),
              ["curve", "p", "theta", "value"])
    return ["family.json", "scalars.csv", "curves.csv"]


def cmd_family(args):
    from .experiments import ADJOINT_P_GRID, adjoint_single_cell_family
    cfg = _merged_config(args, {"p_grid": list(ADJOINT_P_GRID), "out": "family_out"})
    fam = adjoint_single_cell_family(tuple(cfg["p_grid"]))
    outputs = _save_family(fam, cfg["out"])
    _write_manifest(cfg["out"], "family-build", cfg, [], outputs)
    return EXIT_OK


def cmd_infer(args):
    from .experiments import (POPULATION_P_GRID, PROBE_P_GRID,
                              infer_population_family, infer_single_cell_family,
                              population_observable)
    defaults = {"target": "cell", "seed": 0, "trials": 40, "n": 200,
                "pop_seed": 7, "out": "infer_out", "p_grid": None}
    cfg = _merged_config(args, defaults)
    if cfg["target"] == "cell":
        grid = tuple(cfg["p_grid"] or PROBE_P_GRID)
        fam = infer_single_cell_family(p_grid=grid, trials=int(cfg["trials"]),
                                       seed=int(cfg["seed"]))
        seeds = [int(cfg["seed"])]
    elif cfg["target"] == "population":
        grid = tuple(cfg["p_grid"] or POPULATION_P_GRID)
        obs = population_observable(N=int(cfg["n"]), seed=int(cfg["pop_seed"]))
        fam = infer_population_family(obs, p_grid=grid,
                                      trials=int(cfg["trials"]),
                                      seed=int(cfg["seed"]))
        seeds = [int(cfg["seed"]), int(cfg["pop_seed"])]
    else:
        raise ConfigError(f"unknown infer target {cfg['target']!r}")
    outputs = _save_family(fam, cfg["out"])
    _write_manifest(cfg["out"], "infer", cfg, seeds, outputs)
    return EXIT_OK


def _load_family(path):
    from .family import ReductionFamily
    try:
        with open(path) as fh:
            return ReductionFamily.from_json(fh.read())
    except OSError as e:
        raise ConfigError(f"cannot read family {path}: {e}")


def _solution_record(formulation, delta_t, sol):
    return dict(formulation=formulation, delta_t=float(delta_t),
                converged=bool(sol.converged), residual=float(sol.residual),
                iterations=int(sol.iterations), cost=float(sol.cost),
                t=[float(v) for v in sol.t], du=[float(v) for v in sol.du],
                initial_costate=[float(v) for v in sol.initial_costate])


def cmd_control(args):
    from .control import continuation_sweep, make_problem
    from .io import write_csv, write_json
    from .models import light_waveform
    from .reduced import entrained_reduced_orbit
    defaults = {"family": None, "formulation": "adaptive", "delta_ts": [],
                "l0": 0.0, "l_min": None, "l_max": None, "t_f": 24.0,
                "entrained": False, "beta": 0.0, "out": "control_out"}
    cfg = _merged_config(args, defaults)
    if cfg["family"] is None:
        raise ConfigError("control requires --family")
    fam = _load_family(cfg["family"])
    os.makedirs(cfg["out"], exist_ok=True)
    outputs = []
    rows = []
    delta_ts = [float(v) for v in cfg["delta_ts"]]
    if delta_ts:
        form = cfg["formulation"]
        kw = dict(T_f=float(cfg["t_f"]), beta=float(cfg["beta"]))
        if cfg["l_min"] is not None:
            kw["L_min"] = float(cfg["l_min"])
        if cfg["l_max"] is not None:
            kw["L_max"] = float(cfg["l_max"])
        if cfg["entrained"]:
            wave = lambda t: light_waveform(t, float(cfg["l0"]))
            ent = entrained_reduced_orbit(fam, wave, 24.0, formulation=form)
            kw.update(u_nom=wave, entrained=ent)
        make = lambda dt: make_problem(form, fam, dt, **kw)
        sols = continuation_sweep(make, delta_ts)
        for dt in delta_ts:
            sol = sols[dt]
            rec = _solution_record(form, dt, sol)
            name = f"solution_{form}_{dt:+.1f}.json"
            write_json(os.path.join(cfg["out"], name), rec)
            outputs.append(name)
            rows.append(dict(formulation=form, delta_t=dt,
                             converged=sol.converged, residual=sol.residual,
                             iterations=sol.iterations, cost=sol.cost))
        write_csv(os.path.join(cfg["out"], "solves.csv"), rows,
                  ["formulation", "delta_t", "converged", "residual",
                   "iterations", "cost"])
        outputs.append("solves.csv")
    _write_manifest(cfg["out"], "control-sweep", cfg, [], outputs)
    if rows and not all(r["converged"] for r in rows):
        return EXIT_NUMERICS
    return EXIT_OK


def cmd_evaluate(args):
    from .dynamics import compute_entrained_orbit, find_limit_cycle
    from .evaluate import delta_t_act, recovery_time
    from .io import read_json, write_csv
    from .models import circadian_field, light_waveform
    defaults = {"solution": None, "l0": 0.0, "p0": 0.0, "out": "evaluate_out",
                "mode": "free-running"}
    cfg = _merged_config(args, defaults)
    if cfg["solution"] is None:
        raise ConfigError("evaluate requires --solution")
    try:
        rec = read_json(cfg["solution"])
    except OSError as e:
        raise ConfigError(f"cannot read solution {cfg['solution']}: {e}")
    t = np.asarray(rec["t"], dtype=float)
    du = np.asarray(rec["du"], dtype=float)

    def du_fn(tt):
        tt = np.asarray(tt, dtype=float)
        out = np.interp(np.clip(tt, t[0], t[-1]), t, du)
        return np.where((tt < t[0]) | (tt > t[-1]), 0.0, out)

    field = circadian_field()
    os.makedirs(cfg["out"], exist_ok=True)
    if cfg["mode"] == "free-running":
        cycle = find_limit_cycle(field, float(cfg["p0"]),
                                 np.array([0.6, 1.2, 1.4]))
        act = delta_t_act(field, cycle, lambda s: float(du_fn(s)),
                          T_f=float(t[-1]), delta_t=float(rec["delta_t"]),
                          p=float(cfg["p0"]))
        row = dict(delta_t=rec["delta_t"], delta_t_act=act,
                   error=abs(act - rec["delta_t"]))
        cols = ["delta_t", "delta_t_act", "error"]
    else:
        wave = lambda s: light_waveform(s, float(cfg["l0"]))
        ent = compute_entrained_orbit(field, float(cfg["p0"]), wave, 24.0)
        res = recovery_time(field, ent, lambda s: float(du_fn(s)),
                            float(rec["delta_t"]), T_f=float(t[-1]),
                            L0=float(cfg["l0"]), L_min=0.0)
        row = dict(delta_t=rec["delta_t"], recovery_time=res.recovery_time)
        cols = ["delta_t", "recovery_time"]
    write_csv(os.path.join(cfg["out"], "evaluation.csv"), [row], cols)
    _write_manifest(cfg["out"], "evaluate", cfg, [], ["evaluation.csv"])
    return EXIT_OK


def cmd_figure_data(args):
    from .experiments import (adjoint_single_cell_family,
                              entrained_recovery_sweep, free_running_sweep)
    from .io import write_csv
    defaults = {"preset": None, "out": None}
    cfg = _merged_config(args, defaults)
    preset = cfg["preset"] or args.preset_name
    outdir = cfg["out"] or f"{preset}_out"
    os.makedirs(outdir, exist_ok=True)
    fam = adjoint_single_cell_family()
    if preset == "free-running":
        rows = free_running_sweep(fam)
        cols = ["formulation", "delta_t", "delta_t_act", "error", "converged",
                "residual", "cost"]
    elif preset == "entrained-recovery":
        rows = entrained_recovery_sweep(fam)
        cols = ["formulation", "delta_t", "recovery_time", "converged",
                "residual", "cost"]
    else:
        raise ConfigError(f"unknown preset {preset!r}")
    write_csv(os.path.join(outdir, f"{preset}.csv"), rows, cols)
    _write_manifest(outdir, "figure-data", dict(cfg, preset=preset), [],
                    [f"{preset}.csv"])
    return EXIT_OK


def _add_common(sp):
    sp.add_argument("--config", help="JSON config file; flags override it")
    sp.add_argument("--out", help="output directory")


def build_parser():
    ap = argparse.ArgumentParser(prog="reentrain")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("family", help="build an adjoint reduction family")
    _add_common(sp)
    sp.add_argument("--p-grid", type=float, nargs="+", dest="p_grid")
    sp.set_defaults(fn=cmd_family)

    sp = sub.add_parser("infer", help="infer a family from observable data")
    _add_common(sp)
    sp.add_argument("--target", choices=["cell", "population"])
    sp.add_argument("--p-grid", type=float, nargs="+", dest="p_grid")
    sp.add_argument("--trials", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n", type=int, help="population size")
    sp.add_argument("--pop-seed", type=int, dest="pop_seed")
    sp.set_defaults(fn=cmd_infer)

    sp = sub.add_parser("control", help="solve optimal re-entrainment problems")
    _add_common(sp)
    sp.add_argument("--family", help="family.json to control with")
    sp.add_argument("--formulation",
                    choices=["adaptive", "first-order", "phase-only"])
    sp.add_argument("--delta-ts", type=float, nargs="*", dest="delta_ts")
    sp.add_argument("--l0", type=float)
    sp.add_argument("--l-min", type=float, dest="l_min")
    sp.add_argument("--l-max", type=float, dest="l_max")
    sp.add_argument("--t-f", type=float, dest="t_f")
    sp.add_argument("--beta", type=float)
    sp.add_argument("--entrained", action="store_const", const=True)
    sp.set_defaults(fn=cmd_control)

    sp = sub.add_parser("evaluate", help="apply a stored control to the full model")
    _add_common(sp)
    sp.add_argument("--solution", help="solution JSON from the control command")
    sp.add_argument("--mode", choices=["free-running", "entrained"])
    sp.add_argument("--l0", type=float)
    sp.add_argument("--p0", type=float)
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("figure-data", help="regenerate a benchmark sweep dataset")
    _add_common(sp)
    sp.add_argument("preset_name", nargs="?",
                    help="free-running or entrained-recovery")
    sp.add_argument("--preset", choices=["free-running", "entrained-recovery"])
    sp.set_defaults(fn=cmd_figure_data)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except Exception as e:
        print(f"numerical failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERICS


if __name__ == "__main__":
    sys.exit(main())
