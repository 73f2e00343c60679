"""Command line entry point: ``python -m wienergmc <subcommand> [options]``.

Every subcommand writes, under ``<out-dir>/<subcommand>/``:

* ``summary.json``  configuration echo, seed lineage and summary statistics
* ``rows.csv``      the row-level table (fixed columns, floats with 17 digits)
* ``config.ini``    the effective configuration (reparses to the same config)
* ``timing.json``   wall-clock seconds and worker count (kept apart so the other
                    files are byte-identical across reruns and thread counts)

Exit codes: 0 success, 2 configuration error, 3 resource refusal,
4 resolution exhausted.
"""

import argparse
import csv
import json
import math
import os
import sys
import time

import numpy as np

from .config import ExperimentConfig
from .errors import BoxExitError, ConfigError, ResolutionExhausted, ResourceBudgetError
from .rng import STREAMS, SeedLedger

EXIT_OK, EXIT_CONFIG, EXIT_RESOURCE, EXIT_EXHAUSTED = 0, 2, 3, 4


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    return x


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    if v is None:
        return ""
    return str(v)


def write_record(out_dir, name, cfg, summary, columns, rows, lineage, elapsed):
    path = os.path.join(out_dir, name)
    os.makedirs(path, exist_ok=True)
    echo = cfg.as_dict()
    # the worker count never changes results, so it lives with the timing
    threads = echo["run"].pop("threads")
    echo.pop("output")
    record = {
        "experiment": name,
        "config": echo,
        "seed_lineage": lineage,
        "summary": summary,
        "columns": list(columns),
        "n_rows": len(rows),
    }
    with open(os.path.join(path, "summary.json"), "w") as fh:
        json.dump(_jsonable(record), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(path, "rows.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])
    with open(os.path.join(path, "config.ini"), "w") as fh:
        fh.write(cfg.to_ini())
    with open(os.path.join(path, "timing.json"), "w") as fh:
        json.dump({"wall_clock_seconds": elapsed, "threads": threads, "out_dir": out_dir}, fh)
        fh.write("\n")
    return path


def _strip(d, drop=()):
    return {k: v for k, v in d.items() if k not in drop and not isinstance(v, np.ndarray)}


# subcommands: each returns (summary, columns, rows, streams used)


def cmd_calibrate_noise(cfg):
    from .noise import covariance_check, sample_noise
    from .paths import sample_paths
    from .rng import stream_seed

    T = cfg.run.T
    spec = cfg.spec(T)
    budget = int(cfg.run.budget_mb * 2**20)
    noise = sample_noise(spec, stream_seed(cfg.run.seed, "noise", 0), materialize=True, budget_bytes=budget)
    cells = noise.increments(budget).ravel()
    n = cells.size
    var_expected = spec.cell_var
    mean = float(cells.mean())
    var = float(cells.var(ddof=1))
    rows = [
        {"statistic": "cell_mean", "value": mean, "expected": 0.0, "se": math.sqrt(var_expected / n),
         "z": mean / math.sqrt(var_expected / n)},
        {"statistic": "cell_variance", "value": var, "expected": var_expected,
         "se": var_expected * math.sqrt(2.0 / (n - 1)), "z": (var - var_expected) / (var_expected * math.sqrt(2.0 / (n - 1)))},
    ]
    pair = sample_paths(spec, stream_seed(cfg.run.seed, "pairs", 0), 2)
    R = cfg.run.replicas
    cov = covariance_check(spec, cfg.phi, pair[0], pair[1], [stream_seed(cfg.run.seed, "noise", 1 + r) for r in range(R)])
    rows.append({"statistic": "hamiltonian_covariance", "value": cov["cov"], "expected": cov["expected"],
                 "se": cov["se"], "z": cov["z"]})
    summary = {"cells": n, "replicas": R, "checks": rows, "ok": bool(all(abs(r["z"]) <= 5 for r in rows))}
    return summary, ["statistic", "value", "expected", "se", "z"], rows, ("noise", "pairs")


def cmd_martingale(cfg):
    from .polymer import adaptedness_check, martingale_check

    rep = martingale_check(cfg)
    T_grid = cfg.grid.T_grid
    adapt = adaptedness_check(cfg, T_grid[0], T_grid[-1]) if len(T_grid) > 1 else {}
    summary = {"rows": rep["rows"], "ok": rep["ok"], "adaptedness": adapt}
    return summary, ["gamma", "T", "mean", "se", "z", "flag"], rep["rows"], ("noise", "paths", "noise_alt")


def cmd_l2_check(cfg):
    from .polymer import l2_identity_check

    rep = _strip(l2_identity_check(cfg))
    return rep, ["gamma", "T", "R", "M", "pairs", "lhs", "lhs_se", "rhs", "rhs_se", "z", "ok"], [rep], ("noise", "paths", "pairs")


def cmd_khasminskii(cfg):
    from .polymer import khasminskii_certificate

    k = cfg.khasminskii
    rep = khasminskii_certificate(cfg.phi, cfg.run.gamma, k.T_cutoff, k.n_paths, cfg.run.seed, k.n_starts, k.dt)
    rep["gamma"] = cfg.run.gamma
    cols = ["gamma", "I_hat", "I_hat_se", "I_hat_2T", "tail", "stability", "gamma_sq_bound", "certified"]
    return rep, cols, [rep], ("khasminskii",)


def cmd_free_energy(cfg):
    from .polymer import free_energy

    rep = free_energy(cfg)
    rep["sign_convention"] = "reported as measured: mean over replicas of (1/T) log mu_T(Omega)"
    return rep, ["gamma", "T", "estimate", "se", "ci_low", "ci_high"], rep["rows"], ("noise", "paths")


def cmd_thick_points(cfg):
    from .girsanov import thick_point_stat

    rep = thick_point_stat(cfg, reweighted=True)
    rows = [_strip(r, ("hist_counts", "hist_edges")) for r in rep["rows"]]
    sds = [r["sd"] for r in rep["rows"]]
    summary = {"gamma": rep["gamma"], "R": rep["R"], "rows": rep["rows"],
               "sd_ratio_last_first": sds[-1] / sds[0] if sds[0] > 0 else None}
    cols = ["T", "mean", "se", "sd", "z", "mean_var", "mean_H", "mean_H_se", "reweighted_H", "reweighted_H_se"]
    return summary, cols, rows, ("noise", "paths")


def cmd_uniqueness(cfg):
    from .girsanov import uniqueness_identity_check

    rep = _strip(uniqueness_identity_check(cfg))
    return rep, ["function", "lhs", "lhs_se", "rhs", "rhs_se", "z", "ok"], rep["rows"], ("noise", "paths", "pairs")


def cmd_moments(cfg):
    from .moments import moment_estimate, pq_stability_scan, replica_masses

    masses = replica_masses(cfg, cfg.grid.T_grid)
    reps = [moment_estimate(cfg, p, masses=masses) for p in cfg.moments.p]
    scan = pq_stability_scan(cfg, masses=masses)
    rows = [dict(r) for rep in reps for r in rep["rows"]]
    summary = {"moments": reps, "scan": scan, "flagged": any(r["flagged"] for r in reps)}
    cols = ["p", "T", "mean", "se", "ci_low", "ci_high", "floor_hits", "max_rel_se"]
    return summary, cols, rows, ("noise", "paths", "bootstrap")


def cmd_running_max(cfg):
    from .moments import estimate_eps, mass_trajectories, running_max

    traj = mass_trajectories(cfg, max(cfg.grid.T_grid))
    eps_hat = estimate_eps(cfg, max(cfg.grid.T_grid), trajectories=traj)
    rep = running_max(cfg, trajectories=traj, eps_hat=eps_hat)
    rep["eps_hat"] = eps_hat
    cols = ["T", "mean", "se", "ci_low", "ci_high", "doob_bound", "below_doob", "tail_bound", "below_tail_bound"]
    return rep, cols, rep["rows"], ("noise", "paths")


def cmd_tail_probe(cfg):
    from .moments import tail_probe

    rep = tail_probe(cfg, cfg.moments.u, cfg.moments.eps, cfg.run.T)
    cols = ["u", "eps", "T", "gamma", "p_max", "p_end", "diff", "joint_se", "holds"]
    return rep, cols, [rep], ("noise", "paths")


def cmd_smallball(cfg):
    from .smallball import bounds_C1_C2, exponent_fit, gmc_smallball, sandwich_check

    sb, b = cfg.smallball, cfg.bounds
    g = cfg.weight_function()
    rows, fits = [], {}
    for c in sb.c:
        series = []
        for i, eps in enumerate(sb.eps):
            res = gmc_smallball(cfg, cfg.run.gamma, sb.r, eps, g, c=c, seed_index=i)
            rows.append(res)
            series.append((eps, res["log_estimate"]))
        slope, icpt, r2 = exponent_fit(series, log_values=True)
        fits[str(c)] = {"slope": slope, "intercept": icpt, "r2": r2}
    bounds = bounds_C1_C2(cfg.run.gamma, sb.r, g, cfg.lattice.d, b.p, b.q, cfg.phi.selfconv0, form=b.form,
                          optimize=b.optimize)
    first = fits[str(sb.c[0])]["slope"]
    summary = {
        "fits": fits, "bounds": bounds.as_dict(), "sandwich": sandwich_check(first, bounds),
        "horizon_stability": {k: abs(v["slope"] - first) / first for k, v in fits.items()},
        "regime": "pre-asymptotic",
    }
    cols = ["eps", "c", "T", "log_p0", "log_p0_se", "factor", "factor_se", "log_estimate", "log_se",
            "quenched_log_estimate", "scaled_log", "survivors"]
    return summary, cols, rows, ("smallball", "resample", "noise", "paths")


def cmd_wiener_smallball(cfg):
    from .paths import smallball_constant, wiener_smallball_mc
    from .rng import stream_seed
    from .smallball import exponent_fit, lattice_horizon

    sb = cfg.smallball
    g = cfg.weight_function()
    rows = []
    series = []
    for i, eps in enumerate(sb.eps):
        horizon = sb.sup_horizon if g.beta == 0 else lattice_horizon(1.0, eps, cfg.lattice.dt)
        res = wiener_smallball_mc(g, sb.r, eps, sb.particles, stream_seed(cfg.run.seed, "smallball", i),
                                  d=cfg.lattice.d, h=sb.h, horizon=horizon, batches=sb.batches, adapt=g.beta > 0,
                                  block=None if g.beta == 0 else cfg.lattice.dt)
        if res.exhausted:
            raise ResolutionExhausted(f"no survivors at eps={eps}")
        rows.append({"eps": eps, "horizon": horizon, "log_p": res.log_p, "log_se": res.log_se,
                     "scaled_log": eps**2 * res.log_p, "survivors": res.n_hits})
        series.append((eps, res.log_p))
    slope, icpt, r2 = exponent_fit(series, log_values=True)
    horizon = sb.sup_horizon if g.beta == 0 else math.inf
    target = smallball_constant(g, cfg.lattice.d, horizon) / sb.r**2
    summary = {"slope": slope, "intercept": icpt, "r2": r2, "constant": target,
               "relative_error": abs(slope - target) / target, "regime": "pre-asymptotic"}
    return summary, ["eps", "horizon", "log_p", "log_se", "scaled_log", "survivors"], rows, ("smallball",)


def cmd_bounds(cfg):
    from .smallball import bounds_C1_C2

    b = cfg.bounds
    res = bounds_C1_C2(cfg.run.gamma, cfg.smallball.r, cfg.weight_function(), cfg.lattice.d, b.p, b.q,
                       cfg.phi.selfconv0, form=b.form, optimize=b.optimize).as_dict()
    cols = ["gamma", "r", "d", "p", "q", "form", "C1", "C2", "bessel", "inv_sq_integral", "selfconv0"]
    return res, cols, [res], ()


def cmd_gamma_delta(cfg):
    from .smallball import gamma_delta

    rows = [gamma_delta(dl, cfg.smallball.r, cfg.weight_function(), cfg.lattice.d, cfg.phi.selfconv0)
            for dl in cfg.bounds.delta]
    summary = {"rows": rows, "all_verified": all(r["verified"] for r in rows)}
    return summary, ["delta", "gamma", "p", "q", "C1", "C2", "gap", "verified"], rows, ()


def cmd_anderson(cfg):
    from .paths import anderson_check
    from .rng import stream_seed

    d = cfg.lattice.d
    g = cfg.weight_function()
    e0 = np.zeros(d)
    e0[0] = 1.0
    shifts = [
        lambda t: np.zeros((t.size, d)),
        lambda t: 0.3 * np.outer(t, e0),
        lambda t: 0.3 * np.outer(np.sin(np.pi * t), e0),
        lambda t: 5.0 * np.outer(np.minimum(t, 0.1) / 0.1, e0),
    ]
    names = ["zero", "linear", "sine", "large"]
    rep = anderson_check(g, cfg.smallball.r, shifts, cfg.run.paths * 40, stream_seed(cfg.run.seed, "misc", 0),
                         d=d, h=0.01, horizon=cfg.smallball.sup_horizon)
    rows = [dict(name=n, **r) for n, r in zip(names, rep["shifts"])]
    cols = ["name", "shift_norm", "p_shift", "p_centred", "joint_se", "anderson_holds", "cm_energy", "cm_lower",
            "cm_se", "cm_holds"]
    return rep, cols, rows, ("misc",)


COMMANDS = {
    "calibrate-noise": cmd_calibrate_noise,
    "martingale": cmd_martingale,
    "l2-check": cmd_l2_check,
    "khasminskii": cmd_khasminskii,
    "free-energy": cmd_free_energy,
    "thick-points": cmd_thick_points,
    "uniqueness": cmd_uniqueness,
    "moments": cmd_moments,
    "running-max": cmd_running_max,
    "tail-probe": cmd_tail_probe,
    "smallball": cmd_smallball,
    "wiener-smallball": cmd_wiener_smallball,
    "bounds": cmd_bounds,
    "gamma-delta": cmd_gamma_delta,
    "anderson": cmd_anderson,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="wienergmc", description=__doc__.split("\n")[0])
    ap.add_argument("subcommand", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="sectioned key=value configuration file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--replicas", type=int)
    ap.add_argument("--paths", type=int)
    ap.add_argument("--threads", type=int)
    ap.add_argument("--out-dir")
    ap.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
    return ap


def load_config(args):
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    over = list(args.override)
    for flag, key in (("seed", "run.seed"), ("replicas", "run.replicas"), ("paths", "run.paths"),
                      ("threads", "run.threads"), ("out_dir", "output.out_dir")):
        v = getattr(args, flag)
        if v is not None:
            over.append(f"{key}={v}")
    return cfg.with_overrides(over) if over else cfg


def set_threads(n):
    import numba

    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def run(subcommand, cfg):
    """Run one subcommand and write its record; returns the output directory."""
    set_threads(cfg.run.threads)
    t0 = time.perf_counter()
    summary, cols, rows, streams = COMMANDS[subcommand](cfg)
    elapsed = time.perf_counter() - t0
    lineage = {"master_seed": cfg.run.seed, "streams": {s: STREAMS[s] for s in sorted(streams)},
               "derivation": "SeedSequence([master_seed, stream_id, *index])"}
    return write_record(cfg.output.out_dir, subcommand, cfg, summary, cols, rows, lineage, elapsed)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        path = run(args.subcommand, cfg)
    except (ConfigError, BoxExitError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceBudgetError as exc:
        print(f"resource refusal: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except ResolutionExhausted as exc:
        print(f"resolution exhausted: {exc}", file=sys.stderr)
        return EXIT_EXHAUSTED
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
