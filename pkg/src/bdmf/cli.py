"""Command-line entry point.

Subcommands bind a JSON config (plus flag overrides) to one experiment
and emit CSV/JSON result files stamped with the config hash and seed.
Exit codes: 0 success, 2 config error, 3 runtime/budget error, 4 a
built-in assertion (audit / lyapunov) failed.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, coupling, meanfield, measure
from ._kernels import BudgetExceeded
from .config import (
    ConfigError,
    build_grid,
    build_law,
    build_model,
    config_hash,
    load_config,
    merge,
)
from .meanfield import StabilityError
from .rates import check_assumption_A, check_assumption_B, check_condition_eq14
from .ssa import simulate_replicas

SUBCOMMANDS = ("simulate", "couple", "ode", "fixed-point", "chaos", "empirical",
               "stationary", "lyapunov", "audit", "check-assumptions", "w1")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bdmf",
                                description="Birth-death mean-field particle toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="JSON config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--outdir", default=None)
        sp.add_argument("--dry-run", action="store_true")
        sp.add_argument("--N", type=int, default=None)
        sp.add_argument("--K", type=int, default=None)
        sp.add_argument("--t-max", type=float, default=None)
        sp.add_argument("--n-replicas", type=int, default=None)
        sp.add_argument("--n-states", type=int, default=None)
        sp.add_argument("--burn-in", type=float, default=None)
        sp.add_argument("--delta", type=float, default=None)
        if name == "check-assumptions":
            sp.add_argument("--eq14", action="store_true",
                            help="also fit the alternative one-sided condition")
        if name == "w1":
            sp.add_argument("--a", required=True, help="CSV file (k,mass) for the first law")
            sp.add_argument("--b", required=True, help="CSV file (k,mass) for the second law")
    return p


def _overrides(args) -> dict:
    exp = {}
    for src, dst in (("N", "N"), ("K", "K"), ("t_max", "t_max"),
                     ("n_replicas", "n_replicas"), ("n_states", "n_states"),
                     ("burn_in", "burn_in"), ("delta", "delta")):
        v = getattr(args, src, None)
        if v is not None:
            exp[dst] = v
    out = {}
    if exp:
        out["experiment"] = exp
    if args.seed is not None:
        out["seed"] = args.seed
    if args.threads is not None:
        out["threads"] = args.threads
    if args.outdir is not None:
        out["io"] = {"outdir": args.outdir}
    return out


def _write(outdir: Path, stem: str, cfg: dict, csv_text=None, json_doc=None):
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    formats = cfg["io"].get("formats", ["csv", "json"])
    if csv_text is not None and "csv" in formats:
        p = outdir / f"{stem}.csv"
        p.write_text(csv_text)
        paths.append(str(p))
    if json_doc is not None and "json" in formats:
        doc = dict(json_doc)
        # the hash identifies the experiment: model + experiment + seed.
        # Thread count and io destination are execution details and results
        # are identical across them.
        doc["config_hash"] = config_hash(
            {k: cfg[k] for k in ("model", "experiment", "seed")})
        doc["seed"] = cfg["seed"]
        p = outdir / f"{stem}.json"
        p.write_text(json.dumps(doc, sort_keys=True))
        paths.append(str(p))
    return paths


def _result_json(res) -> dict:
    return json.loads(res.to_json())


def _fit_line(res) -> str:
    if res.fit is None:
        return "log-log fit unavailable (zero values)"
    return f"log-log slope={res.fit.slope:.4f} (r2={res.fit.r2:.4f})"


def _run(args) -> int:
    cfg = merge(load_config(args.config), _overrides(args))
    model_needed = args.command != "w1"
    model = build_model(cfg["model"]) if model_needed else None
    exp = cfg["experiment"]
    outdir = Path(cfg["io"]["outdir"])
    seed = int(cfg["seed"])
    threads = cfg.get("threads")
    if args.dry_run:
        if args.command not in ("w1", "check-assumptions", "lyapunov", "audit", "fixed-point"):
            build_law(exp["init"])
            build_grid(exp["grid"], exp.get("t_max"))
        print(f"config ok (hash {config_hash(cfg)})")
        return 0

    if args.command == "w1":
        a = measure.DistN.from_csv(Path(args.a).read_text())
        b = measure.DistN.from_csv(Path(args.b).read_text())
        print(repr(measure.w1_dist(a, b)))
        return 0

    if args.command == "check-assumptions":
        lam = check_assumption_A(model, int(exp["n_max"]))
        m_grid = np.arange(0.0, exp["k_max"] + 0.5, 0.5)
        doc = {"lambda": lam}
        line = f"lambda={lam:.6g}"
        from .rates import QuadraticPairwise
        if isinstance(model.interaction, QuadraticPairwise):
            doc.update({"alpha": None, "kappa": lam,
                        "note": "quadratic interaction: contraction rate is lambda"})
            line += f" kappa={lam:.6g} (quadratic)"
        else:
            rep = check_assumption_B(model, int(exp["k_max"]), m_grid)
            doc.update({"alpha": rep.alpha_min, "kappa": rep.kappa,
                        "monotone_ok": rep.monotone_ok, "scan_range": rep.scan_range,
                        "warnings": list(rep.warnings)})
            line += f" alpha={rep.alpha_min:.6g} kappa={rep.kappa:.6g}"
            if getattr(args, "eq14", False):
                eq = check_condition_eq14(model, int(exp["k_max"]), m_grid)
                doc["eq14"] = {"alpha": eq.alpha, "zeta": eq.zeta, "rate": eq.rate,
                               "feasible": eq.feasible}
                line += f" eq14_rate={eq.rate:.6g}"
        paths = _write(outdir, "assumptions", cfg, json_doc=doc)
        print(f"{line} -> {' '.join(paths)}")
        return 0

    if args.command == "simulate":
        grid = build_grid(exp["grid"], exp["t_max"])
        law = build_law(exp["init"])
        summary = simulate_replicas(model, law, int(exp["n_replicas"]), float(exp["t_max"]),
                                    grid, n=int(exp["N"]), seed=seed, threads=threads)
        import csv as _csv
        import io as _io
        buf = _io.StringIO()
        w = _csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "mean_m", "se_m"])
        for t, m, s in zip(summary.record_times, summary.mean_m, summary.se_m):
            w.writerow([repr(float(t)), repr(float(m)), repr(float(s))])
        doc = {"label": "simulate", "final_mean": float(summary.mean_m[-1]),
               "n_replicas": summary.n_replicas, "N": summary.n,
               "marginal1_final": summary.marginal1[-1].tolist()}
        paths = _write(outdir, "simulate", cfg, csv_text=buf.getvalue(), json_doc=doc)
        if exp.get("export") == "trajectories":
            # long form (replica, t, i, x_i); replays the exact replica streams
            from .ssa import replica_trajectory
            rows = ["replica,t,i,x_i"]
            for r in range(int(exp["n_replicas"])):
                traj = replica_trajectory(model, law, r, float(exp["t_max"]), grid,
                                          n=int(exp["N"]), seed=seed)
                rows.append(traj.to_csv(replica=r).split("\n", 1)[1].rstrip("\n"))
            p = outdir / "trajectories.csv"
            p.write_text("\n".join(rows) + "\n")
            paths.append(str(p))
        print(f"final mean M^N={summary.mean_m[-1]:.6g} -> {' '.join(paths)}")
        return 0

    if args.command == "couple":
        grid = build_grid(exp["grid"], exp["t_max"])
        law_a = build_law(exp["init"])
        law_b = build_law(exp["init_b"])
        res = coupling.coupled_distance_curve(model, law_a, law_b, int(exp["N"]),
                                              int(exp["n_replicas"]), grid,
                                              seed=seed, threads=threads)
        import csv as _csv
        import io as _io
        buf = _io.StringIO()
        w = _csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "mean_distance", "half_width", "n_replicas"])
        for t, v, h in zip(res.grid, res.values, res.half_widths):
            w.writerow([repr(float(t)), repr(float(v)), repr(float(h)), int(exp["n_replicas"])])
        paths = _write(outdir, "couple", cfg, csv_text=buf.getvalue(),
                       json_doc=_result_json(res))
        print(f"E d(X_t,Y_t) at t={res.grid[-1]:.6g}: {res.values[-1]:.6g} -> {' '.join(paths)}")
        return 0

    if args.command == "ode":
        grid = build_grid(exp["grid"], exp["t_max"])
        law = build_law(exp["init"])
        flow = meanfield.integrate_flow(model, law, float(exp["t_max"]), dt=exp.get("dt"),
                                        grid=grid)
        paths = _write(outdir, "ode_flow", cfg, csv_text=flow.to_csv_long(),
                       json_doc={"label": "ode", "means": flow.means.tolist(),
                                 "times": flow.times.tolist(), "cap_leak": flow.cap_leak})
        p2 = outdir / "ode_summary.csv"
        p2.write_text(flow.to_csv_summary(delta=exp.get("delta")))
        print(f"||u_t|| at t={flow.times[-1]:.6g}: {flow.means[-1]:.6g} -> "
              f"{' '.join(paths + [str(p2)])}")
        return 0

    if args.command == "fixed-point":
        law = build_law(exp["init"]) if exp.get("init") else None
        u0 = law if law is not None else measure.delta(0, K=20)
        u_inf = meanfield.fixed_point(model, u0)
        doc = {"label": "fixed_point", "mean": measure.first_moment(u_inf),
               "K": u_inf.K}
        paths = _write(outdir, "fixed_point", cfg, csv_text=u_inf.to_csv(), json_doc=doc)
        print(f"u_inf mean={doc['mean']:.6g} -> {' '.join(paths)}")
        return 0

    if args.command == "chaos":
        grid = build_grid(exp["grid"], exp["t_max"])
        law = build_law(exp["init"])
        res = analysis.chaos_experiment(model, law, exp["N_list"], float(exp["t_max"]),
                                        grid, int(exp["n_replicas"]), seed=seed,
                                        threads=threads)
        paths = _write(outdir, "chaos", cfg, csv_text=res.to_csv(),
                       json_doc=_result_json(res))
        print(f"{_fit_line(res)} -> {' '.join(paths)}")
        return 0

    if args.command == "empirical":
        grid = build_grid(exp["grid"], exp["t_max"])
        law = build_law(exp["init"])
        res = analysis.empirical_convergence(model, law, exp["N_list"], grid,
                                             int(exp["n_replicas"]), seed=seed,
                                             t_max=float(exp["t_max"]),
                                             epsilons=exp["epsilons"], threads=threads)
        paths = _write(outdir, "empirical", cfg, csv_text=res.to_csv(),
                       json_doc=_result_json(res))
        print(f"{_fit_line(res)} -> {' '.join(paths)}")
        return 0

    if args.command == "stationary":
        res = analysis.stationary_comparison(model, int(exp["N"]), float(exp["burn_in"]),
                                             int(exp["n_samples"]), seed=seed,
                                             spacing=float(exp["spacing"]),
                                             threads=threads)
        paths = _write(outdir, "stationary", cfg, csv_text=res.to_csv(),
                       json_doc=_result_json(res))
        warn = " (burn-in drift!)" if res.meta["burnin_warning"] else ""
        print(f"mean W1={res.meta['mean_w1']:.6g}{warn} -> {' '.join(paths)}")
        return 0

    if args.command == "lyapunov":
        audit = analysis.lyapunov_audit(model, int(exp["N"]), int(exp["n_states"]),
                                        seed=seed, coord_max=int(exp["coord_max"]))
        doc = {"label": "lyapunov", "kappa": audit.kappa, "violations": audit.violations,
               "worst_margin": audit.worst_margin, "states_checked": audit.states_checked}
        paths = _write(outdir, "lyapunov", cfg, json_doc=doc)
        status = "PASS" if audit.violations == 0 else "FAIL"
        print(f"lyapunov {status}: {audit.violations} violations over "
              f"{audit.states_checked} states -> {' '.join(paths)}")
        return 0 if audit.violations == 0 else 4

    if args.command == "audit":
        # enumeration is exact and only feasible for tiny systems; the audit
        # is a model property, so clamp to the largest enumerable N
        N = min(int(exp["N"]), 2)
        K = int(exp["K"])
        marg = coupling.marginality_report(model, N, K)
        drift = coupling.drift_report(model, N, K)
        doc = {"label": "audit", "marginality": marg, "drift": drift}
        paths = _write(outdir, "audit", cfg, json_doc=doc)
        ok = marg["ok"] and drift["ok"]
        print(f"marginality {'PASS' if marg['ok'] else 'FAIL'} "
              f"(max err {marg['max_abs_error']:.2e}), "
              f"drift {'PASS' if drift['ok'] else 'FAIL'} "
              f"(worst margin {drift['worst_margin']:.2e}) -> {' '.join(paths)}")
        return 0 if ok else 4

    raise ConfigError(f"unhandled subcommand {args.command!r}")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (BudgetExceeded, StabilityError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    except (RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
