"""Command-line entry point: ``snlslab simulate | verify | experiment <kind>``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 property-suite failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import asdict
from typing import Optional


from .config import DEFAULT_OUTPUT, OUTPUT_ENV, ExperimentConfig, load_config
from .dynamics import evolve
from .ensemble import (convergence_in_eps, convergence_in_m, persistence_experiment,
                       stability_experiment, uniform_bound_sweep)
from .errors import ConfigurationError, ContractViolation, NumericalFailure
from .noise import BrownianPath
from .reporting import (RunWriter, aligned_table, csv_table, mass_report, plot_rows_csv,
                        write_trajectory)
from .verification import FAIL, run_property_suite

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_PROPERTY = 0, 2, 3, 4
KINDS = ("uniform-bound", "eps-convergence", "m-convergence", "stability", "persistence")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snlslab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML configuration file (defaults if omitted)")
        p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV} or ./snlslab-out)")
        p.add_argument("--paths", type=int, help="override ensemble.n_paths")
        p.add_argument("--seed", type=int, help="override ensemble.master_seed")
        p.add_argument("--threads", type=int, help="override ensemble.threads (worker processes)")

    common(sub.add_parser("simulate", help="integrate trajectories and write their records"))
    common(sub.add_parser("verify", help="run the property suite"))
    exp = sub.add_parser("experiment", help="run one ensemble experiment")
    exp.add_argument("kind", choices=KINDS)
    common(exp)
    return parser


def _resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    for name in ("paths", "threads"):
        v = getattr(args, name)
        if v is not None and v < 1:
            raise ConfigurationError(f"--{name} must be >= 1")
    if args.seed is not None and args.seed < 0:
        raise ConfigurationError("--seed must be nonnegative")
    return cfg.with_overrides(args.paths, args.seed, args.threads, args.out)


def _say(msg: str):
    print(msg, flush=True)


# --------------------------------------------------------------------------- simulate

def cmd_simulate(cfg: ExperimentConfig, writer: RunWriter, n_paths: int = 1) -> int:
    grid, solver = cfg.grid_obj(), cfg.solver_config()
    model = cfg.noise_model()
    spec = cfg.initial_spec()
    seed = cfg.ensemble.master_seed
    writer.text("config.yaml", cfg.to_yaml())
    reports = []
    for p in range(n_paths):
        u0 = spec.realize(grid, p, seed)
        path = BrownianPath(seed, p, model.n_modes, solver.dt, solver.n_steps)
        try:
            traj = evolve(u0, solver, model, path, grid=grid,
                          snapshot_stride=cfg.output.snapshot_stride)
        except NumericalFailure as exc:
            exc.path_index = p
            raise
        write_trajectory(writer, traj, cfg, (seed, p), tag=f"p{p}" if n_paths > 1 else "")
        rep = {"path_index": p, **mass_report(traj)}
        reports.append(rep)
        _say(f"path {p}: max relative mass drift {rep['max_relative_drift']:.3e}, "
             f"final theta {traj.theta[-1]:.6g}")
    writer.json("mass.json", {"paths": reports})
    return EXIT_OK


# --------------------------------------------------------------------------- verify

def cmd_verify(cfg: ExperimentConfig, writer: RunWriter) -> int:
    writer.text("config.yaml", cfg.to_yaml())
    results = run_property_suite(cfg, log=_say)
    lines = [r.line() for r in results]
    n_fail = sum(r.status == FAIL for r in results)
    summary = f"{len(results)} properties: {sum(r.status == 'pass' for r in results)} passed, " \
              f"{n_fail} failed, {sum(r.status == 'skip' for r in results)} skipped"
    _say(summary)
    writer.text("verify.txt", "\n".join(lines + [summary]) + "\n")
    writer.json("verify.json", {"properties": [asdict(r) for r in results], "summary": summary})
    return EXIT_PROPERTY if n_fail else EXIT_OK


# --------------------------------------------------------------------------- experiments

def _m_str(m):
    return "inf" if math.isinf(m) else f"{m:g}"


def _write_tables(writer, title, columns, rows, comments, plot_rows, plot_comments, records, warnings):
    text = f"{title}\n" + aligned_table(columns, rows)
    if warnings:
        text += "".join(f"warning: {w}\n" for w in warnings)
    writer.text("summary.txt", text)
    writer.text("summary.csv", csv_table(comments, columns, rows))
    writer.text("plot.csv", plot_rows_csv(plot_rows, plot_comments))
    writer.jsonl("records.jsonl", records)
    _say(text.rstrip())


def _exp_uniform(cfg, writer, common):
    s, e = cfg.solver, cfg.ensemble
    tab = uniform_bound_sweep(cfg.initial_spec(), common["model"], cfg.solver_config(),
                              s.eps_ladder, s.m_ladder, e.n_paths, e.rho_list, e.master_seed,
                              common["grid"], e.chunk_size, e.threads)
    cols = ["epsilon", "m", "rho", "ratio", "ci_lo", "ci_hi", "truncation_active"]
    rows = [[t["epsilon"], _m_str(t["m"]), t["rho"], t["value"], t["lo"], t["hi"],
             t["truncation_active"]] for t in tab.entries]
    rows_flat = [[f"flatness rho={r:g}", v] for r, v in tab.flatness.items()]
    plot = [[f"m={_m_str(t['m'])},rho={t['rho']:g}", "epsilon", t["epsilon"], "ratio",
             t["value"], t["lo"], t["hi"]] for t in tab.entries]
    pp = tab.per_path
    records = [{"path_index": p, "initial_l2": pp["initial_l2"][p], "failed": bool(pp["failed"][p]),
                "x_norms": [{**c, "x": pp["x"][i][p], "theta_min": pp["theta_min"][i][p]}
                            for i, c in enumerate(pp["configs"])]}
               for p in range(tab.n_paths)]
    comments = ["ratio: ||u_{m,eps}||_{L^rho_omega X(0,T0)} / ||u0||_{L^rho_omega L^2} (dimensionless)",
                "ci_lo, ci_hi: bootstrap 95% interval of the ratio",
                "truncation_active: some path had theta < 1",
                f"paths: {tab.n_paths}, failed: {tab.n_failed}"] + \
               [f"flatness (max/min over eps, m) at rho={r:g}: {v!r}" for r, v in tab.flatness.items()]
    _write_tables(writer, "uniform bound sweep", cols, rows, comments, plot,
                  ["y = ratio, x = epsilon"], records, tab.warnings)
    _say(aligned_table(["statistic", "value"], rows_flat).rstrip())


def _cauchy_outputs(writer, title, tab, label, census=None):
    cols = [f"{label}_1", f"{label}_2", f"D_L{tab.rho:g}", "ci_lo", "ci_hi"]
    rows, plot = [], []
    for (a, b), q in sorted(tab.pair_index.items(), key=lambda kv: kv[1]):
        est = tab.entry(a, b)
        rows.append([_m_str(a), _m_str(b), est.value, est.lo, est.hi])
    for star in tab.ladder:
        env = tab.envelope(star)
        plot.append(["envelope", f"{label}_star", star, "sup D", env.value, env.lo, env.hi])
    for (a, b), q in tab.pair_index.items():
        est = tab.entry(a, b)
        plot.append([f"D({label}1={_m_str(a)})", f"{label}_2", b, "D", est.value, est.lo, est.hi])
    records = []
    for p in range(tab.n_paths):
        rec = {"path_index": p,
               "difference_x": [{f"{label}_1": a, f"{label}_2": b, "x": tab.per_path_x[q][p]}
                                for (a, b), q in tab.pair_index.items()]}
        if census is not None:
            rec["x2"] = {k: v[p] for k, v in tab.extra["x2_per_path"].items()}
        records.append(rec)
    comments = [f"D: ||u_a - u_b||_{{L^{tab.rho:g}_omega X(0,T0)}} under common random numbers",
                "ci_lo, ci_hi: bootstrap 95% interval",
                f"paths: {tab.n_paths}, failed: {tab.n_failed}"]
    if not rows:
        tab.warnings.append("ladder has fewer than two values; no pairs to compare")
    _write_tables(writer, title, cols, rows, comments, plot, [f"y = D or envelope, x = {label}"],
                  records, tab.warnings)
    if census is not None:
        crow = [[k, v["paths"], v["tau_equals_T0"], v["agree_and_theta_one"], v["fraction"]]
                for k, v in census.items()]
        ccols = ["m", "paths", "tau_equals_T0", "agree_and_theta_one", "fraction"]
        writer.text("census.csv", csv_table(
            ["per-path agreement census: paths with ||u_m||_X2 < m - 1, theta = 1 throughout and",
             "X-norm agreement with every larger m within 1e-8"], ccols, crow))
        _say(aligned_table(ccols, crow).rstrip())


def _exp_eps(cfg, writer, common):
    s, e = cfg.solver, cfg.ensemble
    tab = convergence_in_eps(cfg.initial_spec(), common["model"], cfg.solver_config(),
                             s.truncation_m, s.eps_ladder, e.n_paths, e.rho0, e.master_seed,
                             common["grid"], e.chunk_size, e.threads)
    _cauchy_outputs(writer, "convergence in epsilon", tab, "epsilon")


def _exp_m(cfg, writer, common):
    e = cfg.ensemble
    tab = convergence_in_m(cfg.initial_spec(), common["model"], cfg.solver_config(),
                           cfg.solver.m_ladder, e.n_paths, e.rho0, e.master_seed,
                           grid=common["grid"], chunk_size=e.chunk_size, workers=e.threads)
    _cauchy_outputs(writer, "convergence in m", tab, "m", census=tab.extra["census"])


def _exp_stability(cfg, writer, common):
    e = cfg.ensemble
    tab = stability_experiment(cfg.initial_spec(), None, common["model"], cfg.solver_config(),
                               e.n_paths, e.kappa_ladder, e.rho0, e.master_seed, common["grid"],
                               e.chunk_size, e.threads)
    cols = ["kappa", "ratio", "ci_lo", "ci_hi", "difference", "diff_lo", "diff_hi"]
    rows = [[k, r.value, r.lo, r.hi, d.value, d.lo, d.hi]
            for k, r, d in zip(tab.kappas, tab.ratios, tab.differences)]
    plot = [["ratio", "kappa", k, "ratio", r.value, r.lo, r.hi] for k, r in zip(tab.kappas, tab.ratios)]
    records = [{"path_index": p, "difference_x": {repr(k): tab.per_path_x[i][p]
                                                  for i, k in enumerate(tab.kappas)}}
               for p in range(tab.n_paths)]
    comments = [f"ratio: ||u - v||_{{L^{tab.rho:g}_omega X(0,T0)}} / ||u0 - v0||_{{L^{tab.rho:g}_omega L^2}}",
                "difference: numerator of the ratio; v0 = u0 + kappa * w with ||w||_2 = 1",
                f"spread (max/min ratio over kappa > 0): {tab.spread!r}",
                f"paths: {tab.n_paths}, failed: {tab.n_failed}"]
    _write_tables(writer, "stability", cols, rows, comments, plot, ["y = ratio, x = kappa"],
                  records, tab.warnings)


def _exp_persistence(cfg, writer, common):
    e = cfg.ensemble
    tab = persistence_experiment(cfg.initial_spec(), common["model"], cfg.solver_config(),
                                 e.n_paths, e.rho0, e.master_seed, common["grid"], e.chunk_size,
                                 e.threads)
    cols = ["quantity", "value", "ci_lo", "ci_hi"]
    rows = [["X1/H1 ratio", tab.ratio.value, tab.ratio.lo, tab.ratio.hi],
            ["sup_t H1 norm", tab.sup_h1.value, tab.sup_h1.lo, tab.sup_h1.hi],
            ["max spectral tail", tab.tail_max, "", ""]]
    plot = [["x1_over_h1", "rho", tab.rho, "ratio", tab.ratio.value, tab.ratio.lo, tab.ratio.hi]]
    records = [{"path_index": p, "x1_over_h1": v} for p, v in enumerate(tab.per_path_ratio)]
    comments = [f"X1/H1 ratio: ||u||_{{L^{tab.rho:g}_omega X^1(0,T0)}} / ||u0||_{{L^{tab.rho:g}_omega H^1}}",
                "sup_t H1 norm: L^rho_omega norm of sup_t ||u(t)||_{H^1}",
                "max spectral tail: largest top-octave energy fraction seen",
                f"paths: {tab.n_paths}, failed: {tab.n_failed}"]
    _write_tables(writer, "persistence of regularity", cols, rows, comments, plot,
                  ["y = ratio, x = rho"], records, tab.warnings)


EXPERIMENTS = {"uniform-bound": _exp_uniform, "eps-convergence": _exp_eps,
               "m-convergence": _exp_m, "stability": _exp_stability,
               "persistence": _exp_persistence}


def cmd_experiment(kind: str, cfg: ExperimentConfig, writer: RunWriter) -> int:
    writer.text("config.yaml", cfg.to_yaml())
    grid = cfg.grid_obj()
    model = cfg.noise_model() if cfg.solver.noise_on else None
    EXPERIMENTS[kind](cfg, writer, {"grid": grid, "model": model})
    return EXIT_OK


# --------------------------------------------------------------------------- main

def _error(kind: str, exc: Exception, code: int, writer: Optional[RunWriter], extra=None) -> int:
    record = {"status": "error", "kind": kind, "message": str(exc), "exit_code": code}
    record.update(extra or {})
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    if writer is not None:
        writer.json("error.json", record)
    return code


def _fallback_writer(args, command) -> Optional[RunWriter]:
    import os
    directory = args.out or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT
    try:
        return RunWriter(directory, command, run_id=f"{command}-invalid-config")
    except OSError:
        return None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command if args.command != "experiment" else f"experiment-{args.kind}"
    writer = None
    t0 = time.perf_counter()
    try:
        cfg = _resolve(args)
        writer = RunWriter(cfg.output_dir(), command, cfg)
        if args.command == "simulate":
            code = cmd_simulate(cfg, writer, args.paths or 1)
        elif args.command == "verify":
            code = cmd_verify(cfg, writer)
        else:
            code = cmd_experiment(args.kind, cfg, writer)
    except (ConfigurationError, ContractViolation) as exc:
        if writer is None:
            writer = _fallback_writer(args, command)
        return _error("configuration", exc, EXIT_CONFIG, writer)
    except NumericalFailure as exc:
        return _error("numerical", exc, EXIT_NUMERICAL, writer,
                      {"step": exc.step, "path_index": exc.path_index})
    except FloatingPointError as exc:
        return _error("numerical", exc, EXIT_NUMERICAL, writer)
    _say(f"run {writer.run_id} finished in {time.perf_counter() - t0:.1f}s; "
         f"{len(writer.written)} files in {writer.directory}")
    return code


if __name__ == "__main__":
    sys.exit(main())
