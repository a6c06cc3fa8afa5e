"""Command-line interface: simulate, estimate, benchmark, diagnose.

Every command accepts ``--config`` (an INI file with sections [model],
[em], [mc], [io]) plus flags that override individual keys; outputs
embed the effective configuration and master seed.  Exit codes: 0
success (estimate: converged), 2 usage/configuration error, 3 data
error, 4 non-convergence, 5 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .benchmark import METHODS, run_cell, run_diagnostics
from .em import EMOptions, fit
from .metrics import DEFAULT_T_MIN, mse_common
from .panel_io import (
    ConfigError,
    params_to_dict,
    load_config,
    mc_config_from_section,
    model_spec_from_section,
    parse_index_set,
    read_panel,
    read_truth,
    write_panel,
    write_table,
    write_truth,
)
from .simulate import MCConfig, simulate_panel

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NONCONVERGED = 4
EXIT_NUMERIC = 5


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None, help="INI config file")
    p.add_argument("--seed", type=int, default=None, help="master seed override")
    p.add_argument("--jobs", type=int, default=None, help="parallel workers")
    p.add_argument("--out-dir", type=str, default=None, help="output directory")
    p.add_argument("--format", choices=("csv", "json"), default=None, help="table output format")


def _add_mc_overrides(p: argparse.ArgumentParser) -> None:
    for name, typ in [("n", int), ("T", int), ("q", int), ("s", int), ("d", int),
                      ("n1", int), ("nb", int), ("tau", float), ("theta", float),
                      ("mu", float), ("replications", int)]:
        p.add_argument(f"--{name}", type=typ, default=None)
    p.add_argument("--dist", choices=("gaussian", "student_t4"), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nsdfm", description=__doc__)
    parser.add_argument("--version", action="version", version=f"nsdfm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a benchmark panel plus its truth sidecar")
    _add_common(p_sim)
    _add_mc_overrides(p_sim)
    p_sim.add_argument("--replication", type=int, default=0, help="replication index to write")

    p_est = sub.add_parser("estimate", help="fit the model to a CSV panel")
    _add_common(p_est)
    p_est.add_argument("--input", type=str, required=True, help="panel CSV path")
    p_est.add_argument("--truth", type=str, default=None, help="truth sidecar for MSE reporting")
    p_est.add_argument("--q", type=int, default=None)
    p_est.add_argument("--s", type=int, default=None)
    p_est.add_argument("--p", type=int, default=None)
    p_est.add_argument("--idio-i1", type=str, default=None, help="comma list of zero-based indices")
    p_est.add_argument("--local-level", type=str, default=None)
    p_est.add_argument("--local-trend", type=str, default=None)
    p_est.add_argument("--detrend", type=str, default=None)
    p_est.add_argument("--standardize", action="store_true", default=None)
    p_est.add_argument("--max-iter", type=int, default=None)
    p_est.add_argument("--tolerance", type=float, default=None)

    p_bench = sub.add_parser("benchmark", help="run Monte Carlo cells against the PC competitors")
    _add_common(p_bench)
    _add_mc_overrides(p_bench)
    p_bench.add_argument("--cells", type=str, default=None,
                         help="semicolon list of cell overrides, e.g. 'n=75,T=75;n=100,T=100'")

    p_diag = sub.add_parser("diagnose", help="filter/smoother MSE traces at true parameters")
    _add_common(p_diag)
    _add_mc_overrides(p_diag)
    p_diag.add_argument("--n-grid", type=str, default="25,100", help="comma list of panel sizes")
    p_diag.add_argument("--horizon", type=int, default=10)
    p_diag.add_argument("--ss-tol", type=float, default=1e-6, help="steady-state flag tolerance")
    return parser


def _load_sections(args) -> dict:
    return load_config(args.config) if args.config else {}


def _out_dir(args, sections) -> Path:
    out = args.out_dir or sections.get("io", {}).get("out_dir", ".")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _mc_config(args, sections) -> MCConfig:
    overrides = {k: getattr(args, k, None) for k in
                 ("n", "T", "q", "s", "d", "n1", "nb", "tau", "theta", "mu", "replications")}
    overrides["dist"] = getattr(args, "dist", None)
    if args.seed is not None:
        overrides["seed"] = args.seed
    return mc_config_from_section(sections.get("mc", {}), overrides)


def _em_options(args, sections, detrend=None, standardize=False) -> EMOptions:
    em = sections.get("em", {})
    kwargs = {}
    if "max_iter" in em:
        kwargs["max_iter"] = int(em["max_iter"])
    if "tolerance" in em:
        kwargs["tolerance"] = float(em["tolerance"])
    if "kappa" in em:
        kwargs["kappa"] = float(em["kappa"])
    if "phi_policy" in em:
        raw = em["phi_policy"]
        kwargs["phi_policy"] = raw if raw == "estimated" else float(raw)
    if getattr(args, "max_iter", None) is not None:
        kwargs["max_iter"] = args.max_iter
    if getattr(args, "tolerance", None) is not None:
        kwargs["tolerance"] = args.tolerance
    return EMOptions(detrend=detrend, standardize=standardize, **kwargs)


def _config_echo(sections, args, extra=None) -> dict:
    echo = {f"{sec}.{k}": v for sec, kv in sections.items() for k, v in kv.items()}
    if args.seed is not None:
        echo["seed"] = args.seed
    echo["version"] = __version__
    echo.update(extra or {})
    return echo


def cmd_simulate(args) -> int:
    sections = _load_sections(args)
    cfg = _mc_config(args, sections)
    out = _out_dir(args, sections)
    sim = simulate_panel(cfg, args.replication)
    meta = _config_echo(sections, args, {
        **{f"mc.{k}": getattr(cfg, k) for k in cfg.__dataclass_fields__},
        "replication": args.replication,
    })
    write_panel(out / "panel.csv", sim.panel, metadata=meta)
    write_truth(out / "truth.json", sim)
    print(f"wrote {out / 'panel.csv'} and {out / 'truth.json'} (seed={cfg.seed})")
    return EXIT_OK


def cmd_estimate(args) -> int:
    sections = _load_sections(args)
    out = _out_dir(args, sections)
    try:
        panel, names, meta = read_panel(args.input)
    except (OSError, ValueError) as exc:
        print(f"error: cannot read panel: {exc}", file=sys.stderr)
        return EXIT_DATA

    model_sec = dict(sections.get("model", {}))
    for key, flag in (("q", "q"), ("s", "s"), ("p", "p")):
        if getattr(args, flag, None) is not None:
            model_sec[key] = str(getattr(args, flag))
    for key, flag in (("idio_i1", "idio_i1"), ("local_level", "local_level"), ("local_trend", "local_trend")):
        if getattr(args, flag, None) is not None:
            model_sec[key] = getattr(args, flag)
    spec = model_spec_from_section(model_sec, panel.n, panel.T)

    detrend = None
    if args.detrend is not None:
        detrend = parse_index_set(args.detrend)
    elif "detrend" in model_sec:
        detrend = parse_index_set(model_sec["detrend"])
    standardize = bool(args.standardize) or model_sec.get("standardize", "false").lower() == "true"
    options = _em_options(args, sections, detrend=detrend, standardize=standardize)

    res = fit(spec, panel, options)

    echo = _config_echo(sections, args, {"input": args.input})
    write_table(out / "chi.csv", names, res.chi.T.tolist(), metadata=echo)
    write_table(out / "factors.csv", [f"f{j}" for j in range(spec.q)], res.factors.T.tolist(), metadata=echo)
    write_table(out / "loglik.csv", ["iteration", "loglik"],
                [[i, v] for i, v in enumerate(res.loglik_path)], metadata=echo)
    summary = {
        "converged": res.converged,
        "iterations": res.iterations,
        "loglik": res.loglik_path[-1],
        "params": params_to_dict(res.params),
        "trend_alpha": res.trend_alpha.tolist(),
        "trend_beta": res.trend_beta.tolist(),
        "config": echo,
    }
    if args.truth:
        try:
            truth = read_truth(args.truth)
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: cannot read truth sidecar: {exc}", file=sys.stderr)
            return EXIT_DATA
        summary["mse_common"] = mse_common(res.chi, truth["chi"])
    (out / "estimate.json").write_text(json.dumps(summary), encoding="utf-8")
    msg = "converged" if res.converged else f"NOT converged after {res.iterations} iterations"
    print(f"estimate: {msg}; loglik={res.loglik_path[-1]:.3f}; outputs in {out}")
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def _parse_cells(text: str, base: MCConfig) -> list[MCConfig]:
    cells = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        kwargs = {k: getattr(base, k) for k in base.__dataclass_fields__}
        for token in chunk.split(","):
            key, _, value = token.partition("=")
            key = key.strip()
            if key not in base.__dataclass_fields__:
                raise ConfigError(f"unknown cell key {key!r}")
            caster = type(getattr(base, key))
            kwargs[key] = caster(value) if caster is not bool else value.strip().lower() == "true"
        cells.append(MCConfig(**kwargs))
    return cells or [base]


def cmd_benchmark(args) -> int:
    sections = _load_sections(args)
    base = _mc_config(args, sections)
    cells = _parse_cells(args.cells, base) if args.cells else \
        _parse_cells(sections.get("mc", {}).get("cells", ""), base)
    out = _out_dir(args, sections)
    jobs = args.jobs or int(sections.get("io", {}).get("jobs", "1"))
    t_min = int(sections.get("io", {}).get("t_min", DEFAULT_T_MIN))
    em_options = _em_options(args, sections)
    fmt = args.format or sections.get("io", {}).get("format", "csv")

    table_rows = []
    raw_rows = []
    reports = []
    for cfg in cells:
        report = run_cell(cfg, em_options=em_options, jobs=jobs, t_min=t_min)
        agg = report.aggregate()
        reports.append({"config": {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}, **agg})
        table_rows.append([
            cfg.n, cfg.T, cfg.n1, cfg.nb, cfg.q, cfg.s, cfg.innovation_dist, cfg.tau,
            agg["mean_rel_mse_pc_levels"], agg["mean_rel_mse_pc_diff_cumulate"],
            agg["mean_rel_mse_pc_diff_corrected"],
            agg["median_rel_mse_pc_levels"], agg["median_rel_mse_pc_diff_cumulate"],
            agg["median_rel_mse_pc_diff_corrected"],
            agg["failed"], agg["valid_cell"],
        ])
        for rec in report.replications:
            raw_rows.append([
                cfg.n, cfg.T, cfg.n1, cfg.nb, cfg.innovation_dist, rec.replication,
                rec.mse_em,
                *[rec.mse_competitors.get(m, float("nan")) for m in METHODS],
                rec.converged, rec.iterations, rec.error or "",
            ])
    echo = _config_echo(sections, args, {"seed": base.seed, "jobs": jobs, "t_min": t_min})
    if fmt == "json":
        (out / "report.json").write_text(json.dumps({"cells": reports, "config": echo}), encoding="utf-8")
    else:
        write_table(
            out / "report.csv",
            ["n", "T", "n1", "nb", "q", "s", "dist", "tau",
             "mean_rel_levels", "mean_rel_cumulate", "mean_rel_corrected",
             "median_rel_levels", "median_rel_cumulate", "median_rel_corrected",
             "failed", "valid"],
            table_rows, metadata=echo,
        )
        (out / "report.json").write_text(json.dumps({"cells": reports, "config": echo}), encoding="utf-8")
    write_table(
        out / "replications.csv",
        ["n", "T", "n1", "nb", "dist", "replication", "mse_em",
         *[f"mse_{m}" for m in METHODS], "converged", "iterations", "error"],
        raw_rows, metadata=echo,
    )
    for row in table_rows:
        print(f"cell n={row[0]} T={row[1]} n1={row[2]} nb={row[3]}: "
              f"mean rel MSE levels={row[8]:.4f} cumulate={row[9]:.4f} "
              f"corrected={row[10]:.4f} (failed {row[14]})")
    if not all(r["valid_cell"] for r in reports):
        print("error: a cell exceeded the failure budget", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_diagnose(args) -> int:
    sections = _load_sections(args)
    cfg = _mc_config(args, sections)
    out = _out_dir(args, sections)
    try:
        n_grid = tuple(int(tok) for tok in args.n_grid.split(",") if tok.strip())
    except ValueError:
        print(f"error: bad --n-grid {args.n_grid!r}", file=sys.stderr)
        return EXIT_USAGE
    diag = run_diagnostics(cfg, n_grid=n_grid, horizon=args.horizon,
                           replications=cfg.replications, tol=args.ss_tol)
    echo = _config_echo(sections, args, {"seed": cfg.seed, "horizon": args.horizon})
    rows = []
    for n in n_grid:
        d = diag[n]
        for t in range(args.horizon):
            rows.append([n, t + 1, d["tr_pred_over_q"][t], d["tr_filt_over_q"][t], d["tr_smooth_over_q"][t]])
    write_table(out / "diagnose.csv", ["n", "t", "tr_pred_over_q", "tr_filt_over_q", "tr_smooth_over_q"],
                rows, metadata=echo)
    srows = [[n, diag[n]["tr_init_over_q"], diag[n]["tr_filt_scaled"], diag[n]["tr_smooth_scaled"],
              diag[n]["steady_state_t"] if diag[n]["steady_state_t"] is not None else -1]
             for n in n_grid]
    write_table(out / "diagnose_summary.csv",
                ["n", "tr_init_over_q", "tr_filt_scaled", "tr_smooth_scaled", "steady_state_t"],
                srows, metadata=echo)
    for n in n_grid:
        d = diag[n]
        print(f"n={n}: tr(P00)/q={d['tr_init_over_q']:.1f} pred(t={args.horizon})={d['tr_pred_over_q'][-1]:.6f} "
              f"filt={d['tr_filt_over_q'][-1]:.6f} smooth={d['tr_smooth_over_q'][-1]:.6f} "
              f"steady_state_t={d['steady_state_t']}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "estimate":
            return cmd_estimate(args)
        if args.command == "benchmark":
            return cmd_benchmark(args)
        if args.command == "diagnose":
            return cmd_diagnose(args)
        parser.error(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
