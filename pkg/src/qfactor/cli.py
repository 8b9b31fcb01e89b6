"""Command-line interface: estimate, select, smooth-estimate, simulate.

Option precedence is flags > config file (JSON) > built-in defaults, and
every run logs its fully resolved configuration so any artifact can be
reproduced from the log line.  Exit codes: 0 success, 2 usage/input error,
3 numerical non-convergence (artifacts still written, flagged).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .dgp import DgpSpec
from .exceptions import QfactorError
from .mc import emit_table, mc_result_to_dict, run_replications
from .panel import load_csv, standardize
from .qfa import IqrConfig, iqr_estimate, save_factors_csv, save_fit_json, save_loadings_csv
from .select import (
    save_selection_json,
    select_eigen_ratio,
    select_ic_p1,
    select_ic_qfa,
    select_pc_p1,
    select_rank_min,
    selection_to_dict,
)
from .sqr import SqrConfig, sqr_estimate

log = logging.getLogger("qfactor")

_EXPERIMENTS = {
    "table1": dict(
        name="table1_outliers",
        methods=["rank_min", "pc_p1", "ic_p1", "eigen_ratio"],
        taus=[0.5],
        size=(200, 200),
    ),
    "table2": dict(
        name="table1_outliers", methods=["qfa", "pca"], taus=[0.5], size=(100, 100), r_fixed=3
    ),
    "table3": dict(name="case1_indep", methods=["qfa_rank"], taus=[0.25, 0.5, 0.75], size=(100, 100)),
    "table4": dict(
        name="case2_student3", methods=["qfa_rank"], taus=[0.25, 0.5, 0.75], size=(100, 100)
    ),
    "table5": dict(name="case3_serial", methods=["qfa_rank"], taus=[0.25, 0.5, 0.75], size=(100, 100)),
    "table6": dict(
        name="case4_serial_cross", methods=["qfa_rank"], taus=[0.25, 0.5, 0.75], size=(100, 100)
    ),
    "fig-sqr": dict(name="fig_sqr", methods=["sqr"], taus=[0.25], size=(100, 100), r_fixed=1),
}

_SELECT_METHODS = {
    "rank": lambda p, tau, k, cfg: select_rank_min(p, tau, k, cfg),
    "ic": lambda p, tau, k, cfg: select_ic_qfa(p, tau, k, cfg=cfg),
    "pcp1": lambda p, tau, k, cfg: select_pc_p1(p, k),
    "icp1": lambda p, tau, k, cfg: select_ic_p1(p, k),
    "er": lambda p, tau, k, cfg: select_eigen_ratio(p, k),
}


def _parse_taus(text: str):
    try:
        taus = sorted({float(v) for v in text.split(",") if v.strip() != ""})
    except ValueError:
        raise QfactorError(f"could not parse quantile list {text!r}")
    if not taus:
        raise QfactorError("empty quantile list")
    for tau in taus:
        if not 0.0 < tau < 1.0:
            raise QfactorError(f"quantile outside (0, 1): {tau}")
    return taus


def _parse_size(text: str):
    try:
        n_s, t_s = text.lower().split("x")
        return int(n_s), int(t_s)
    except ValueError:
        raise QfactorError(f"could not parse --size {text!r}; expected NxT like 100x100")


def _threads(value):
    if value is not None:
        return int(value)
    env = os.environ.get("QFACTOR_THREADS")
    if env:
        return int(env)
    return os.cpu_count() or 1


def _load_config(path):
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise QfactorError("config file must hold a JSON object")
    return cfg


def _resolve(args, config, key, default):
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _iqr_config(args, config) -> IqrConfig:
    return IqrConfig(
        max_iterations=int(_resolve(args, config, "max_iterations", 100)),
        rel_tol=float(_resolve(args, config, "rel_tol", 1e-6)),
        restarts=int(_resolve(args, config, "restarts", 3)),
        seed=int(_resolve(args, config, "seed", 0)),
        inner_tol=float(_resolve(args, config, "inner_tol", 1e-10)),
    )


def _read_panel(args, config):
    path = _resolve(args, config, "input", None)
    if not path:
        raise QfactorError("--input is required")
    panel = load_csv(path, layout=_resolve(args, config, "layout", "time-by-unit"))
    if not _resolve(args, config, "no_standardize", False):
        panel = standardize(panel)
    return panel


def _log_config(command: str, resolved: dict) -> None:
    log.info("command=%s resolved_config=%s", command, json.dumps(resolved, sort_keys=True))


def cmd_estimate(args) -> int:
    config = _load_config(args.config)
    taus = _parse_taus(_resolve(args, config, "tau", "0.5"))
    r_arg = str(_resolve(args, config, "r", "auto"))
    k = int(_resolve(args, config, "k", 8))
    if r_arg != "auto" and int(r_arg) < 1:
        raise QfactorError(f"--r must be 'auto' or a positive integer, got {r_arg}")
    out_dir = _resolve(args, config, "output_dir", ".")
    cfg = _iqr_config(args, config)
    _log_config(
        "estimate",
        {
            "input": args.input,
            "taus": taus,
            "r": r_arg,
            "k": k,
            "output_dir": out_dir,
            "config": vars(cfg),
        },
    )
    panel = _read_panel(args, config)
    os.makedirs(out_dir, exist_ok=True)

    all_converged = True
    for tau in taus:
        if r_arg == "auto":
            sel = select_rank_min(panel, tau, k, cfg)
            r = max(sel.r_hat, 1)
            log.info("tau=%g rank estimator selected r=%d", tau, r)
        else:
            r = int(r_arg)
        fit = iqr_estimate(panel, tau, r, cfg)
        tag = f"tau{tau:g}"
        save_fit_json(fit, os.path.join(out_dir, f"fit_{tag}.json"))
        save_factors_csv(fit, os.path.join(out_dir, f"factors_{tag}.csv"), panel.time_ids)
        save_loadings_csv(fit, os.path.join(out_dir, f"loadings_{tag}.csv"), panel.unit_ids)
        print(
            f"tau={tau:g} r={r} objective={fit.objective:.8g} "
            f"converged={fit.converged} iterations={fit.iterations}"
        )
        all_converged = all_converged and fit.converged
    return 0 if all_converged else 3


def cmd_select(args) -> int:
    config = _load_config(args.config)
    method = _resolve(args, config, "method", "rank")
    k = int(_resolve(args, config, "k", 8))
    if k < 1:
        raise QfactorError(f"--k must be >= 1, got {k}")
    tau = float(_resolve(args, config, "tau", 0.5))
    if not 0.0 < tau < 1.0:
        raise QfactorError(f"quantile outside (0, 1): {tau}")
    out = _resolve(args, config, "output", None)
    cfg = _iqr_config(args, config)
    names = list(_SELECT_METHODS) if method == "all" else [method]
    unknown = [m for m in names if m not in _SELECT_METHODS]
    if unknown:
        raise QfactorError(f"unknown method(s) {unknown}; choose from {list(_SELECT_METHODS)} or 'all'")
    _log_config("select", {"input": args.input, "method": names, "k": k, "tau": tau})
    panel = _read_panel(args, config)

    results = [_SELECT_METHODS[m](panel, tau, k, cfg) for m in names]
    for res in results:
        diag = " ".join(f"{v:.6g}" for v in np.asarray(res.diagnostics))
        print(f"method={res.method} r_hat={res.r_hat} k={res.k_max} diagnostics=[{diag}]")
    if out:
        if len(results) == 1:
            save_selection_json(results[0], out)
        else:
            with open(out, "w", encoding="utf-8") as fh:
                json.dump([selection_to_dict(r) for r in results], fh, indent=2, sort_keys=True)
                fh.write("\n")
    return 0


def cmd_smooth_estimate(args) -> int:
    config = _load_config(args.config)
    taus = _parse_taus(_resolve(args, config, "tau", "0.5"))
    r = int(_resolve(args, config, "r", 1))
    if r < 1:
        raise QfactorError(f"--r must be >= 1, got {r}")
    out_dir = _resolve(args, config, "output_dir", ".")
    iqr_cfg = _iqr_config(args, config)
    sqr_cfg = SqrConfig(
        h=_resolve(args, config, "h", None),
        c_h=float(_resolve(args, config, "c_h", 1.0)),
        b=_resolve(args, config, "b", None),
        c_b=float(_resolve(args, config, "c_b", 1.0)),
    )
    _log_config(
        "smooth-estimate",
        {"input": args.input, "taus": taus, "r": r, "sqr": vars(sqr_cfg), "iqr": vars(iqr_cfg)},
    )
    panel = _read_panel(args, config)
    os.makedirs(out_dir, exist_ok=True)

    all_converged = True
    for tau in taus:
        fit = sqr_estimate(panel, tau, r, sqr_cfg, iqr_cfg)
        tag = f"tau{tau:g}"
        payload = {
            "tau": fit.tau,
            "r": fit.r,
            "objective": fit.objective,
            "converged": fit.converged,
            "h": fit.h_used,
            "b": fit.b_used,
            "loadings": fit.loadings.tolist(),
            "factors": fit.factors.tolist(),
            "loading_cov": fit.loading_cov.tolist(),
            "factor_cov": fit.factor_cov.tolist(),
        }
        with open(os.path.join(out_dir, f"sqr_fit_{tag}.json"), "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        save_factors_csv(fit, os.path.join(out_dir, f"sqr_factors_{tag}.csv"), panel.time_ids)
        save_loadings_csv(fit, os.path.join(out_dir, f"sqr_loadings_{tag}.csv"), panel.unit_ids)
        _write_bands(fit, os.path.join(out_dir, f"sqr_factor_bands_{tag}.csv"), panel.time_ids)
        print(
            f"tau={tau:g} r={r} objective={fit.objective:.8g} h={fit.h_used:.6g} "
            f"b={fit.b_used:.6g} converged={fit.converged}"
        )
        all_converged = all_converged and fit.converged
    return 0 if all_converged else 3


def _write_bands(fit, path, time_ids) -> None:
    # 95% bands: point +- 1.96 sqrt(diag(V)/N)
    half = 1.96 * np.sqrt(
        np.stack([np.diag(fit.factor_cov[t]) for t in range(fit.T)]) / fit.N
    )
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        header = ["time"]
        for j in range(fit.r):
            header += [f"factor{j + 1}", f"factor{j + 1}_lo", f"factor{j + 1}_hi"]
        writer.writerow(header)
        for t in range(fit.T):
            row = [time_ids[t]]
            for j in range(fit.r):
                v = fit.factors[t, j]
                row += [f"{v:.17g}", f"{v - half[t, j]:.17g}", f"{v + half[t, j]:.17g}"]
            writer.writerow(row)


def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    experiment = _resolve(args, config, "experiment", None)
    spec_json = _resolve(args, config, "spec_json", None)
    n_reps = int(_resolve(args, config, "n", 100))
    seed = int(_resolve(args, config, "seed", 0))
    fmt = _resolve(args, config, "format", "text")
    out_dir = _resolve(args, config, "output_dir", ".")
    threads = _threads(_resolve(args, config, "threads", None))
    restarts = int(_resolve(args, config, "restarts", 1))

    if (experiment is None) == (spec_json is None):
        raise QfactorError("pass exactly one of --experiment or --spec-json")

    if experiment is not None:
        if experiment not in _EXPERIMENTS:
            raise QfactorError(
                f"unknown experiment {experiment!r}; choose from {sorted(_EXPERIMENTS)}"
            )
        exp = dict(_EXPERIMENTS[experiment])
        N, T = exp.pop("size")
        if args.size:
            N, T = _parse_size(args.size)
        spec = DgpSpec(name=exp.pop("name"), N=N, T=T, seed=seed)
        methods = exp.pop("methods")
        taus = exp.pop("taus")
        r_fixed = exp.pop("r_fixed", None)
        stem = experiment
    else:
        spec = DgpSpec.from_dict(json.loads(spec_json))
        spec = replace(spec, seed=seed) if args.seed is not None else spec
        methods = _resolve(args, config, "methods", ["rank_min"])
        if isinstance(methods, str):
            methods = [m for m in methods.split(",") if m]
        taus = _parse_taus(_resolve(args, config, "tau", "0.5"))
        r_fixed = _resolve(args, config, "r_fixed", None)
        stem = spec.name

    _log_config(
        "simulate",
        {
            "spec": spec.to_dict(),
            "methods": methods,
            "taus": taus,
            "n_reps": n_reps,
            "r_fixed": r_fixed,
            "threads": threads,
            "restarts": restarts,
        },
    )
    result = run_replications(
        spec,
        methods,
        taus=taus,
        n_reps=n_reps,
        parallelism=threads,
        r_fixed=r_fixed,
        iqr_cfg=IqrConfig(restarts=restarts, seed=0),
    )
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.join(out_dir, f"{stem}_result")
    with open(base + ".json", "w", encoding="utf-8") as fh:
        fh.write(emit_table(result, "json"))
    with open(base + ".csv", "w", encoding="utf-8") as fh:
        fh.write(emit_table(result, "csv"))
    text = emit_table(result, "text")
    with open(base + ".txt", "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    log.info("wall clock: %.2f s total", result.wall_clock["total_seconds"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qfactor", description="Quantile factor analysis for large panels"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (flags take precedence)")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)

    p = sub.add_parser("estimate", help="estimate quantile factors from a CSV panel")
    p.add_argument("--input")
    p.add_argument("--layout", choices=["time-by-unit", "unit-by-time"])
    p.add_argument("--tau", help="comma-separated quantile levels")
    p.add_argument("--r", help="factor count or 'auto'")
    p.add_argument("--k", type=int, help="max factors for auto selection")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--no-standardize", dest="no_standardize", action="store_true", default=None)
    p.add_argument("--restarts", type=int)
    p.add_argument("--max-iterations", dest="max_iterations", type=int)
    p.add_argument("--rel-tol", dest="rel_tol", type=float)
    p.add_argument("--inner-tol", dest="inner_tol", type=float)
    common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("select", help="estimate the number of factors")
    p.add_argument("--input")
    p.add_argument("--layout", choices=["time-by-unit", "unit-by-time"])
    p.add_argument("--method", help="rank|ic|pcp1|icp1|er|all")
    p.add_argument("--tau", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--output")
    p.add_argument("--no-standardize", dest="no_standardize", action="store_true", default=None)
    p.add_argument("--restarts", type=int)
    common(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("smooth-estimate", help="smoothed estimation with confidence bands")
    p.add_argument("--input")
    p.add_argument("--layout", choices=["time-by-unit", "unit-by-time"])
    p.add_argument("--tau", help="comma-separated quantile levels")
    p.add_argument("--r", type=int)
    p.add_argument("--h", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--c-h", dest="c_h", type=float)
    p.add_argument("--c-b", dest="c_b", type=float)
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--no-standardize", dest="no_standardize", action="store_true", default=None)
    p.add_argument("--restarts", type=int)
    common(p)
    p.set_defaults(func=cmd_smooth_estimate)

    p = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    p.add_argument("--experiment", help="|".join(sorted(_EXPERIMENTS)))
    p.add_argument("--spec-json", dest="spec_json", help="inline DGP spec as JSON")
    p.add_argument("--n", type=int, help="replications")
    p.add_argument("--size", help="NxT, e.g. 200x200")
    p.add_argument("--tau", help="quantiles for --spec-json runs")
    p.add_argument("--methods", help="comma list for --spec-json runs")
    p.add_argument("--r-fixed", dest="r_fixed", type=int)
    p.add_argument("--format", choices=["text", "csv", "json"])
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--restarts", type=int)
    common(p)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except QfactorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
