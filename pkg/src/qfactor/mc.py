"""Monte Carlo replication harness.

Runs estimators across seeded replications of a simulation design, aligns
estimates to the design's ground truth, and aggregates factor-count
distributions and per-factor adjusted R-squared the way the reference
tables report them.  Replications are independent and may run in parallel;
aggregation is an ordered reduction, so results are bit-identical for any
worker count.
"""
from __future__ import annotations

import csv
import io
import json
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed
from threadpoolctl import threadpool_limits

from .dgp import DgpSpec, SimulatedPanel, generate
from .exceptions import QfactorError
from .mathkit import ols_r2
from .pca import pca_estimate
from .qfa import FactorFit, IqrConfig, StandardizationWarning, iqr_estimate, two_stage_estimate
from .select import (
    select_eigen_ratio,
    select_ic_p1,
    select_ic_qfa,
    select_pc_p1,
    select_rank_min,
)
from .sqr import SqrConfig, SqrFit, sqr_estimate, standardized_stats

__all__ = [
    "MC_METHODS",
    "MethodOutcome",
    "McResult",
    "run_replications",
    "align_to_truth",
    "emit_table",
    "mc_result_to_dict",
]

# methods that ignore the quantile level (mean-factor baselines)
_MEAN_METHODS = ("pc_p1", "ic_p1", "eigen_ratio")
MC_METHODS = (
    "rank_min",
    "ic_qfa",
    "pc_p1",
    "ic_p1",
    "eigen_ratio",
    "qfa",
    "qfa_rank",
    "pca",
    "two_stage",
    "sqr",
)


@dataclass(frozen=True)
class MethodOutcome:
    """Aggregate of one (method, quantile) cell across replications."""

    method: str
    tau: float | None
    r_true: int | None = None
    proportions: tuple | None = None  # (P[r_hat < r], P[=], P[>])
    mean_r_hat: float | None = None
    mean_r2: tuple | None = None  # per true driving factor
    stat_samples: tuple = ()
    n_used: int = 0
    n_failed: int = 0


@dataclass(frozen=True)
class McResult:
    spec: DgpSpec
    replications: int
    outcomes: tuple
    failures: tuple = ()
    wall_clock: dict = field(default_factory=dict)


def align_to_truth(estimated: FactorFit, truth: SimulatedPanel, tau: float) -> FactorFit:
    """Match estimated factor columns to the true ones and fix their signs.

    Columns are paired greedily by largest absolute correlation; a matched
    column (and its loading column) is negated when the correlation is
    negative.  Unmatched columns are left untouched.  Covariance blocks of
    smoothed fits are flipped consistently.
    """
    true_F = truth.true_factors_at(tau)
    est_F = estimated.factors
    rt, re = true_F.shape[1], est_F.shape[1]
    C = np.zeros((rt, re))
    for a in range(rt):
        ta = true_F[:, a]
        if np.std(ta) == 0:
            continue
        for b in range(re):
            eb = est_F[:, b]
            if np.std(eb) == 0:
                continue
            C[a, b] = np.corrcoef(ta, eb)[0, 1]

    signs = np.ones(re)
    used_a, used_b = set(), set()
    absC = np.abs(C)
    for _ in range(min(rt, re)):
        best = -1.0
        pick = None
        for a in range(rt):
            if a in used_a:
                continue
            for b in range(re):
                if b in used_b:
                    continue
                if absC[a, b] > best:
                    best = absC[a, b]
                    pick = (a, b)
        if pick is None or best <= 0.0:
            break
        a, b = pick
        used_a.add(a)
        used_b.add(b)
        if C[a, b] < 0:
            signs[b] = -1.0

    if np.all(signs == 1.0):
        return estimated
    L = estimated.loadings * signs
    F = estimated.factors * signs
    if isinstance(estimated, SqrFit):
        flip = signs[None, :, None] * signs[None, None, :]
        return replace(
            estimated,
            loadings=L,
            factors=F,
            loading_cov=estimated.loading_cov * flip,
            factor_cov=estimated.factor_cov * flip,
        )
    return replace(estimated, loadings=L, factors=F)


def _r2_per_factor(true_factors: np.ndarray, est_factors: np.ndarray) -> list:
    return [float(ols_r2(true_factors[:, j], est_factors)) for j in range(true_factors.shape[1])]


def _run_method(method, sim, tau, k, r_fixed, iqr_cfg, sqr_cfg, stat_period):
    panel = sim.panel
    if method == "rank_min":
        sel = select_rank_min(panel, tau, k, iqr_cfg)
        return {"r_hat": sel.r_hat}
    if method == "ic_qfa":
        sel = select_ic_qfa(panel, tau, k, cfg=iqr_cfg)
        return {"r_hat": sel.r_hat}
    if method == "pc_p1":
        return {"r_hat": select_pc_p1(panel, k).r_hat}
    if method == "ic_p1":
        return {"r_hat": select_ic_p1(panel, k).r_hat}
    if method == "eigen_ratio":
        return {"r_hat": select_eigen_ratio(panel, k).r_hat}

    driving = sim.components["factors"]
    if method == "qfa_rank":
        sel = select_rank_min(panel, tau, k, iqr_cfg)
        if sel.r_hat < 1:
            raise QfactorError("rank estimator selected zero factors")
        fit = iqr_estimate(panel, tau, sel.r_hat, iqr_cfg)
        return {"r_hat": sel.r_hat, "r2": _r2_per_factor(driving, fit.factors)}
    if method == "qfa":
        r = r_fixed or sim.r_true_at(tau)
        fit = iqr_estimate(panel, tau, r, iqr_cfg)
        return {"r_hat": r, "r2": _r2_per_factor(driving, fit.factors)}
    if method == "pca":
        r = r_fixed or sim.r_true_at(0.5)
        fit = pca_estimate(panel, r)
        return {"r_hat": r, "r2": _r2_per_factor(driving, fit.factors)}
    if method == "two_stage":
        r = r_fixed or sim.r_true_at(tau)
        fit = two_stage_estimate(panel, tau, r)
        return {"r_hat": r, "r2": _r2_per_factor(driving, fit.factors)}
    if method == "sqr":
        r = r_fixed or sim.r_true_at(tau)
        fit = sqr_estimate(panel, tau, r, sqr_cfg, iqr_cfg)
        fit = align_to_truth(fit, sim, tau)
        t_idx = stat_period if stat_period is not None else sim.spec.T // 2
        stat = standardized_stats(fit, sim.true_factors_at(tau), period=t_idx)
        return {"stat": [float(v) for v in np.atleast_1d(stat)]}
    raise QfactorError(f"unknown method {method!r}; valid methods: {MC_METHODS}")


def _method_taus(method, taus):
    return [None] if method in _MEAN_METHODS else list(taus)


def _run_one(spec, rep, methods, taus, k, r_fixed, iqr_cfg, sqr_cfg, stat_period):
    with threadpool_limits(limits=1), warnings.catch_warnings():
        warnings.simplefilter("ignore", StandardizationWarning)
        sim = generate(spec, replication=rep)
        records = {}
        for method in methods:
            for tau in _method_taus(method, taus):
                key = (method, tau)
                try:
                    records[key] = _run_method(
                        method, sim, tau, k, r_fixed, iqr_cfg, sqr_cfg, stat_period
                    )
                except Exception as exc:  # recorded and excluded from aggregates
                    records[key] = {"error": f"{type(exc).__name__}: {exc}"}
        return records


def run_replications(
    spec: DgpSpec,
    methods,
    taus=(0.5,),
    n_reps: int = 100,
    parallelism: int = 1,
    k: int = 8,
    r_fixed: int | None = None,
    iqr_cfg: IqrConfig | None = None,
    sqr_cfg: SqrConfig | None = None,
    stat_period: int | None = None,
) -> McResult:
    """Run every (method, quantile) cell across seeded replications.

    Replication i draws its panel from the (spec.seed, i) stream, so the
    result is a pure function of the spec and arguments, independent of
    ``parallelism``.  Individual failures are recorded and excluded; the
    run aborts if more than 5% of cells fail.

    The Monte Carlo default here is one random start per fit: restarts
    mitigate a non-convexity that has never bitten at these sizes, and the
    replication dimension already averages over starts.
    """
    if n_reps < 1:
        raise QfactorError("n_reps must be >= 1")
    unknown = [m for m in methods if m not in MC_METHODS]
    if unknown:
        raise QfactorError(f"unknown methods {unknown}; valid methods: {MC_METHODS}")
    iqr_cfg = iqr_cfg or IqrConfig(restarts=1)

    t0 = time.perf_counter()
    args = (methods, taus, k, r_fixed, iqr_cfg, sqr_cfg, stat_period)
    if parallelism > 1:
        per_rep = Parallel(n_jobs=parallelism)(
            delayed(_run_one)(spec, rep, *args) for rep in range(n_reps)
        )
    else:
        per_rep = [_run_one(spec, rep, *args) for rep in range(n_reps)]
    elapsed = time.perf_counter() - t0

    sim0 = generate(spec, replication=0)
    outcomes = []
    failures = []
    for method in methods:
        for tau in _method_taus(method, taus):
            key = (method, tau)
            records = [rep_records[key] for rep_records in per_rep]
            errors = [
                {"method": method, "tau": tau, "replication": i, "error": rec["error"]}
                for i, rec in enumerate(records)
                if "error" in rec
            ]
            failures.extend(errors)
            good = [rec for rec in records if "error" not in rec]
            outcomes.append(
                _aggregate(method, tau, good, sim0, n_failed=len(errors))
            )

    total_cells = sum(len(_method_taus(m, taus)) for m in methods) * n_reps
    if failures and len(failures) > 0.05 * total_cells:
        raise QfactorError(
            f"{len(failures)} of {total_cells} method runs failed (> 5%); "
            f"first failure: {failures[0]}"
        )
    return McResult(
        spec=spec,
        replications=n_reps,
        outcomes=tuple(outcomes),
        failures=tuple(json.dumps(f, sort_keys=True) for f in failures),
        wall_clock={"total_seconds": elapsed, "per_replication": elapsed / n_reps},
    )


def _aggregate(method, tau, records, sim0, n_failed):
    r_true = sim0.r_true_at(tau if tau is not None else 0.5)
    proportions = None
    mean_r_hat = None
    mean_r2 = None
    stats = []
    r_hats = [rec["r_hat"] for rec in records if "r_hat" in rec]
    if r_hats:
        arr = np.asarray(r_hats)
        proportions = (
            float(np.mean(arr < r_true)),
            float(np.mean(arr == r_true)),
            float(np.mean(arr > r_true)),
        )
        mean_r_hat = float(np.mean(arr))
    r2s = [rec["r2"] for rec in records if "r2" in rec]
    if r2s:
        mean_r2 = tuple(float(v) for v in np.mean(np.asarray(r2s), axis=0))
    for rec in records:
        if "stat" in rec:
            stats.extend(rec["stat"])
    return MethodOutcome(
        method=method,
        tau=tau,
        r_true=r_true,
        proportions=proportions,
        mean_r_hat=mean_r_hat,
        mean_r2=mean_r2,
        stat_samples=tuple(stats),
        n_used=len(records),
        n_failed=n_failed,
    )


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def mc_result_to_dict(result: McResult, include_timing: bool = False) -> dict:
    out = {
        "spec": result.spec.to_dict(),
        "replications": result.replications,
        "outcomes": [
            {
                "method": o.method,
                "tau": o.tau,
                "r_true": o.r_true,
                "proportions": list(o.proportions) if o.proportions else None,
                "mean_r_hat": o.mean_r_hat,
                "mean_r2": list(o.mean_r2) if o.mean_r2 else None,
                "stat_samples": list(o.stat_samples),
                "n_used": o.n_used,
                "n_failed": o.n_failed,
            }
            for o in result.outcomes
        ],
        "failures": list(result.failures),
    }
    if include_timing:
        out["wall_clock"] = result.wall_clock
    return out


def _triple(o: MethodOutcome) -> str:
    return "[{:.2f} {:.2f} {:.2f}]".format(*o.proportions)


def emit_table(result: McResult, format: str = "text") -> str:
    """Render an McResult as text (table-style), CSV, or JSON."""
    if format == "json":
        return json.dumps(mc_result_to_dict(result), indent=2, sort_keys=True) + "\n"
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(
            [
                "method",
                "tau",
                "r_true",
                "p_under",
                "p_exact",
                "p_over",
                "mean_r_hat",
                "mean_r2",
                "n_used",
                "n_failed",
            ]
        )
        for o in result.outcomes:
            p = o.proportions or ("", "", "")
            writer.writerow(
                [
                    o.method,
                    "" if o.tau is None else o.tau,
                    o.r_true,
                    *p,
                    "" if o.mean_r_hat is None else f"{o.mean_r_hat:.6g}",
                    "" if o.mean_r2 is None else " ".join(f"{v:.6g}" for v in o.mean_r2),
                    o.n_used,
                    o.n_failed,
                ]
            )
        return buf.getvalue()
    if format != "text":
        raise QfactorError(f"unknown format {format!r}")

    spec = result.spec
    lines = [
        f"design={spec.name}  N={spec.N}  T={spec.T}  replications={result.replications}",
        "-" * 78,
        f"{'method':<12} {'tau':>5} {'[P(<r) P(=r) P(>r)]':>20} {'mean r_hat':>11} "
        f"{'mean R2 per factor':>24}",
    ]
    for o in result.outcomes:
        tau_s = "  -  " if o.tau is None else f"{o.tau:.2f}"
        prop_s = _triple(o) if o.proportions else ""
        rhat_s = "" if o.mean_r_hat is None else f"{o.mean_r_hat:.2f}"
        r2_s = "" if o.mean_r2 is None else " ".join(f"{v:.3f}" for v in o.mean_r2)
        lines.append(f"{o.method:<12} {tau_s:>5} {prop_s:>20} {rhat_s:>11} {r2_s:>24}")
        if o.stat_samples:
            s = np.asarray(o.stat_samples)
            lines.append(
                f"{'':<12} {'':>5} standardized stats: n={s.size} "
                f"mean={s.mean():.3f} sd={s.std(ddof=1):.3f}"
            )
    if result.failures:
        lines.append(f"failures: {len(result.failures)}")
    return "\n".join(lines) + "\n"
