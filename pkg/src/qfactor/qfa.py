"""Quantile factor analysis: joint estimation of quantile-dependent factors
and loadings by iterative quantile regression.

The estimator minimizes the mean check loss

    (1/NT) sum_i sum_t rho_tau(X_it - lambda_i' f_t)

by alternating exact convex quantile regressions: every unit's loading row
is re-solved against the current factors, then every period's factor row is
re-solved against the new loadings.  The converged fit is rotated to the
canonical normalization (F'F/T identity, loading Gram matrix diagonal with
non-increasing entries) and column signs are fixed so results are
reproducible.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ConvergenceError, DimensionError, DomainError, SingularityError
from .mathkit import check_loss, qr_solve_batch
from .panel import PanelData
from .rng import DOMAIN_RESTART, rng_stream
from .validation import panel_values

__all__ = [
    "FactorFit",
    "IqrConfig",
    "StandardizationWarning",
    "iqr_estimate",
    "objective",
    "normalize_fit",
    "fix_loading_signs",
    "semimetric_d",
    "two_stage_estimate",
    "fit_to_dict",
    "save_fit_json",
    "save_factors_csv",
    "save_loadings_csv",
    "QuantileFactorAnalysis",
]

_DIVERGENCE_BOUND = 1e6


class StandardizationWarning(UserWarning):
    """Emitted when an estimator is run on an unstandardized panel."""


@dataclass
class IqrConfig:
    """Settings for the alternating quantile-regression loop."""

    max_iterations: int = 100
    rel_tol: float = 1e-6
    restarts: int = 3
    seed: int = 0
    inner_tol: float = 1e-10
    normalize_each_iteration: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")
        if self.rel_tol <= 0 or self.inner_tol <= 0:
            raise DomainError("tolerances must be positive")
        if self.restarts < 1:
            raise DomainError("restarts must be >= 1")


@dataclass(frozen=True)
class FactorFit:
    """Estimated quantile factor structure at one quantile level.

    ``loadings`` is N x r, ``factors`` is T x r, and ``objective`` is the
    mean check loss at the returned parameters.  ``objective_trace`` records
    the objective after every full alternation; it is non-increasing because
    each half-step solves exact convex subproblems.
    """

    loadings: np.ndarray
    factors: np.ndarray
    tau: float
    r: int
    objective: float
    objective_trace: np.ndarray
    iterations: int
    converged: bool
    restarts_used: int = 1

    @property
    def N(self) -> int:
        return self.loadings.shape[0]

    @property
    def T(self) -> int:
        return self.factors.shape[0]

    def common_component(self) -> np.ndarray:
        return self.factors @ self.loadings.T


def objective(p, loadings: np.ndarray, factors: np.ndarray, tau: float) -> float:
    """Mean check loss of the panel at the given factor structure."""
    X = panel_values(p)
    loadings = np.asarray(loadings, dtype=float)
    factors = np.asarray(factors, dtype=float)
    T, N = X.shape
    if loadings.ndim != 2 or factors.ndim != 2 or loadings.shape[1] != factors.shape[1]:
        raise DimensionError("loadings and factors must be 2-D with a common factor count")
    if loadings.shape[0] != N or factors.shape[0] != T:
        raise DimensionError(
            f"panel is {T}x{N} but factors/loadings are "
            f"{factors.shape[0]}x{factors.shape[1]} / {loadings.shape[0]}x{loadings.shape[1]}"
        )
    return float(np.mean(check_loss(X - factors @ loadings.T, tau)))


def normalize_fit(loadings: np.ndarray, factors: np.ndarray):
    """Rotate a factor structure into the canonical normalization.

    Returns ``(loadings, factors, rotation)`` with F'F/T the identity and
    the loading Gram matrix diagonal with non-increasing entries; the common
    component is unchanged.  The rotation is built from the eigenvectors of
    S_F^(1/2) S_L S_F^(1/2), where S_F and S_L are the factor and loading
    Gram matrices.
    """
    L = np.asarray(loadings, dtype=float)
    F = np.asarray(factors, dtype=float)
    T = F.shape[0]
    N = L.shape[0]
    SF = F.T @ F / T
    w, V = np.linalg.eigh((SF + SF.T) / 2.0)
    if w[0] <= 1e-12 * max(w[-1], 1.0):
        raise SingularityError("factor Gram matrix F'F/T is numerically singular")
    sqrt_w = np.sqrt(w)
    SF_half = (V * sqrt_w) @ V.T
    SF_mhalf = (V / sqrt_w) @ V.T
    A = SF_half @ (L.T @ L / N) @ SF_half
    evals, G = np.linalg.eigh((A + A.T) / 2.0)
    order = np.argsort(evals, kind="stable")[::-1]
    G = G[:, order]
    H = SF_mhalf @ G
    return L @ SF_half @ G, F @ H, H


def fix_loading_signs(loadings: np.ndarray, factors: np.ndarray):
    """Flip factor/loading column pairs so each loading column's
    largest-|entry| element is positive."""
    L = np.array(loadings, dtype=float)
    F = np.array(factors, dtype=float)
    idx = np.argmax(np.abs(L), axis=0)
    flip = L[idx, np.arange(L.shape[1])] < 0
    L[:, flip] *= -1.0
    F[:, flip] *= -1.0
    return L, F


def semimetric_d(fit_a, fit_b) -> float:
    """Root-mean-square distance between the common components of two fits.

    Invariant to the rotation and sign indeterminacies of factor models;
    zero exactly when the two parameterizations describe the same panel fit.
    """
    Ca = _common(fit_a)
    Cb = _common(fit_b)
    if Ca.shape != Cb.shape:
        raise DimensionError(f"common components differ in shape: {Ca.shape} vs {Cb.shape}")
    return float(np.linalg.norm(Ca - Cb) / np.sqrt(Ca.size))


def _common(fit) -> np.ndarray:
    if isinstance(fit, FactorFit):
        return fit.common_component()
    loadings, factors = fit
    return np.asarray(factors) @ np.asarray(loadings).T


def _check_estimation_inputs(X: np.ndarray, tau: float, r: int, unit_ids) -> None:
    T, N = X.shape
    if not 0.0 < tau < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {tau}")
    if not 1 <= r <= min(N, T) // 2:
        raise DomainError(f"need 1 <= r <= min(N, T)/2 = {min(N, T) // 2}, got r={r}")
    if T * min(tau, 1.0 - tau) < r + 1:
        raise DomainError(
            f"too few effective observations: T*min(tau, 1-tau) = "
            f"{T * min(tau, 1.0 - tau):.1f} < r + 1 = {r + 1}"
        )
    for i in range(N):
        if np.unique(X[:, i]).size < r + 1:
            unit = unit_ids[i] if unit_ids else f"u{i + 1}"
            raise DomainError(f"unit {unit!r} has fewer than r + 1 = {r + 1} distinct values")


def _warn_if_unstandardized(p) -> None:
    if isinstance(p, PanelData) and not p.standardized:
        warnings.warn(
            "panel is not standardized; quantile factor estimates are scale sensitive",
            StandardizationWarning,
            stacklevel=3,
        )


def _better_rows(Ymat, design, candidate, previous, tau):
    """Per-row descent guard: keep whichever parameter row has lower loss."""
    loss_c = check_loss(Ymat - candidate @ design.T, tau).sum(axis=1)
    loss_p = check_loss(Ymat - previous @ design.T, tau).sum(axis=1)
    keep_prev = loss_p < loss_c
    if np.any(keep_prev):
        candidate = candidate.copy()
        candidate[keep_prev] = previous[keep_prev]
    return candidate


def _random_orthonormal_factors(T: int, r: int, rng: np.random.Generator) -> np.ndarray:
    Q, _ = np.linalg.qr(rng.standard_normal((T, r)))
    return Q * np.sqrt(T)


def _alternate(X: np.ndarray, F0: np.ndarray, tau: float, cfg: IqrConfig):
    """One start of the alternating quantile-regression loop."""
    T, N = X.shape
    Xt = np.ascontiguousarray(X.T)
    F = F0
    L = None
    obj_prev = None
    trace = []
    converged = False
    for _ in range(cfg.max_iterations):
        Lc, _, _ = qr_solve_batch(Xt, F, tau, tol=cfg.inner_tol)
        L = Lc if L is None else _better_rows(Xt, F, Lc, L, tau)
        Fc, _, _ = qr_solve_batch(X, L, tau, tol=cfg.inner_tol)
        F = _better_rows(X, L, Fc, F, tau)
        if max(np.abs(L).max(), np.abs(F).max()) > _DIVERGENCE_BOUND:
            raise ConvergenceError(
                "alternating quantile regression diverged", best=(L, F, trace)
            )
        if cfg.normalize_each_iteration:
            L, F, _ = normalize_fit(L, F)
        obj = float(np.mean(check_loss(X - F @ L.T, tau)))
        trace.append(obj)
        if obj_prev is not None and obj_prev - obj < cfg.rel_tol * max(obj_prev, 1e-12):
            converged = True
            break
        obj_prev = obj
    return L, F, np.asarray(trace), converged


def iqr_estimate(p, tau: float, r: int, cfg: IqrConfig | None = None) -> FactorFit:
    """Estimate r quantile factors and loadings at level tau.

    Runs ``cfg.restarts`` independent random starts (factors drawn standard
    normal and orthonormalized) and returns the fit with the smallest
    objective, rotated to the canonical normalization with signs fixed.
    """
    cfg = cfg or IqrConfig()
    X = panel_values(p)
    _warn_if_unstandardized(p)
    _check_estimation_inputs(X, tau, r, p.unit_ids if isinstance(p, PanelData) else None)
    T, N = X.shape

    best = None
    any_converged = False
    for j in range(cfg.restarts):
        rng = rng_stream(cfg.seed, j, DOMAIN_RESTART)
        F0 = _random_orthonormal_factors(T, r, rng)
        L, F, trace, converged = _alternate(X, F0, tau, cfg)
        any_converged = any_converged or converged
        if best is None or trace[-1] < best[2][-1]:
            best = (L, F, trace, converged)
    L, F, trace, converged = best

    L, F, _ = normalize_fit(L, F)
    L, F = fix_loading_signs(L, F)
    return FactorFit(
        loadings=L,
        factors=F,
        tau=tau,
        r=r,
        objective=float(np.mean(check_loss(X - F @ L.T, tau))),
        objective_trace=trace,
        iterations=len(trace),
        converged=converged,
        restarts_used=cfg.restarts,
    )


def two_stage_estimate(p, tau: float, r: int, inner_tol: float = 1e-10) -> FactorFit:
    """Two-stage estimator for designs whose factors do not vary with tau.

    Stage one extracts r principal-component factors (shared across all
    quantiles); stage two runs one quantile regression per unit on those
    factors.  No alternation, and no re-rotation: the factors stay exactly
    the principal-component ones, so the loading Gram matrix is generally
    not diagonal.
    """
    from .pca import pca_estimate

    X = panel_values(p)
    _warn_if_unstandardized(p)
    _check_estimation_inputs(X, tau, r, p.unit_ids if isinstance(p, PanelData) else None)
    F = pca_estimate(p, r).factors
    L, _, _ = qr_solve_batch(np.ascontiguousarray(X.T), F, tau, tol=inner_tol)
    obj = float(np.mean(check_loss(X - F @ L.T, tau)))
    return FactorFit(
        loadings=L,
        factors=F,
        tau=tau,
        r=r,
        objective=obj,
        objective_trace=np.asarray([obj]),
        iterations=0,
        converged=True,
        restarts_used=1,
    )


def _iqr_least_squares(X: np.ndarray, r: int, seed: int = 0, max_iterations: int = 5000):
    """Alternation with squared loss instead of check loss (test hook).

    With least-squares inner solves the loop is the classical orthogonal
    iteration, so its normalized fixed point must match the
    principal-component factors.
    """
    T, N = X.shape
    rng = rng_stream(seed, 0, DOMAIN_RESTART)
    F = _random_orthonormal_factors(T, r, rng)
    prev = None
    for _ in range(max_iterations):
        L = X.T @ F @ np.linalg.inv(F.T @ F)
        F = X @ L @ np.linalg.inv(L.T @ L)
        C = F @ L.T
        if prev is not None and np.linalg.norm(C - prev) <= 1e-14 * max(np.linalg.norm(C), 1.0):
            break
        prev = C
    L, F, _ = normalize_fit(L, F)
    return fix_loading_signs(L, F)


# ---------------------------------------------------------------------------
# fit serialization
# ---------------------------------------------------------------------------


def fit_to_dict(fit: FactorFit) -> dict:
    return {
        "tau": fit.tau,
        "r": fit.r,
        "objective": fit.objective,
        "converged": fit.converged,
        "loadings": fit.loadings.tolist(),
        "factors": fit.factors.tolist(),
    }


def save_fit_json(fit: FactorFit, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fit_to_dict(fit), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_matrix_csv(M: np.ndarray, path, row_ids, id_header: str, col_prefix: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([id_header, *(f"{col_prefix}{j + 1}" for j in range(M.shape[1]))])
        for label, row in zip(row_ids, M):
            writer.writerow([label, *(f"{v:.17g}" for v in row)])


def save_factors_csv(fit: FactorFit, path, time_ids=None) -> None:
    ids = time_ids or [f"t{t + 1}" for t in range(fit.T)]
    _write_matrix_csv(fit.factors, path, ids, "time", "factor")


def save_loadings_csv(fit: FactorFit, path, unit_ids=None) -> None:
    ids = unit_ids or [f"u{i + 1}" for i in range(fit.N)]
    _write_matrix_csv(fit.loadings, path, ids, "unit", "loading")


# ---------------------------------------------------------------------------
# scikit-learn estimator wrapper
# ---------------------------------------------------------------------------


class QuantileFactorAnalysis(BaseEstimator, TransformerMixin):
    """Quantile factor extraction with the scikit-learn estimator API.

    Parameters mirror :class:`IqrConfig` plus the quantile level and factor
    count.  ``fit`` expects a T x N panel (time in rows); ``transform`` maps
    new periods to factor space by per-period quantile regression on the
    fitted loadings.

    Attributes
    ----------
    factors_ : ndarray, shape (T, n_factors)
    loadings_ : ndarray, shape (N, n_factors)
    objective_ : float
    converged_ : bool
    """

    def __init__(
        self,
        tau: float = 0.5,
        n_factors: int = 1,
        max_iterations: int = 100,
        rel_tol: float = 1e-6,
        restarts: int = 3,
        seed: int = 0,
        inner_tol: float = 1e-10,
        normalize_each_iteration: bool = False,
    ):
        self.tau = tau
        self.n_factors = n_factors
        self.max_iterations = max_iterations
        self.rel_tol = rel_tol
        self.restarts = restarts
        self.seed = seed
        self.inner_tol = inner_tol
        self.normalize_each_iteration = normalize_each_iteration

    def _config(self) -> IqrConfig:
        return IqrConfig(
            max_iterations=self.max_iterations,
            rel_tol=self.rel_tol,
            restarts=self.restarts,
            seed=self.seed,
            inner_tol=self.inner_tol,
            normalize_each_iteration=self.normalize_each_iteration,
        )

    def fit(self, X, y=None):
        fit = iqr_estimate(X, self.tau, self.n_factors, self._config())
        self.fit_result_ = fit
        self.loadings_ = fit.loadings
        self.factors_ = fit.factors
        self.objective_ = fit.objective
        self.objective_trace_ = fit.objective_trace
        self.n_iterations_ = fit.iterations
        self.converged_ = fit.converged
        return self

    def transform(self, X):
        """Quantile-regress each period's cross-section on the fitted loadings."""
        values = panel_values(X)
        F, _, _ = qr_solve_batch(values, self.loadings_, self.tau, tol=self.inner_tol)
        return F

    def fit_transform(self, X, y=None):
        return self.fit(X).factors_

    def inverse_transform(self, F):
        return np.asarray(F) @ self.loadings_.T
