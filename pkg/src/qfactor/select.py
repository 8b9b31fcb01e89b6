"""Estimators of the number of factors.

Two quantile-based procedures (rank thresholding of the loading Gram
matrix, and a penalized-objective information criterion) plus three
least-squares baselines (the classic PC_p1 / IC_p1 criteria and the
eigenvalue-ratio estimator).
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, DomainError
from .pca import pca_estimate
from .qfa import IqrConfig, iqr_estimate
from .validation import panel_values

__all__ = [
    "SelectionResult",
    "rank_min_threshold",
    "select_rank_min",
    "select_ic_qfa",
    "select_pc_p1",
    "select_ic_p1",
    "select_eigen_ratio",
    "selection_to_dict",
]

_METHODS = ("rank_min", "ic_qfa", "pc_p1", "ic_p1", "eigen_ratio")


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of a factor-number estimator.

    ``diagnostics`` carries the scalars the decision was computed from
    (loading Gram diagonal, criterion values, or eigenvalue ratios), so
    ``r_hat`` is exactly reproducible from this record.
    """

    method: str
    r_hat: int
    k_max: int
    diagnostics: np.ndarray
    threshold: float | None = None
    tau: float | None = None


def selection_to_dict(result: SelectionResult) -> dict:
    out = {
        "method": result.method,
        "r_hat": result.r_hat,
        "k_max": result.k_max,
        "diagnostics": np.asarray(result.diagnostics).tolist(),
    }
    if result.threshold is not None:
        out["threshold"] = result.threshold
    if result.tau is not None:
        out["tau"] = result.tau
    return out


def save_selection_json(result: SelectionResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(selection_to_dict(result), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _check_k(k: int) -> None:
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")


def rank_min_threshold(sigma_top: float, N: int, T: int) -> float:
    """Threshold sigma_top * min(N, T)^(-1/3) for the rank estimator."""
    return sigma_top * float(min(N, T)) ** (-1.0 / 3.0)


def select_rank_min(p, tau: float, k: int = 8, cfg: IqrConfig | None = None) -> SelectionResult:
    """Count loading-Gram diagonal entries of a k-factor fit above the threshold.

    Fits k (> expected r) quantile factors, reads off the diagonal of
    L'L/N (non-increasing by normalization), and counts the entries above
    ``sigma_1 * min(N, T)^(-1/3)``.  One fit only, which is what makes this
    the cheap selector.
    """
    _check_k(k)
    X = panel_values(p)
    T, N = X.shape
    fit = iqr_estimate(p, tau, k, cfg)
    diag = np.einsum("ij,ij->j", fit.loadings, fit.loadings) / N
    threshold = rank_min_threshold(diag[0], N, T)
    r_hat = int(np.sum(diag > threshold))
    return SelectionResult(
        method="rank_min", r_hat=r_hat, k_max=k, diagnostics=diag, threshold=threshold, tau=tau
    )


def select_ic_qfa(
    p,
    tau: float,
    k: int = 8,
    penalty: float | str = "rank_scale",
    cfg: IqrConfig | None = None,
) -> SelectionResult:
    """Penalized-objective selector: argmin over l of M(l) + l * penalty.

    Fits the model for every l = 1..k.  ``penalty`` is either a number, the
    default "rank_scale" (the same sigma_1 * min(N, T)^(-1/3) scale as the
    rank estimator, computed from the k-factor fit), or "nt_log" for
    log(NT/(N+T)) * (N+T)/(NT).
    """
    _check_k(k)
    X = panel_values(p)
    T, N = X.shape
    fits = [iqr_estimate(p, tau, l, cfg) for l in range(1, k + 1)]
    objectives = np.asarray([f.objective for f in fits])

    if penalty == "rank_scale":
        diag_k = np.einsum("ij,ij->j", fits[-1].loadings, fits[-1].loadings) / N
        pen = rank_min_threshold(diag_k[0], N, T)
    elif penalty == "nt_log":
        pen = np.log(N * T / (N + T)) * (N + T) / (N * T)
    elif isinstance(penalty, str):
        raise DomainError(f"unknown penalty {penalty!r}")
    else:
        pen = float(penalty)
        if pen <= 0:
            raise DomainError("penalty must be positive")

    criteria = objectives + pen * np.arange(1, k + 1)
    r_hat = int(np.argmin(criteria)) + 1
    return SelectionResult(
        method="ic_qfa", r_hat=r_hat, k_max=k, diagnostics=criteria, threshold=pen, tau=tau
    )


def _pca_residual_variances(X: np.ndarray, k: int) -> np.ndarray:
    """V(l) = mean squared residual after l principal-component factors."""
    T, N = X.shape
    fit = pca_estimate(X, min(k, min(N, T)))
    total = float(np.mean(X**2))
    # V(l) = V(0) - sum of the first l eigenvalues of XX'/(NT)
    V = total - np.cumsum(fit.eigenvalues[:k])
    return np.maximum(V, 0.0)


def select_pc_p1(p, k: int = 8) -> SelectionResult:
    """Least-squares PC_p1 criterion: V(l) + l * V(k) * g(N, T)."""
    _check_k(k)
    X = panel_values(p)
    T, N = X.shape
    V = _pca_residual_variances(X, k)
    g = (N + T) / (N * T) * np.log(N * T / (N + T))
    criteria = V + V[-1] * g * np.arange(1, k + 1)
    r_hat = int(np.argmin(criteria)) + 1
    return SelectionResult(method="pc_p1", r_hat=r_hat, k_max=k, diagnostics=criteria)


def select_ic_p1(p, k: int = 8) -> SelectionResult:
    """Least-squares IC_p1 criterion: log V(l) + l * g(N, T)."""
    _check_k(k)
    X = panel_values(p)
    T, N = X.shape
    V = _pca_residual_variances(X, k)
    if np.any(V <= 0):
        # exact fit at some l: criterion is -inf there, pick the smallest such l
        r_hat = int(np.argmax(V <= 0)) + 1
        return SelectionResult(
            method="ic_p1", r_hat=r_hat, k_max=k, diagnostics=np.where(V > 0, V, 0.0)
        )
    g = (N + T) / (N * T) * np.log(N * T / (N + T))
    criteria = np.log(V) + g * np.arange(1, k + 1)
    r_hat = int(np.argmin(criteria)) + 1
    return SelectionResult(method="ic_p1", r_hat=r_hat, k_max=k, diagnostics=criteria)


def select_eigen_ratio(p, k: int = 8) -> SelectionResult:
    """r_hat = argmax over j <= k of the eigenvalue ratio rho_j / rho_{j+1}.

    Ratios whose denominator falls below 1e-12 times the top eigenvalue are
    treated as unavailable; ties break at the smallest j.
    """
    _check_k(k)
    X = panel_values(p)
    T, N = X.shape
    if k + 1 > min(N, T):
        raise DimensionError(f"need k + 1 <= min(N, T), got k={k}")
    eig = pca_estimate(X, 1).eigenvalues
    top = eig[: k + 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = top[:-1] / top[1:]
    valid = top[1:] >= 1e-12 * eig[0]
    ratios = np.where(valid, ratios, -np.inf)
    if not np.any(valid):
        raise DomainError("all candidate eigenvalue ratios are degenerate")
    r_hat = int(np.argmax(ratios)) + 1
    return SelectionResult(method="eigen_ratio", r_hat=r_hat, k_max=k, diagnostics=ratios)
