"""Principal-component factor estimation and the squared-residual volatility proxy.

Mean factors are estimated as sqrt(T) times the leading eigenvectors of
X X' (computed from the smaller of the two Gram matrices), the classical
least-squares counterpart of the quantile estimators in :mod:`qfactor.qfa`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import DimensionError, ZeroVolatilityError
from .mathkit import fix_vector_signs
from .validation import panel_values

__all__ = ["PcaFit", "pca_estimate", "pca_sq_volatility", "PrincipalComponentFactors"]


@dataclass(frozen=True)
class PcaFit:
    """Least-squares factor fit: factors (T x r), loadings (N x r), and the
    full spectrum of X X' / (N T) sorted non-increasing."""

    factors: np.ndarray
    loadings: np.ndarray
    eigenvalues: np.ndarray
    r: int

    def common_component(self) -> np.ndarray:
        return self.factors @ self.loadings.T


def pca_estimate(p, r: int) -> PcaFit:
    """Estimate r mean factors by principal components.

    Factors are sqrt(T) times the top-r eigenvectors of X X', loadings are
    X'F/T, and the reported eigenvalues are the full nonzero-candidate
    spectrum of X X' / (N T).
    """
    X = panel_values(p)
    T, N = X.shape
    if not 1 <= r <= min(N, T):
        raise DimensionError(f"need 1 <= r <= min(N, T) = {min(N, T)}, got r={r}")

    if T <= N:
        w, U = np.linalg.eigh(X @ X.T)
        order = np.argsort(w, kind="stable")[::-1]
        w = w[order]
        U = U[:, order]
    else:
        w, V = np.linalg.eigh(X.T @ X)
        order = np.argsort(w, kind="stable")[::-1]
        w = w[order]
        V = V[:, order]
        # map eigenvectors of X'X to those of X X'
        safe = np.sqrt(np.maximum(w, 1e-300))
        U = (X @ V) / safe
    U = fix_vector_signs(U[:, :r])
    factors = np.sqrt(T) * U
    loadings = X.T @ factors / T
    eigenvalues = np.maximum(w[: min(N, T)], 0.0) / (N * T)
    return PcaFit(factors=factors, loadings=loadings, eigenvalues=eigenvalues, r=r)


def pca_sq_volatility(p, r_mean: int = 8) -> np.ndarray:
    """Volatility-factor proxy from squared residuals.

    Projects out ``r_mean`` principal-component factors from every unit,
    averages the squared residuals cross-sectionally per period, and scales
    the resulting series to unit length.
    """
    X = panel_values(p)
    if r_mean < 1:
        raise DimensionError(f"r_mean must be >= 1, got {r_mean}")
    fit = pca_estimate(p, r_mean)
    resid = X - fit.common_component()
    vol = np.mean(resid**2, axis=1)
    norm = np.linalg.norm(vol)
    if norm <= 0.0:
        raise ZeroVolatilityError("panel has no residual variation after the mean factors")
    return vol / norm


class PrincipalComponentFactors(BaseEstimator, TransformerMixin):
    """Principal-component factor extraction with the scikit-learn API.

    Parameters
    ----------
    n_factors : int
        Number of factors to extract.

    Attributes
    ----------
    factors_ : ndarray, shape (T, n_factors)
    loadings_ : ndarray, shape (N, n_factors)
    eigenvalues_ : ndarray
        Spectrum of X X' / (N T), non-increasing.
    """

    def __init__(self, n_factors: int = 1):
        self.n_factors = n_factors

    def fit(self, X, y=None):
        fit = pca_estimate(X, self.n_factors)
        self.fit_result_ = fit
        self.factors_ = fit.factors
        self.loadings_ = fit.loadings
        self.eigenvalues_ = fit.eigenvalues
        return self

    def transform(self, X):
        """Factors for new periods: least-squares projection on the loadings."""
        values = panel_values(X)
        L = self.loadings_
        return values @ L @ np.linalg.inv(L.T @ L)

    def inverse_transform(self, F):
        return np.asarray(F) @ self.loadings_.T
