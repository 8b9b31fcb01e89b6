"""Self-contained numerical kernels.

Check and smoothed check losses, the compact-support kernels used for
smoothing and for density-weighted covariance estimation, a symmetric
eigendecomposition with a fixed sign convention, adjusted R-squared, and
the inner quantile-regression solver that every estimator in the package
relies on.

The quantile-regression subproblem

    min_b (1/T) sum_t rho_tau(y_t - z_t' b)

is solved as a bounded-variable LP via a primal-dual interior-point method
(Mehrotra predictor-corrector on the quantile-regression dual).  Batches of
problems sharing one design matrix are compiled with numba, which is what
makes the alternating estimators affordable at Monte Carlo scale.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from numba import njit

from .exceptions import ConvergenceError, DomainError, RankError, SymmetryError

__all__ = [
    "check_loss",
    "smoothed_loss",
    "kernel_k8",
    "kernel_k8_prime",
    "kernel_k8_tail",
    "kernel_epanechnikov",
    "EigenDecomposition",
    "sym_eig",
    "ols_r2",
    "QrSolveResult",
    "qr_solve",
    "qr_solve_batch",
]

# ---------------------------------------------------------------------------
# losses and kernels
# ---------------------------------------------------------------------------

_C8 = 3465.0 / 8192.0


def check_loss(u, tau: float):
    """Check (pinball) loss rho_tau(u) = (tau - 1{u <= 0}) * u."""
    _require_tau(tau)
    u = np.asarray(u, dtype=float)
    out = np.where(u > 0, tau * u, (tau - 1.0) * u)
    return out if out.ndim else float(out)


def _require_tau(tau: float) -> None:
    if not 0.0 < tau < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {tau}")


def kernel_k8(z):
    """Eighth-order smoothing kernel on [-1, 1].

    Polynomial kernel with unit mass, vanishing moments of orders 1..7 and
    a non-zero eighth moment; it takes negative values, as any kernel of
    order above two must.
    """
    z = np.asarray(z, dtype=float)
    z2 = z * z
    poly = 7.0 + z2 * (-105.0 + z2 * (462.0 + z2 * (-858.0 + z2 * (715.0 - 221.0 * z2))))
    out = np.where(np.abs(z) <= 1.0, _C8 * poly, 0.0)
    return out if out.ndim else float(out)


def kernel_k8_prime(z):
    """Derivative of :func:`kernel_k8`."""
    z = np.asarray(z, dtype=float)
    z2 = z * z
    poly = z * (-210.0 + z2 * (1848.0 + z2 * (-5148.0 + z2 * (5720.0 - 2210.0 * z2))))
    out = np.where(np.abs(z) <= 1.0, _C8 * poly, 0.0)
    return out if out.ndim else float(out)


def _k8_antiderivative(z):
    # odd primitive of kernel_k8 with P(0) = 0; P(1) = 1/2 exactly
    z2 = z * z
    poly = 7.0 + z2 * (
        -35.0
        + z2 * (462.0 / 5.0 + z2 * (-858.0 / 7.0 + z2 * (715.0 / 9.0 - (221.0 / 11.0) * z2)))
    )
    return _C8 * z * poly


def kernel_k8_tail(z):
    """Right-tail weight K(z) = 1 - integral of kernel_k8 over [-1, z].

    Equals 1 left of the support, 0 right of it; computed from the closed-form
    polynomial antiderivative.
    """
    z = np.asarray(z, dtype=float)
    inner = 0.5 - _k8_antiderivative(np.clip(z, -1.0, 1.0))
    out = np.where(z < -1.0, 1.0, np.where(z > 1.0, 0.0, inner))
    return out if out.ndim else float(out)


def kernel_epanechnikov(z):
    """Epanechnikov kernel 0.75 (1 - z^2) on [-1, 1]."""
    z = np.asarray(z, dtype=float)
    out = np.where(np.abs(z) <= 1.0, 0.75 * (1.0 - z * z), 0.0)
    return out if out.ndim else float(out)


def smoothed_loss(u, tau: float, h: float):
    """Kernel-smoothed check loss and its first two derivatives.

    Returns ``(loss, d1, d2)`` where ``loss(u) = [tau - K(u/h)] * u`` with K
    the tail weight of the eighth-order kernel.  Outside [-h, h] the loss
    coincides exactly with the check loss and d2 is 0.
    """
    _require_tau(tau)
    if h <= 0:
        raise DomainError(f"bandwidth must be positive, got {h}")
    u = np.asarray(u, dtype=float)
    z = u / h
    K = kernel_k8_tail(z)
    k = kernel_k8(z)
    loss = (tau - K) * u
    d1 = tau - K + z * k
    d2 = (2.0 * k + z * kernel_k8_prime(z)) / h
    if loss.ndim:
        return loss, d1, d2
    return float(loss), float(d1), float(d2)


# ---------------------------------------------------------------------------
# dense linear algebra helpers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues sorted non-increasing with matching orthonormal vectors."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def fix_vector_signs(V: np.ndarray) -> np.ndarray:
    """Flip column signs so each column's largest-|entry| element is >= 0."""
    V = np.array(V, dtype=float)
    idx = np.argmax(np.abs(V), axis=0)
    flip = V[idx, np.arange(V.shape[1])] < 0
    V[:, flip] *= -1.0
    return V


def sym_eig(A: np.ndarray) -> EigenDecomposition:
    """Full eigendecomposition of a symmetric matrix.

    Eigenvalues come back sorted non-increasing; each eigenvector's
    largest-magnitude entry is made non-negative so the decomposition is
    reproducible.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {A.shape}")
    scale = np.linalg.norm(A)
    if scale > 0 and np.linalg.norm(A - A.T) >= 1e-10 * scale:
        raise SymmetryError("matrix is not symmetric within tolerance")
    w, V = np.linalg.eigh(A)
    order = np.argsort(w, kind="stable")[::-1]
    return EigenDecomposition(eigenvalues=w[order], eigenvectors=fix_vector_signs(V[:, order]))


def ols_r2(y: np.ndarray, Z: np.ndarray) -> float:
    """Adjusted R-squared of the least-squares fit of y on (intercept, Z)."""
    y = np.asarray(y, dtype=float).ravel()
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    T, d = Z.shape
    if y.size != T:
        raise DomainError(f"y has {y.size} rows but Z has {T}")
    if T <= d + 1:
        raise DomainError(f"need T > d + 1, got T={T}, d={d}")
    X = np.column_stack([np.ones(T), Z])
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise RankError("regressor matrix (with intercept) is rank deficient")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    tss = np.sum((y - y.mean()) ** 2)
    if tss <= 0:
        raise RankError("response is constant; R-squared undefined")
    r2 = 1.0 - np.sum(resid**2) / tss
    return 1.0 - (1.0 - r2) * (T - 1) / (T - d - 1)


# ---------------------------------------------------------------------------
# inner quantile-regression solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QrSolveResult:
    """Solution of one inner quantile-regression problem."""

    coefficients: np.ndarray
    objective: float
    converged: bool
    iterations: int


@njit(cache=True)
def _chol_solve(M, g):
    """Solve M x = g for symmetric positive definite M (small, dense)."""
    d = M.shape[0]
    L = M.copy()
    for a in range(d):
        for b in range(a):
            acc = L[a, b]
            for k in range(b):
                acc -= L[a, k] * L[b, k]
            L[a, b] = acc / L[b, b]
        acc = L[a, a]
        for k in range(a):
            acc -= L[a, k] * L[a, k]
        if acc <= 1e-300:
            acc = 1e-300
        L[a, a] = np.sqrt(acc)
    x = np.empty(d)
    for a in range(d):
        acc = g[a]
        for k in range(a):
            acc -= L[a, k] * x[k]
        x[a] = acc / L[a, a]
    for a in range(d - 1, -1, -1):
        acc = x[a]
        for k in range(a + 1, d):
            acc -= L[k, a] * x[k]
        x[a] = acc / L[a, a]
    return x


@njit(cache=True)
def _qr_ip_many(Y, Z, PZ, tau, tol, max_iter):
    """Interior-point solve of m quantile regressions sharing the design Z.

    Y is (m, T), Z is (T, d), PZ is the (d, T) least-squares projector used
    for warm starts.  Returns coefficients (m, d), iteration counts, and
    convergence flags.  The dual LP per problem is
    max { y'a : Z'a = (1 - tau) Z'1, a in [0, 1]^T }, and the regression
    coefficients are recovered from the equality multipliers.
    """
    m, T = Y.shape
    d = Z.shape[1]
    B = np.empty((m, d))
    iters = np.zeros(m, dtype=np.int64)
    ok = np.zeros(m, dtype=np.bool_)
    eta = 0.99995

    bvec = np.empty(d)
    for a in range(d):
        acc = 0.0
        for t in range(T):
            acc += Z[t, a]
        bvec[a] = (1.0 - tau) * acc

    x = np.empty(T)
    s = np.empty(T)
    z = np.empty(T)
    w = np.empty(T)
    zx = np.empty(T)
    ws = np.empty(T)
    qinv = np.empty(T)
    rhs = np.empty(T)
    dx = np.empty(T)
    dz = np.empty(T)
    dw = np.empty(T)
    tz = np.empty(T)
    tw = np.empty(T)
    M = np.empty((d, d))
    g = np.empty(d)
    rp = np.empty(d)
    yd = np.empty(d)

    for j in range(m):
        y = Y[j]
        for t in range(T):
            x[t] = 1.0 - tau
            s[t] = tau
        for a in range(d):
            acc = 0.0
            for t in range(T):
                acc += PZ[a, t] * y[t]
            yd[a] = -acc
        sab = 0.0
        for t in range(T):
            acc = -y[t]
            for a in range(d):
                acc -= Z[t, a] * yd[a]
            rhs[t] = acc
            sab += abs(acc)
        eps0 = 1e-5 + 0.1 * sab / T
        for t in range(T):
            base = rhs[t] if rhs[t] > 0.0 else 0.0
            z[t] = base + eps0
            w[t] = z[t] - rhs[t]

        niter = 0
        converged = False
        for _ in range(max_iter):
            gap = 0.0
            for t in range(T):
                gap += x[t] * z[t] + s[t] * w[t]
            if gap < tol * T:
                converged = True
                break
            niter += 1
            mu = gap / (2.0 * T)

            for t in range(T):
                zx[t] = z[t] / x[t]
                ws[t] = w[t] / s[t]
                qinv[t] = 1.0 / (zx[t] + ws[t])
            for a in range(d):
                acc = 0.0
                for t in range(T):
                    acc += Z[t, a] * x[t]
                rp[a] = bvec[a] - acc
            for a in range(d):
                for b in range(a + 1):
                    acc = 0.0
                    for t in range(T):
                        acc += qinv[t] * Z[t, a] * Z[t, b]
                    M[a, b] = acc
                    M[b, a] = acc

            # affine direction; rhs holds rd + z - w = c - Z yd
            for t in range(T):
                acc = -y[t]
                for a in range(d):
                    acc -= Z[t, a] * yd[a]
                rhs[t] = acc
            for a in range(d):
                acc = rp[a]
                for t in range(T):
                    acc += Z[t, a] * qinv[t] * rhs[t]
                g[a] = acc
            dy = _chol_solve(M, g)
            ap = 1e300
            ad = 1e300
            for t in range(T):
                acc = 0.0
                for a in range(d):
                    acc += Z[t, a] * dy[a]
                dxt = qinv[t] * (acc - rhs[t])
                dx[t] = dxt
                dzt = -z[t] - zx[t] * dxt
                dwt = -w[t] + ws[t] * dxt
                dz[t] = dzt
                dw[t] = dwt
                if dxt < 0.0:
                    v = x[t] / -dxt
                    if v < ap:
                        ap = v
                elif dxt > 0.0:
                    v = s[t] / dxt
                    if v < ap:
                        ap = v
                if dzt < 0.0:
                    v = z[t] / -dzt
                    if v < ad:
                        ad = v
                if dwt < 0.0:
                    v = w[t] / -dwt
                    if v < ad:
                        ad = v
            if ap > 1.0:
                ap = 1.0
            if ad > 1.0:
                ad = 1.0
            mu_aff = 0.0
            for t in range(T):
                mu_aff += (x[t] + ap * dx[t]) * (z[t] + ad * dz[t])
                mu_aff += (s[t] - ap * dx[t]) * (w[t] + ad * dw[t])
            mu_aff /= 2.0 * T
            sigma = (mu_aff / mu) ** 3
            if sigma > 1.0:
                sigma = 1.0

            # corrector with second-order complementarity terms
            smu = sigma * mu
            for t in range(T):
                tz[t] = smu - dx[t] * dz[t]
                tw[t] = smu + dx[t] * dw[t]
                rhs[t] = rhs[t] - tz[t] / x[t] + tw[t] / s[t]
            for a in range(d):
                acc = rp[a]
                for t in range(T):
                    acc += Z[t, a] * qinv[t] * rhs[t]
                g[a] = acc
            dy = _chol_solve(M, g)
            ap = 1e300
            ad = 1e300
            for t in range(T):
                acc = 0.0
                for a in range(d):
                    acc += Z[t, a] * dy[a]
                dxt = qinv[t] * (acc - rhs[t])
                dx[t] = dxt
                dzt = -z[t] + tz[t] / x[t] - zx[t] * dxt
                dwt = -w[t] + tw[t] / s[t] + ws[t] * dxt
                dz[t] = dzt
                dw[t] = dwt
                if dxt < 0.0:
                    v = x[t] / -dxt
                    if v < ap:
                        ap = v
                elif dxt > 0.0:
                    v = s[t] / dxt
                    if v < ap:
                        ap = v
                if dzt < 0.0:
                    v = z[t] / -dzt
                    if v < ad:
                        ad = v
                if dwt < 0.0:
                    v = w[t] / -dwt
                    if v < ad:
                        ad = v
            ap = eta * ap
            ad = eta * ad
            if ap > 1.0:
                ap = 1.0
            if ad > 1.0:
                ad = 1.0
            for t in range(T):
                xv = x[t] + ap * dx[t]
                if xv < 1e-14:
                    xv = 1e-14
                elif xv > 1.0 - 1e-14:
                    xv = 1.0 - 1e-14
                x[t] = xv
                s[t] = 1.0 - xv
                zv = z[t] + ad * dz[t]
                z[t] = zv if zv > 1e-14 else 1e-14
                wv = w[t] + ad * dw[t]
                w[t] = wv if wv > 1e-14 else 1e-14
            for a in range(d):
                yd[a] += ad * dy[a]

        for a in range(d):
            B[j, a] = -yd[a]
        iters[j] = niter
        ok[j] = converged
    return B, iters, ok


def _check_design(Z: np.ndarray) -> np.ndarray:
    Z = np.ascontiguousarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    T, d = Z.shape
    if d < 1 or T < d:
        raise DomainError(f"need T >= d >= 1, got T={T}, d={d}")
    sv = np.linalg.svd(Z, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise RankError("design matrix is rank deficient")
    return Z


def qr_solve_batch(Y, Z, tau: float, tol: float = 1e-10, max_iter: int = 60):
    """Solve many quantile regressions sharing one design matrix.

    Parameters
    ----------
    Y : ndarray, shape (m, T)
        One response vector per row.
    Z : ndarray, shape (T, d)
        Common full-column-rank design.

    Returns
    -------
    B : ndarray, shape (m, d); iterations : ndarray; converged : ndarray of bool
    """
    _require_tau(tau)
    Z = _check_design(Z)
    Y = np.ascontiguousarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[None, :]
    if Y.shape[1] != Z.shape[0]:
        raise DomainError(f"responses have {Y.shape[1]} rows but design has {Z.shape[0]}")
    PZ = np.ascontiguousarray(np.linalg.solve(Z.T @ Z, Z.T))
    return _qr_ip_many(Y, Z, PZ, float(tau), float(tol), int(max_iter))


def _vertex_polish(y, Z, tau, b0, obj0):
    """Deterministically refine an interior-point solution toward an LP vertex.

    Quantile-regression optima interpolate d observations; try exact
    interpolation of small-residual subsets and keep the best objective.
    """
    T, d = Z.shape
    resid = y - Z @ b0
    order = np.argsort(np.abs(resid), kind="stable")
    pool = order[: min(T, d + 3)] if d <= 3 else order[:d]
    best_b, best_obj = b0, obj0
    for subset in itertools.combinations(sorted(pool.tolist()), d):
        sub = Z[list(subset)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        cand = np.linalg.solve(sub, y[list(subset)])
        obj = float(np.mean(check_loss(y - Z @ cand, tau)))
        if obj < best_obj:
            best_obj = obj
            best_b = cand
    return best_b, best_obj


def qr_solve(
    y,
    Z,
    tau: float,
    tol: float = 1e-10,
    max_iter: int = 60,
    polish: bool = True,
) -> QrSolveResult:
    """Solve one quantile regression to LP-optimum accuracy.

    Raises ConvergenceError (carrying the best iterate) if the interior
    point iteration hits its cap without closing the duality gap.
    """
    y = np.asarray(y, dtype=float).ravel()
    B, iters, ok = qr_solve_batch(y, Z, tau, tol=tol, max_iter=max_iter)
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    b = B[0]
    obj = float(np.mean(check_loss(y - Z @ b, tau)))
    if polish:
        b, obj = _vertex_polish(y, Z, tau, b, obj)
    result = QrSolveResult(
        coefficients=b, objective=obj, converged=bool(ok[0]), iterations=int(iters[0])
    )
    if not result.converged:
        raise ConvergenceError(
            f"quantile regression did not converge in {max_iter} iterations", best=result
        )
    return result
