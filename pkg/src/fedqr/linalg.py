"""Dense linear algebra: the three centralized QR algorithms, triangular
solves and a small Jacobi SVD.

Matrices are plain 2-D ``float64`` numpy arrays; :func:`as_matrix` is the
validating constructor used at every public entry point.  These routines
double as ground-truth oracles for the federated protocols, so they follow
the textbook formulations literally rather than calling LAPACK.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    DegeneratePair,
    IndexOutOfRange,
    NotSquare,
    RankDeficient,
    SingularDiagonal,
    ZeroColumn,
)

JACOBI_TOL = 1e-14
JACOBI_MAX_SWEEPS = 30


def as_matrix(a, *, copy: bool = True) -> np.ndarray:
    """Return `a` as a finite 2-D float64 array with at least one row and column."""
    m = np.array(a, dtype=np.float64) if copy else np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains NaN or Inf")
    return m


def rank_tolerance(a: np.ndarray) -> float:
    return 1e-12 * max(a.shape) * np.linalg.norm(a, np.inf)


def sgn(x: float) -> float:
    # sgn(0) = +1 so a zero leading entry still yields a valid reflector
    return -1.0 if x < 0 else 1.0


@dataclass
class QrFactorization:
    q: Optional[np.ndarray]
    r: np.ndarray

    def __iter__(self):
        yield self.q
        yield self.r


def normalize_signs(q: Optional[np.ndarray], r: np.ndarray):
    """Flip signs so that every diagonal entry of R is non-negative."""
    d = np.where(np.diag(r) < 0, -1.0, 1.0)
    r = r * d[:, None]
    if q is not None:
        q = q * d[None, :]
    return q, r


# ---------------------------------------------------------------------------
# Householder
# ---------------------------------------------------------------------------


def householder_reflection(a, col: int = 0):
    """Apply one Householder reflection built from column `col` of `a`.

    The column is first scaled by its infinity norm, ``u = abar + sgn(abar_1) *
    ||abar||_2 * e1`` and ``beta = 2 / u^T u``.  The reflection is applied to
    the unscaled matrix, so the chosen column becomes ``-sgn(a_1) * ||a||_2 * e1``.

    Returns ``(updated, u, beta, max_elem)``.
    """
    a = as_matrix(a)
    if not 0 <= col < a.shape[1]:
        raise IndexOutOfRange(f"column {col} outside 0..{a.shape[1] - 1}")
    x = a[:, col]
    max_elem = float(np.max(np.abs(x)))
    if max_elem == 0.0:
        raise ZeroColumn(f"column {col} is identically zero")
    abar = x / max_elem
    u = abar.copy()
    u[0] += sgn(abar[0]) * np.linalg.norm(abar)
    beta = 2.0 / float(u @ u)
    a -= beta * np.outer(u, u @ a)
    a[1:, col] = 0.0
    return a, u, beta, max_elem


def householder_qr(a) -> QrFactorization:
    a = as_matrix(a)
    n, m = a.shape
    if n < m:
        raise ValueError("householder_qr needs rows >= cols")
    tol = rank_tolerance(a)
    r = a.copy()
    reflectors = []
    for k in range(m):
        if np.max(np.abs(r[k:, k])) <= tol:
            raise RankDeficient(f"column {k} is (numerically) dependent")
        r[k:, k:], u, beta, _ = householder_reflection(r[k:, k:])
        reflectors.append((u, beta))
    q = np.eye(n, m)
    for k in range(m - 1, -1, -1):
        u, beta = reflectors[k]
        q[k:, :] -= beta * np.outer(u, u @ q[k:, :])
    r = np.triu(r[:m])
    _check_diagonal(r, tol)
    return QrFactorization(q, r)


def _check_diagonal(r: np.ndarray, tol: float) -> None:
    small = np.flatnonzero(np.abs(np.diag(r)) <= tol)
    if small.size:
        raise RankDeficient(f"R[{small[0]},{small[0]}] below rank tolerance {tol:.3g}")


# ---------------------------------------------------------------------------
# Givens
# ---------------------------------------------------------------------------


def givens_params(x_ii: float, x_ji: float):
    """Rotation parameters ``(c, s)`` that zero `x_ji` against pivot `x_ii`."""
    if x_ii == 0.0 and x_ji == 0.0:
        raise DegeneratePair("both entries are zero; no rotation is defined")
    h = np.hypot(x_ii, x_ji)
    return float(x_ii / h), float(x_ji / h)


def _rotate_rows(a: np.ndarray, i: int, j: int, c: float, s: float, start: int = 0) -> None:
    ri = a[i, start:].copy()
    rj = a[j, start:]
    a[i, start:] = c * ri + s * rj
    a[j, start:] = c * rj - s * ri


def apply_givens(a, i: int, j: int, c: float, s: float) -> np.ndarray:
    """Rotate rows `i` and `j` of a copy of `a`; all other rows are untouched."""
    a = as_matrix(a)
    rows = a.shape[0]
    if not (0 <= i < j < rows):
        raise IndexOutOfRange(f"need 0 <= i < j < {rows}, got i={i}, j={j}")
    _rotate_rows(a, i, j, c, s)
    return a


def givens_triangularize(a: np.ndarray, qt: Optional[np.ndarray] = None) -> None:
    """Zero every sub-diagonal entry of `a` in place, column by column.

    Pairs whose lower entry is already zero are skipped.  When `qt` is given
    the same rotations are applied to it, accumulating ``Q^T``.
    """
    n, m = a.shape
    for i in range(min(m, n - 1)):
        for j in range(i + 1, n):
            if a[j, i] == 0.0:
                continue
            c, s = givens_params(a[i, i], a[j, i])
            _rotate_rows(a, i, j, c, s, start=i)
            a[j, i] = 0.0
            if qt is not None:
                _rotate_rows(qt, i, j, c, s)


def givens_qr(a, *, compute_q: bool = True) -> QrFactorization:
    a = as_matrix(a)
    n, m = a.shape
    if n < m:
        raise ValueError("givens_qr needs rows >= cols")
    tol = rank_tolerance(a)
    r = a.copy()
    qt = np.eye(n) if compute_q else None
    givens_triangularize(r, qt)
    r = np.triu(r[:m])
    _check_diagonal(r, tol)
    q = qt[:m].T.copy() if compute_q else None
    return QrFactorization(q, r)


# ---------------------------------------------------------------------------
# Gram-Schmidt
# ---------------------------------------------------------------------------


def gram_schmidt_qr(a):
    """Classical Gram-Schmidt.

    ``u_1 = a_1``, ``u_i = a_i - sum_j (u_j.a_i / n_j) u_j`` with
    ``n_j = u_j.u_j``; ``q_i = u_i / sqrt(n_i)`` and ``R[j, i] = q_j . a_i``.

    Returns ``(QrFactorization, u_norms)`` where `u_norms` holds the squared
    norms ``n_j``.
    """
    a = as_matrix(a)
    n, m = a.shape
    tol = rank_tolerance(a)
    u = np.zeros((n, m))
    norms = np.zeros(m)
    for i in range(m):
        v = a[:, i].copy()
        for j in range(i):
            v -= (u[:, j] @ a[:, i] / norms[j]) * u[:, j]
        norms[i] = v @ v
        if np.sqrt(norms[i]) <= tol:
            raise RankDeficient(f"column {i} is (numerically) dependent")
        u[:, i] = v
    q = u / np.sqrt(norms)
    r = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1):
            r[j, i] = q[:, j] @ a[:, i]
    return QrFactorization(q, r), norms


# ---------------------------------------------------------------------------
# triangular solves
# ---------------------------------------------------------------------------


def back_substitute(r, y) -> np.ndarray:
    """Solve ``R x = y`` for upper triangular `r`."""
    r = as_matrix(r)
    y = np.asarray(y, dtype=np.float64)
    d = r.shape[0]
    if r.shape != (d, d) or y.shape[0] != d:
        raise ValueError(f"shape mismatch: R {r.shape}, y {y.shape}")
    tol = rank_tolerance(r)
    diag = np.abs(np.diag(r))
    if np.any(diag <= tol):
        k = int(np.flatnonzero(diag <= tol)[0])
        raise SingularDiagonal(f"|R[{k},{k}]| = {diag[k]:.3g} <= {tol:.3g}")
    x = np.zeros_like(y, dtype=np.float64)
    for i in range(d - 1, -1, -1):
        x[i] = (y[i] - r[i, i + 1:] @ x[i + 1:]) / r[i, i]
    return x


def forward_substitute(lower, y) -> np.ndarray:
    """Solve ``L x = y`` for lower triangular `lower`."""
    lower = as_matrix(lower)
    y = np.asarray(y, dtype=np.float64)
    d = lower.shape[0]
    tol = rank_tolerance(lower)
    if np.any(np.abs(np.diag(lower)) <= tol):
        raise SingularDiagonal("zero on the diagonal of a triangular system")
    x = np.zeros_like(y, dtype=np.float64)
    for i in range(d):
        x[i] = (y[i] - lower[i, :i] @ x[:i]) / lower[i, i]
    return x


def gram_inverse(r) -> np.ndarray:
    """``(R^T R)^{-1}`` from two triangular solves per unit vector."""
    r = as_matrix(r)
    d = r.shape[0]
    eye = np.eye(d)
    z = forward_substitute(r.T, eye)
    return back_substitute(r, z)


# ---------------------------------------------------------------------------
# SVD
# ---------------------------------------------------------------------------


def small_svd(m):
    """One-sided (Hestenes) Jacobi SVD of a small square matrix.

    Returns ``(u, sigma, v)`` with ``m = u @ diag(sigma) @ v.T`` and `sigma`
    sorted non-increasing.
    """
    m = as_matrix(m)
    d = m.shape[0]
    if m.shape != (d, d):
        raise NotSquare(f"small_svd expects a square matrix, got {m.shape}")
    w = m.copy()
    v = np.eye(d)
    for _ in range(JACOBI_MAX_SWEEPS):
        rotated = False
        for p in range(d - 1):
            for q in range(p + 1, d):
                alpha = w[:, p] @ w[:, p]
                beta = w[:, q] @ w[:, q]
                gamma = w[:, p] @ w[:, q]
                if alpha == 0.0 or beta == 0.0:
                    continue
                if abs(gamma) <= JACOBI_TOL * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = sgn(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                wp = w[:, p].copy()
                w[:, p] = c * wp - s * w[:, q]
                w[:, q] = s * wp + c * w[:, q]
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
        if not rotated:
            break
    sigma = np.linalg.norm(w, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    w = w[:, order]
    v = v[:, order]
    cutoff = d * np.finfo(float).eps * (sigma[0] if d else 0.0)
    good = sigma > cutoff
    u = np.zeros((d, d))
    u[:, good] = w[:, good] / sigma[good]
    if not np.all(good):
        # complete the basis for (numerically) zero singular values
        full, _ = np.linalg.qr(u[:, good], mode="complete")
        u[:, ~good] = full[:, good.sum():]
        sigma[~good] = 0.0
    return u, sigma, v
