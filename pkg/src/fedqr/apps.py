"""PCA and linear regression on top of federated Gram-Schmidt."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import DofExhausted, ProtocolError, ZeroVariance
from .federation import (
    CONTROL,
    Federation,
    PartitionedDataset,
    ProtocolOutcome,
    Transcript,
    dumps,
    register_protocol,
)
from .linalg import as_matrix, back_substitute, gram_inverse, gram_schmidt_qr, small_svd
from .protocols import fed_gram_schmidt
from .smpc import FieldParams

BETACF_EPS = 1e-12
BETACF_MAX_ITER = 500
_TINY = 1e-300


# ---------------------------------------------------------------------------
# Student t distribution
# ---------------------------------------------------------------------------


def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete beta continued fraction
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < BETACF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def betainc(a: float, b: float, x: float, y: Optional[float] = None) -> float:
    """Regularized incomplete beta function ``I_x(a, b)``.

    Pass ``y = 1 - x`` when it is known more accurately than the subtraction.
    """
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    y = 1.0 - x if y is None else y
    if x == 0.0 or y == 0.0:
        return 0.0 if x == 0.0 else 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log(y))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, y) / b


def student_t_sf2(t: float, dof: float) -> float:
    """Two-sided tail probability ``P(|T| >= |t|)``."""
    if dof <= 0:
        raise ValueError("degrees of freedom must be positive")
    if math.isnan(t):
        return float("nan")
    if math.isinf(t):
        return 0.0
    t2 = t * t
    return betainc(dof / 2.0, 0.5, dof / (dof + t2), t2 / (dof + t2))


def student_t_cdf(t: float, dof: float) -> float:
    tail = 0.5 * student_t_sf2(t, dof)
    return 1.0 - tail if t >= 0 else tail


# ---------------------------------------------------------------------------
# centering
# ---------------------------------------------------------------------------


@dataclass
class ColumnStats:
    count: int
    mean: np.ndarray
    std: np.ndarray


def fed_column_stats(data: PartitionedDataset, mode: str = "clear", *, seed: int = 0,
                     params: Optional[FieldParams] = None) -> ColumnStats:
    """Global column means and sample standard deviations from secure sums of
    the row count, ``sum x`` and ``sum x^2``."""
    fed = Federation(data, mode, seed=seed, params=params, protocol="fed-center")
    agg = fed.aggregate({
        "count": [[b.shape[0]] for b in data.blocks],
        "col_sum": [b.sum(axis=0) for b in data.blocks],
        "col_sum_sq": [(b * b).sum(axis=0) for b in data.blocks],
    })
    n = int(round(agg["count"][0]))
    if n < 2:
        raise ZeroVariance("need at least two rows to estimate a variance")
    mean = agg["col_sum"] / n
    var = (agg["col_sum_sq"] - n * mean * mean) / (n - 1)
    return ColumnStats(n, mean, np.sqrt(np.maximum(var, 0.0)))


def fed_center(data: PartitionedDataset, mode: str = "clear", *, scale: bool = True, seed: int = 0,
               params: Optional[FieldParams] = None) -> PartitionedDataset:
    """Subtract the global column means and, with `scale`, divide by the
    global sample standard deviations."""
    params = params or FieldParams()
    stats = fed_column_stats(data, mode, seed=seed, params=params)
    if scale:
        # a constant column leaves only rounding noise in sum x^2 - n mean^2,
        # relative in floating point and absolute from fixed-point shares
        quantum = 2.0 * data.n_clients * 2.0 ** -params.frac_bits / (stats.count - 1)
        noise = 1e-12 * np.maximum(stats.mean ** 2, 1.0) + quantum
        flat = np.flatnonzero(stats.std ** 2 <= noise)
        if flat.size:
            raise ZeroVariance(f"column {flat[0]} is constant")
        return data.map_blocks(lambda b: (b - stats.mean) / stats.std)
    return data.map_blocks(lambda b: b - stats.mean)


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------


def covariance_from_r(r) -> np.ndarray:
    """``R^T R``, which equals ``A^T A`` for any A = QR.

    Publishing R therefore publishes the (unnormalized) feature covariance.
    """
    r = np.asarray(r, dtype=float)
    return r.T @ r


@dataclass
class PcaReport:
    u_blocks: List[np.ndarray]
    v: np.ndarray
    sigma: np.ndarray
    projections: List[np.ndarray]
    transcript: Transcript

    @property
    def k(self) -> int:
        return self.sigma.size

    def stacked_u(self) -> np.ndarray:
        return np.vstack(self.u_blocks)

    def summary(self) -> dict:
        return {"k": self.k, "sigma": self.sigma.tolist(), "v": self.v.tolist()}

    def to_text(self) -> str:
        return dumps(self.summary())


def fed_pca(data: PartitionedDataset, k: Optional[int] = None, mode: str = "clear", *,
            center: bool = True, seed: int = 0, params: Optional[FieldParams] = None) -> PcaReport:
    """Top-`k` principal components of the stacked data.

    Every client reduces its block to a local R; the stacked local R factors
    are orthonormalized with federated Gram-Schmidt, which yields the global
    R (identical to the R of the full data).  Each client then takes the SVD
    of that small matrix itself.  ``U^s = A^s V Sigma^-1`` so that the stacked
    ``U Sigma V^T`` reproduces the data; ``A^s V`` is kept as `projections`.
    """
    m = data.n_cols
    k = m if k is None else k
    if not 1 <= k <= m:
        raise ValueError(f"k must lie in 1..{m}, got {k}")
    if center:
        data = fed_center(data, mode, scale=False, seed=seed, params=params)
    local_r = [gram_schmidt_qr(b)[0].r for b in data.blocks]
    res = fed_gram_schmidt(PartitionedDataset.from_blocks(local_r), mode, seed=seed, params=params)
    _, sigma, v = small_svd(res.r)
    sigma, v = sigma[:k], v[:, :k]
    if np.any(sigma <= 0.0):
        raise ProtocolError("requested components include a zero singular value")
    projections = [b @ v for b in data.blocks]
    return PcaReport([p / sigma for p in projections], v, sigma, projections, res.transcript)


# ---------------------------------------------------------------------------
# regression
# ---------------------------------------------------------------------------


@dataclass
class RegressionReport:
    coefficients: np.ndarray
    std_errors: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    rss: float
    mss: float
    dof: int
    intercept: bool
    r: Optional[np.ndarray]
    transcripts: tuple
    q_blocks: Optional[List[np.ndarray]] = None

    @property
    def r_squared(self) -> float:
        return self.mss / (self.mss + self.rss)

    def summary(self) -> dict:
        return {
            "coefficients": self.coefficients.tolist(),
            "std_errors": self.std_errors.tolist(),
            "t_stats": self.t_stats.tolist(),
            "p_values": self.p_values.tolist(),
            "rss": self.rss, "mss": self.mss, "r_squared": self.r_squared,
            "dof": self.dof, "intercept": self.intercept,
        }

    def to_text(self) -> str:
        return dumps(self.summary())


def inference(coefficients, r, rss: float, dof: int):
    """Standard errors, t statistics and two-sided p-values for a QR fit."""
    sigma = rss / dof * gram_inverse(r)
    se = np.sqrt(np.diag(sigma))
    with np.errstate(divide="ignore", invalid="ignore"):
        # a perfect fit has zero standard errors and infinite t statistics
        t = coefficients / se
    p = np.array([student_t_sf2(x, dof) for x in t])
    return se, t, p


def fed_linreg(data: PartitionedDataset, responses: Sequence, mode: str = "clear", *,
               intercept: bool = False, seed: int = 0,
               params: Optional[FieldParams] = None) -> RegressionReport:
    """Least squares ``min ||A x - b||`` with the usual inference statistics.

    Without `intercept` the data are assumed centered and the model sum of
    squares is ``sum (A x)^2``; with it a column of ones is prepended and
    the fitted values are compared with the global mean of `b`.
    """
    b = [np.asarray(v, dtype=float).ravel() for v in responses]
    if len(b) != data.n_clients or any(v.size != n for v, n in zip(b, data.sizes)):
        raise ValueError("responses must match the client blocks row for row")
    if intercept:
        data = data.map_blocks(lambda a: np.hstack([np.ones((a.shape[0], 1)), a]))
    n, p = data.n_rows, data.n_cols
    features = p - 1 if intercept else p
    dof = n - features - 1
    if dof <= 0:
        raise DofExhausted(f"{n} rows leave no residual degrees of freedom for {features} features")

    qr = fed_gram_schmidt(data, mode, seed=seed, params=params)
    fed = Federation(data, mode, seed=seed + 1, params=params, protocol="fed-linreg")
    y = fed.aggregate({"qtb": [q.T @ v for q, v in zip(qr.q_blocks, b)]})["qtb"]
    x = back_substitute(qr.r, y)
    fed.broadcast("coefficients", x, kind=CONTROL)
    ybar = 0.0
    if intercept:
        ybar = fed.aggregate({"response_sum": [[v.sum()] for v in b]})["response_sum"][0] / n
    fitted = [a @ x for a in data.blocks]
    sums = fed.aggregate({
        "rss": [[np.sum((f - v) ** 2)] for f, v in zip(fitted, b)],
        "mss": [[np.sum((f - ybar) ** 2)] for f in fitted],
    })
    rss, mss = float(sums["rss"][0]), float(sums["mss"][0])
    se, t, pv = inference(x, qr.r, rss, dof)
    return RegressionReport(x, se, t, pv, rss, mss, dof, intercept, qr.r, (qr.transcript, fed.transcript),
                            qr.q_blocks)


def ols_oracle(a, b, *, intercept: bool = False) -> RegressionReport:
    """Centralized normal-equations fit with the same statistics, for cross-checks."""
    a = as_matrix(a)
    b = np.asarray(b, dtype=float).ravel()
    if intercept:
        a = np.hstack([np.ones((a.shape[0], 1)), a])
    n, p = a.shape
    dof = n - (p - 1 if intercept else p) - 1
    if dof <= 0:
        raise DofExhausted(f"{n} rows leave no residual degrees of freedom")
    gram = a.T @ a
    x = np.linalg.solve(gram, a.T @ b)
    fitted = a @ x
    rss = float(np.sum((b - fitted) ** 2))
    mss = float(np.sum((fitted - (b.mean() if intercept else 0.0)) ** 2))
    se = np.sqrt(np.diag(rss / dof * np.linalg.inv(gram)))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = x / se
    pv = np.array([student_t_sf2(v, dof) for v in t])
    return RegressionReport(x, se, t, pv, rss, mss, dof, intercept, None, ())


@register_protocol("fed-pca")
def _run_pca(data, mode, *, seed=0, params=None, k=None, center=True):
    rep = fed_pca(data, k, mode, center=center, seed=seed, params=params)
    return ProtocolOutcome(rep.u_blocks, {"v": rep.v, "sigma": rep.sigma}, rep.transcript,
                           rep.transcript.n_rounds)


@register_protocol("fed-linreg")
def _run_linreg(data, mode, *, seed=0, params=None, responses=None, intercept=False):
    if responses is None:
        raise ValueError("fed-linreg needs per-client responses")
    rep = fed_linreg(data, responses, mode, intercept=intercept, seed=seed, params=params)
    rounds = sum(t.n_rounds for t in rep.transcripts)
    return ProtocolOutcome([], rep.summary(), rep.transcripts[0], rounds)
