"""Federated QR protocols over horizontally partitioned data.

`fed_gram_schmidt` is the production protocol: clients exchange only norms,
co-norms and entries of R.  `fed_householder` and `fed_givens` are
prototypes whose transcripts expose the leaks exploited in
:mod:`fedqr.attacks`; they return R only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import ProtocolError, RankDeficient, ZeroColumn
from .federation import (
    AGGREGATOR,
    CONTROL,
    ORACLE,
    RAW,
    Federation,
    PartitionedDataset,
    ProtocolOutcome,
    RankOneMatrix,
    Transcript,
    client,
    register_protocol,
)
from .linalg import givens_params, givens_triangularize, sgn
from .smpc import FieldParams

# relative size of a Gram-Schmidt residual below which a column counts as dependent
GS_RANK_TOL = 1e-12


@dataclass
class FedQrResult:
    q_blocks: List[np.ndarray]
    r: np.ndarray
    u_norms: np.ndarray
    residual_table: np.ndarray
    transcript: Transcript

    @property
    def round_count(self) -> int:
        return self.transcript.n_rounds

    def stacked_q(self) -> np.ndarray:
        return np.vstack(self.q_blocks)


def _check_gs_rank(i, norm_i, residuals_i, norms):
    # ||a_i||^2 = n_i + sum_j r_ij^2 n_j because the u_j are orthogonal
    col_sq = norm_i + float(np.sum(residuals_i ** 2 * norms))
    if not norm_i > (GS_RANK_TOL ** 2) * col_sq:
        raise RankDeficient(f"column {i} is (numerically) dependent on earlier columns")


def fed_gram_schmidt(data: PartitionedDataset, mode: str = "clear", *, seed: int = 0,
                     params: Optional[FieldParams] = None) -> FedQrResult:
    """Federated classical Gram-Schmidt returning client Q blocks and a shared R.

    Rounds: the first norm, then for every further column one round for the
    residuals together with the previous column of R and one for the new
    norm, and a last round for the final column of R (``2 d`` in total).
    """
    fed = Federation(data, mode, seed=seed, params=params, protocol="fed-gs")
    S, d = data.n_clients, data.n_cols
    A = data.blocks
    U = [np.zeros((a.shape[0], d)) for a in A]
    Q = [np.zeros((a.shape[0], d)) for a in A]
    norms = np.zeros(d)
    residuals = np.zeros((d, d))
    R = np.zeros((d, d))

    for s in range(S):
        U[s][:, 0] = A[s][:, 0]
    norms[0] = fed.aggregate({"norm": [[U[s][:, 0] @ U[s][:, 0]] for s in range(S)]}, key=(0,))["norm"][0]
    _check_gs_rank(0, norms[0], np.zeros(0), np.zeros(0))

    for i in range(1, d):
        res_loc, r_loc = [], []
        for s in range(S):
            Q[s][:, i - 1] = U[s][:, i - 1] / np.sqrt(norms[i - 1])
            r_loc.append([Q[s][:, l] @ A[s][:, i - 1] for l in range(i)])
            res_loc.append([U[s][:, j] @ A[s][:, i] / norms[j] for j in range(i)])
        agg = fed.aggregate({"residual": res_loc, "r_entry": r_loc}, key=(i,))
        residuals[i, :i] = agg["residual"]
        R[:i, i - 1] = agg["r_entry"]
        for s in range(S):
            v = A[s][:, i].copy()
            for j in range(i):
                v -= residuals[i, j] * U[s][:, j]
            U[s][:, i] = v
        norms[i] = fed.aggregate({"norm": [[U[s][:, i] @ U[s][:, i]] for s in range(S)]}, key=(i,))["norm"][0]
        _check_gs_rank(i, norms[i], residuals[i, :i], norms[:i])

    r_loc = []
    for s in range(S):
        Q[s][:, d - 1] = U[s][:, d - 1] / np.sqrt(norms[d - 1])
        r_loc.append([Q[s][:, l] @ A[s][:, d - 1] for l in range(d)])
    R[:, d - 1] = fed.aggregate({"r_entry": r_loc}, key=(d,))["r_entry"]
    return FedQrResult(Q, R, norms, residuals, fed.transcript)


def _active(data: PartitionedDataset, k: int):
    """Local row slices of every client covering global rows ``>= k``."""
    return [slice(min(max(0, k - off), n_s), n_s) for off, n_s in zip(data.offsets, data.sizes)]


def fed_householder(data: PartitionedDataset, mode: str = "clear", *, seed: int = 0,
                    params: Optional[FieldParams] = None):
    """Federated Householder triangularization; returns ``(R, transcript)``.

    Per column four rounds: local maxima, squared norm of the scaled column,
    the oracle step forming ``u u^T`` and the reflector product
    ``w = beta * u^T A`` (so that the aggregate reflection is ``u w``).
    """
    n, m = data.n_rows, data.n_cols
    if n < m:
        raise ProtocolError("federated Householder needs at least as many rows as columns")
    fed = Federation(data, mode, seed=seed, params=params, protocol="fed-householder")
    S = data.n_clients
    blocks = [b.copy() for b in data.blocks]

    for k in range(m):
        act = _active(data, k)
        cols = [blocks[s][act[s], k] for s in range(S)]
        key = (k,)

        for s in range(S):
            local_max = float(np.max(np.abs(cols[s]))) if cols[s].size else 0.0
            fed.send(client(s), AGGREGATOR, "local_max", np.array([local_max]), RAW, key)
        gmax = max(float(np.max(np.abs(c))) if c.size else 0.0 for c in cols)
        fed.broadcast("global_max", np.array([gmax]), key=key)
        fed.barrier()
        if gmax == 0.0:
            raise ZeroColumn(f"column {k} is zero below the diagonal")

        abar = [c / gmax for c in cols]
        pivot, _ = data.owner(k)
        sign = sgn(abar[pivot][0])
        fed.broadcast("pivot_sign", np.array([sign]), sender=client(pivot), kind=CONTROL, key=key)
        sq_norm = fed.aggregate({"sq_norm": [[a @ a] for a in abar]}, key=key)["sq_norm"][0]

        u = [a.copy() for a in abar]
        u[pivot][0] += sign * np.sqrt(sq_norm)
        # oracle step: the stacked reflector cannot be formed by secure addition
        receiver = AGGREGATOR if mode == "clear" else ORACLE
        for s in range(S):
            fed.send(client(s), receiver, "u_local", u[s], RAW, key)
        full_u = np.concatenate(u)
        beta = 2.0 / float(full_u @ full_u)
        fed.broadcast("outer_uu", RankOneMatrix(full_u), sender=receiver, key=key)
        fed.broadcast("beta", np.array([beta]), sender=receiver, key=key)
        fed.barrier()

        parts = [beta * (u[s] @ blocks[s][act[s], k:]) for s in range(S)]
        w = fed.aggregate({"reflector_product": parts}, key=key)["reflector_product"]
        for s in range(S):
            blocks[s][act[s], k:] -= np.outer(u[s], w)
            first = 1 if s == pivot else 0
            blocks[s][act[s].start + first:, k] = 0.0

    r = np.triu(np.vstack(blocks)[:m])
    return r, fed.transcript


def fed_givens(data: PartitionedDataset, mode: str = "clear", *, seed: int = 0,
               params: Optional[FieldParams] = None):
    """Federated Givens triangularization; returns ``(R, transcript)``.

    Clients first triangularize their own blocks.  The remaining sub-diagonal
    entries pair rows of different clients; those pairs are processed in
    lexicographic ``(i, j)`` order through the aggregator, which learns both
    pivot values and relays the s-scaled rows.
    """
    n, m = data.n_rows, data.n_cols
    fed = Federation(data, mode, seed=seed, params=params, protocol="fed-givens")
    S = data.n_clients
    blocks = [b.copy() for b in data.blocks]
    for b in blocks:
        givens_triangularize(b)

    if S > 1:
        # announce the sub-diagonal entries that local rotations could not reach
        for s, b in enumerate(blocks):
            rows, cols = np.nonzero(b)
            below = rows + data.offsets[s] > cols
            idx = np.column_stack([rows[below] + data.offsets[s], cols[below]]).astype(float)
            fed.send(client(s), AGGREGATOR, "nonzero_index", idx, CONTROL)
        fed.barrier()

    for i in range(min(m, n - 1)):
        si, li = data.owner(i)
        for j in range(i + 1, n):
            sj, lj = data.owner(j)
            if blocks[sj][lj, i] == 0.0:
                continue
            row_i, row_j = blocks[si][li], blocks[sj][lj]
            if si == sj:
                c, s = givens_params(row_i[i], row_j[i])
                ri = row_i.copy()
                blocks[si][li] = c * ri + s * row_j
                blocks[sj][lj] = c * row_j - s * ri
                blocks[sj][lj, i] = 0.0
                continue

            k1, k2 = client(si), client(sj)
            key = (i, j)
            for who in (k1, k2):
                fed.send(AGGREGATOR, who, "pair_index", np.array([i, j], dtype=float), CONTROL, key)
            fed.send(k1, AGGREGATOR, "x_ii", np.array([row_i[i]]), RAW, key)
            fed.send(k2, AGGREGATOR, "x_ji", np.array([row_j[i]]), RAW, key)
            c, s = givens_params(row_i[i], row_j[i])
            for who in (k1, k2):
                fed.send(AGGREGATOR, who, "givens_cs", np.array([c, s]), CONTROL, key)
            fed.barrier()

            before_i, before_j = row_i.copy(), row_j.copy()
            fed.note(si, "row_before", before_i, key)
            fed.note(sj, "row_before", before_j, key)
            scaled_j, scaled_i = s * before_j, s * before_i
            fed.send(k2, AGGREGATOR, "scaled_row", scaled_j, RAW, key)
            fed.send(AGGREGATOR, k1, "scaled_row", scaled_j, RAW, key)
            fed.send(k1, AGGREGATOR, "scaled_row", scaled_i, RAW, key)
            fed.send(AGGREGATOR, k2, "scaled_row", scaled_i, RAW, key)
            blocks[si][li] = c * before_i + scaled_j
            blocks[sj][lj] = c * before_j - scaled_i
            blocks[sj][lj, i] = 0.0
            fed.note(si, "row_after", blocks[si][li], key)
            fed.note(sj, "row_after", blocks[sj][lj], key)
            fed.barrier()

    r = np.triu(np.vstack(blocks)[:m])
    return r, fed.transcript


# ---------------------------------------------------------------------------
# registry adapters
# ---------------------------------------------------------------------------


@register_protocol("fed-gs")
def _run_gs(data, mode, *, seed=0, params=None):
    res = fed_gram_schmidt(data, mode, seed=seed, params=params)
    return ProtocolOutcome(res.q_blocks, {"r": res.r, "u_norms": res.u_norms,
                                          "residual_table": res.residual_table},
                           res.transcript, res.round_count)


@register_protocol("fed-householder")
def _run_householder(data, mode, *, seed=0, params=None):
    r, t = fed_householder(data, mode, seed=seed, params=params)
    return ProtocolOutcome([], {"r": r}, t, t.n_rounds)


@register_protocol("fed-givens")
def _run_givens(data, mode, *, seed=0, params=None):
    r, t = fed_givens(data, mode, seed=seed, params=params)
    return ProtocolOutcome([], {"r": r}, t, t.n_rounds)
