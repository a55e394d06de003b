"""Reconstruction attacks against recorded protocol transcripts.

Each attack first projects the transcript onto the attacker's view and
never looks at anything else; the reference data passed in is used only to
score the reconstruction afterwards.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import (
    MissingTranscriptLabel,
    NegativeRadicand,
    SignAnchorError,
    WrongMode,
    ZeroPivot,
    ZeroSineParameter,
)
from .federation import (
    AGGREGATOR,
    BROADCAST,
    LOCAL,
    RAW,
    Transcript,
    aggregator_view,
    client,
    client_index,
    client_view,
    dumps,
)
from .linalg import sgn

RADICAND_TOL = 1e-9


@dataclass
class AttackReport:
    target: str
    reconstructed: np.ndarray
    reference: np.ndarray
    max_abs_error: float
    mean_abs_error: float
    details: dict = field(default_factory=dict)

    @classmethod
    def score(cls, target, reconstructed, reference, **details) -> "AttackReport":
        reconstructed = np.asarray(reconstructed, dtype=float)
        reference = np.asarray(reference, dtype=float)
        if reconstructed.shape != reference.shape:
            raise ValueError(f"shape mismatch {reconstructed.shape} vs {reference.shape}")
        err = np.abs(reconstructed - reference)
        if err.size:
            max_err, mean_err = float(err.max()), float(err.mean())
        else:
            max_err = mean_err = float("nan")
        return cls(target, reconstructed, reference, max_err, mean_err, details)

    def summary(self) -> dict:
        return {"target": self.target, "shape": list(self.reconstructed.shape),
                "max_abs_error": self.max_abs_error, "mean_abs_error": self.mean_abs_error,
                **self.details}

    def to_text(self) -> str:
        return dumps(self.summary())


def _require(table, label, key):
    try:
        return table[label][key]
    except KeyError:
        raise MissingTranscriptLabel(f"transcript view lacks {label!r} for step {key}") from None


def _check_protocol(t: Transcript, expected: str) -> None:
    if t.protocol != expected:
        raise WrongMode(f"expected a {expected} transcript, got {t.protocol}")


# ---------------------------------------------------------------------------
# Householder
# ---------------------------------------------------------------------------


def attack_householder(t: Transcript, attacker: int, reference) -> AttackReport:
    """Recover every client's data from a federated Householder transcript.

    Per reflection the attacker takes ``|u|`` from the diagonal of the
    broadcast ``u u^T`` and the signs from the column belonging to its own
    first active row, anchored on its own ``u`` entry.  Undoing the shift
    and the infinity-norm scaling gives the active column; earlier
    reflections are then unwound with the broadcast reflector products.
    """
    _check_protocol(t, "fed-householder")
    me = client(attacker)
    table: Dict[str, dict] = defaultdict(dict)
    for e in client_view(t, attacker):
        if e.receiver == BROADCAST:
            table[e.label][e.key] = e.payload
        elif e.label == "u_local" and e.sender == me:
            table["own_u"][e.key] = e.payload

    n, m = sum(t.block_rows), t.n_cols
    off = t.offsets[attacker]
    us, betas, ws = [], [], []
    columns = np.zeros((n, m))
    for k in range(m):
        key = (k,)
        gmax = _require(table, "global_max", key)[0]
        sq_norm = _require(table, "sq_norm", key)[0]
        pivot_sign = _require(table, "pivot_sign", key)[0]
        uut = _require(table, "outer_uu", key)
        beta = _require(table, "beta", key)[0]
        w = _require(table, "reflector_product", key)
        own = _require(table, "own_u", key)
        if own.size == 0 or own[0] == 0.0:
            raise SignAnchorError(f"step {k}: attacker has no non-zero reflector entry to anchor signs")

        anchor = max(off, k) - k
        u = np.sqrt(np.maximum(uut.diagonal(), 0.0)) * np.sign(uut.column(anchor)) * sgn(own[0])
        u[anchor:anchor + own.size] = own
        us.append(u)
        betas.append(beta)
        ws.append(w)

        abar = u.copy()
        abar[0] -= pivot_sign * np.sqrt(sq_norm)
        v = abar * gmax
        for step in range(k - 1, -1, -1):
            ut, wt = us[step], ws[step][k - step]
            # beta * u^T (reflected column) = -w fixes the entry finalized at `step`
            x = (-wt / betas[step] - ut[1:] @ v) / ut[0]
            v = np.concatenate(([x], v)) + ut * wt
        columns[:, k] = v

    reference = np.asarray(reference, dtype=float)
    mask = np.ones(n, dtype=bool)
    mask[off:off + t.block_rows[attacker]] = False
    others = np.abs(columns[mask] - reference[mask])
    return AttackReport.score(
        "all clients", columns, reference,
        attacker=me,
        per_column_mean_abs_error=np.abs(columns - reference).mean(axis=0).tolist(),
        others_mean_abs_error=float(others.mean()) if others.size else float("nan"),
    )


# ---------------------------------------------------------------------------
# Givens
# ---------------------------------------------------------------------------


def reconstruct_peer_row(c: float, s: float, before, after, *, pivot: bool) -> np.ndarray:
    """Peer row from one rotation, given the attacker's own row before and after.

    As the pivot (row i) holder: ``a_j = (a_i' - c a_i) / s``; as the lower
    row holder: ``a_i = (c a_j - a_j') / s``.
    """
    if s == 0.0:
        raise ZeroSineParameter("s = 0: the rotation carries no information about the peer row")
    before = np.asarray(before, dtype=float)
    after = np.asarray(after, dtype=float)
    if pivot:
        return (after - c * before) / s
    return (c * before - after) / s


def attack_givens(t: Transcript, attacker: int, reference: Optional[Sequence] = None) -> AttackReport:
    """Recover the peer row of every cross-client rotation the attacker joined.

    Without `reference`, the peers' true pre-rotation rows are read from the
    full transcript for scoring only.
    """
    _check_protocol(t, "fed-givens")
    me = client(attacker)
    params, before, after = {}, {}, {}
    for e in client_view(t, attacker):
        if e.label == "givens_cs" and e.receiver == me:
            params[e.key] = e.payload
        elif e.kind == LOCAL and e.sender == me:
            (before if e.label == "row_before" else after)[e.key] = e.payload

    offsets, rows = t.offsets, t.block_rows
    mine = range(offsets[attacker], offsets[attacker] + rows[attacker])
    keys, recovered, skipped = [], [], 0
    for key in sorted(params):
        if key not in before or key not in after:
            raise MissingTranscriptLabel(f"own rows for rotation {key} missing from view")
        c, s = params[key]
        try:
            recovered.append(reconstruct_peer_row(c, s, before[key], after[key], pivot=key[0] in mine))
        except ZeroSineParameter:
            skipped += 1
            continue
        keys.append(key)

    if reference is None:
        truth = {}
        for e in t.entries:
            if e.label == "row_before" and e.kind == LOCAL and e.sender != me:
                truth[e.key] = e.payload
        reference = [truth[k] for k in keys]
    shape = (len(keys), t.n_cols)
    rec = np.array(recovered).reshape(shape)
    ref = np.array(reference, dtype=float).reshape(shape)
    per_row = np.abs(rec - ref).max(axis=1).tolist() if keys else []
    return AttackReport.score(
        "peer rows", rec, ref, attacker=me, rotations=[list(k) for k in keys],
        skipped_zero_sine=skipped, per_rotation_max_abs_error=per_row,
    )


# ---------------------------------------------------------------------------
# stacked upper-triangular inputs to federated Gram-Schmidt
# ---------------------------------------------------------------------------


def _cascade_inputs(t: Transcript, attacker):
    """Per-client norms/residuals and their aggregates, as the attacker sees them."""
    S, d = t.n_clients, t.n_cols
    own_norm = defaultdict(dict)
    own_res = defaultdict(dict)
    agg_norm, agg_res = {}, {}
    view = aggregator_view(t) if attacker == AGGREGATOR else client_view(t, attacker)
    me = None if attacker == AGGREGATOR else client(attacker)
    for e in view:
        if e.label not in ("norm", "residual"):
            continue
        if e.receiver == BROADCAST:
            (agg_norm if e.label == "norm" else agg_res)[e.key[0]] = np.asarray(e.payload)
            continue
        contributed = (e.kind == RAW and e.receiver == AGGREGATOR) or (e.kind == LOCAL)
        if not contributed:
            continue
        if me is not None and e.sender != me:
            continue
        s = client_index(e.sender)
        (own_norm if e.label == "norm" else own_res)[s][e.key[0]] = np.asarray(e.payload)

    if attacker != AGGREGATOR:
        # two parties: the other contribution is the aggregate minus one's own
        other = 1 - attacker
        for i, total in agg_norm.items():
            own_norm[other][i] = total - own_norm[attacker][i]
        for i, total in agg_res.items():
            own_res[other][i] = total - own_res[attacker][i]

    try:
        norms = np.array([agg_norm[i][0] for i in range(d)])
        residuals = np.zeros((d, d))
        for i in range(1, d):
            residuals[i, :i] = agg_res[i]
        client_norms = [np.array([own_norm[s][i][0] for i in range(d)]) for s in range(S)]
        client_res = []
        for s in range(S):
            table = np.zeros((d, d))
            for i in range(1, d):
                table[i, :i] = own_res[s][i]
            client_res.append(table)
    except KeyError as exc:
        raise MissingTranscriptLabel(f"norm/residual entry missing for column {exc}") from None
    return norms, residuals, client_norms, client_res


def _reconstruct_block(norms, residuals, n_s, p_s):
    d = norms.size
    a = np.zeros((d, d))
    u = np.zeros((d, d))
    for i in range(d):
        for j in range(i):
            if u[j, j] == 0.0:
                raise ZeroPivot(f"u[{j},{j}] = 0, the substitution cannot continue")
            a[j, i] = (p_s[i, j] * norms[j] - u[:j, j] @ a[:j, i]) / u[j, j]
        head = a[:i, i] - u[:i, :i] @ residuals[i, :i]
        radicand = n_s[i] - head @ head
        if radicand < -RADICAND_TOL * max(1.0, abs(n_s[i])):
            raise NegativeRadicand(f"column {i}: radicand {radicand:.3g}")
        a[i, i] = np.sqrt(max(radicand, 0.0))
        u[:i, i] = head
        u[i, i] = a[i, i]
    return a, u / np.sqrt(norms)


def attack_triangular_cascade(t: Transcript, attacker=AGGREGATOR, *, inputs: Sequence,
                              q_blocks: Sequence) -> List[AttackReport]:
    """Reconstruct every client's triangular input and Q block.

    Works for the aggregator in clear mode, or for either client when only
    two clients take part (in any mode).  Diagonal entries come from a
    square root, so their sign is assumed positive and flagged as ambiguous.
    Returns, per client, one report for R^s and one for ``|Q^s|``.
    """
    _check_protocol(t, "fed-gs")
    d = t.n_cols
    if any(rows != d for rows in t.block_rows):
        raise WrongMode("inputs are not stacked square upper-triangular blocks")
    if attacker == AGGREGATOR:
        if t.mode != "clear":
            raise WrongMode("the aggregator only sees per-client values in clear mode")
    elif t.n_clients != 2:
        raise WrongMode("a client can isolate its peer's values only when exactly two clients take part")

    norms, residuals, client_norms, client_res = _cascade_inputs(t, attacker)
    reports = []
    for s in range(t.n_clients):
        r_s, q_s = _reconstruct_block(norms, residuals, client_norms[s], client_res[s])
        reports.append(AttackReport.score(
            f"{client(s)}:R", r_s, inputs[s],
            attacker=str(attacker if attacker == AGGREGATOR else client(attacker)),
            sign_ambiguous_diagonal=[True] * d,
        ))
        reports.append(AttackReport.score(
            f"{client(s)}:|Q|", np.abs(q_s), np.abs(np.asarray(q_blocks[s])),
            attacker=str(attacker if attacker == AGGREGATOR else client(attacker)),
            q_signed=q_s.tolist(),
        ))
    return reports
