import numpy as np
import pytest

from fedqr.attacks import (
    AttackReport,
    attack_givens,
    attack_householder,
    attack_triangular_cascade,
    reconstruct_peer_row,
)
from fedqr.errors import (
    MissingTranscriptLabel,
    SignAnchorError,
    WrongMode,
    ZeroSineParameter,
)
from fedqr.federation import PartitionedDataset, Transcript, partition_rows
from fedqr.linalg import gram_schmidt_qr
from fedqr.protocols import fed_givens, fed_gram_schmidt, fed_householder


def test_report_scoring():
    rep = AttackReport.score("x", [[1.0, 2.0]], [[1.0, 2.5]], note=1)
    assert rep.max_abs_error == 0.5
    assert rep.mean_abs_error == 0.25
    assert '"note": 1' in rep.to_text()
    with pytest.raises(ValueError):
        AttackReport.score("x", [1.0], [1.0, 2.0])


# -- Householder ------------------------------------------------------------

HAND = np.array([[2.0, 1.0], [1.0, 3.0], [-1.0, 0.5], [0.5, -2.0], [3.0, 1.0], [-2.0, 4.0]])


@pytest.mark.parametrize("attacker", [0, 1])
@pytest.mark.parametrize("mode", ["clear", "smpc"])
def test_householder_small_exact(attacker, mode):
    _, t = fed_householder(partition_rows(HAND, [3, 3]), mode, seed=1)
    rep = attack_householder(t, attacker, HAND)
    # secure sums quantize the reflector products to 2^-40
    assert rep.max_abs_error <= (1e-13 if mode == "clear" else 1e-11)


@pytest.mark.parametrize("mode", ["clear", "smpc"])
def test_householder_large(mode, rng):
    a = rng.standard_normal((2000, 6))
    _, t = fed_householder(partition_rows(a, [1000, 1000]), mode, seed=3)
    rep = attack_householder(t, 1, a)
    assert rep.max_abs_error <= 1e-10
    assert rep.details["others_mean_abs_error"] <= 1e-12


def test_householder_three_clients(rng):
    a = rng.standard_normal((30, 4))
    _, t = fed_householder(partition_rows(a, [10, 10, 10]), "smpc", seed=2)
    assert attack_householder(t, 2, a).max_abs_error <= 1e-10


def test_householder_sign_anchor_failure():
    # the attacker's first reflector entry is zero in the first column
    a = HAND.copy()
    a[3, 0] = 0.0
    _, t = fed_householder(partition_rows(a, [3, 3]))
    with pytest.raises(SignAnchorError):
        attack_householder(t, 1, a)


def test_householder_missing_label(rng):
    a = rng.standard_normal((6, 2))
    _, t = fed_householder(partition_rows(a, [3, 3]))
    stripped = Transcript(t.protocol, t.mode, t.block_rows, t.n_cols,
                          [e for e in t.entries if e.label != "beta"], t.n_rounds)
    with pytest.raises(MissingTranscriptLabel):
        attack_householder(stripped, 0, a)


def test_householder_wrong_transcript(rng):
    res = fed_gram_schmidt(partition_rows(rng.standard_normal((6, 2)), [3, 3]))
    with pytest.raises(WrongMode):
        attack_householder(res.transcript, 0, np.zeros((6, 2)))


# -- Givens -----------------------------------------------------------------

def test_peer_row_hand_example():
    ri, rj = np.array([3.0, 1.0]), np.array([4.0, 2.0])
    c, s = 0.6, 0.8
    ri1, rj1 = c * ri + s * rj, c * rj - s * ri
    np.testing.assert_allclose(reconstruct_peer_row(c, s, ri, ri1, pivot=True), rj, atol=1e-15)
    np.testing.assert_allclose(reconstruct_peer_row(c, s, rj, rj1, pivot=False), ri, atol=1e-15)
    with pytest.raises(ZeroSineParameter):
        reconstruct_peer_row(1.0, 0.0, ri, ri, pivot=True)


def test_givens_hand_rotation():
    a = np.array([[3.0, 1.0], [4.0, 2.0]])
    _, t = fed_givens(partition_rows(a, [1, 1]))
    rep = attack_givens(t, 0)
    np.testing.assert_allclose(rep.reconstructed, [[4.0, 2.0]], atol=1e-15)
    rep = attack_givens(t, 1)
    np.testing.assert_allclose(rep.reconstructed, [[3.0, 1.0]], atol=1e-15)


@pytest.mark.parametrize("mode", ["clear", "smpc"])
def test_givens_recovers_exactly_the_joined_rotations(mode, rng):
    a = rng.standard_normal((60, 4))
    _, t = fed_givens(partition_rows(a, [20, 20, 20]), mode)
    for s in range(3):
        me = f"client{s}"
        joined = {e.key for e in t.entries if e.label == "givens_cs" and e.receiver == me}
        rep = attack_givens(t, s)
        assert {tuple(k) for k in rep.details["rotations"]} == joined
        assert rep.reconstructed.shape == (len(joined), 4)
        assert rep.max_abs_error <= 1e-10


def test_givens_sparse_rows():
    # zero lower entries are never rotated, so no s = 0 rotation reaches the attacker
    a = np.array([[1.0, 2.0], [0.0, 1.0], [0.0, 3.0], [5.0, 1.0]])
    _, t = fed_givens(partition_rows(a, [2, 2]))
    rep = attack_givens(t, 0)
    assert rep.details["skipped_zero_sine"] == 0
    assert rep.max_abs_error <= 1e-14


# -- cascade ----------------------------------------------------------------

def _triangular_blocks(rng, n_clients, d):
    return [gram_schmidt_qr(rng.standard_normal((d + 3, d)))[0].r for _ in range(n_clients)]


def test_cascade_hand_example():
    blocks = [np.array([[1.0, 1.0], [0.0, 1.0]]), np.array([[2.0, 0.0], [0.0, 2.0]])]
    for mode, attacker in (("clear", "aggregator"), ("clear", 0), ("smpc", 0), ("smpc", 1)):
        res = fed_gram_schmidt(PartitionedDataset.from_blocks(blocks), mode, seed=2)
        reports = attack_triangular_cascade(res.transcript, attacker, inputs=blocks, q_blocks=res.q_blocks)
        assert len(reports) == 4
        assert max(r.max_abs_error for r in reports) <= 1e-10


def test_cascade_single_column():
    blocks = [np.array([[3.0]]), np.array([[-4.0]])]
    res = fed_gram_schmidt(PartitionedDataset.from_blocks(blocks), "clear")
    reports = attack_triangular_cascade(res.transcript, inputs=[np.abs(b) for b in blocks],
                                        q_blocks=res.q_blocks)
    assert reports[0].reconstructed[0, 0] == 3.0
    assert reports[2].reconstructed[0, 0] == 4.0


def test_cascade_three_clients(rng):
    blocks = _triangular_blocks(rng, 3, 5)
    res = fed_gram_schmidt(PartitionedDataset.from_blocks(blocks), "clear")
    reports = attack_triangular_cascade(res.transcript, inputs=blocks, q_blocks=res.q_blocks)
    assert max(r.max_abs_error for r in reports) <= 1e-8
    # Q^s R = R^s with the protocol's global R
    for s in range(3):
        q_s = np.array(reports[2 * s + 1].details["q_signed"])
        np.testing.assert_allclose(q_s @ res.r, reports[2 * s].reconstructed, atol=1e-8)


def test_cascade_preconditions(rng):
    blocks = _triangular_blocks(rng, 3, 4)
    smpc = fed_gram_schmidt(PartitionedDataset.from_blocks(blocks), "smpc", seed=1)
    with pytest.raises(WrongMode):
        attack_triangular_cascade(smpc.transcript, inputs=blocks, q_blocks=smpc.q_blocks)
    with pytest.raises(WrongMode):
        attack_triangular_cascade(smpc.transcript, 0, inputs=blocks, q_blocks=smpc.q_blocks)
    general = fed_gram_schmidt(partition_rows(rng.standard_normal((15, 4)), [5, 5, 5]), "clear")
    with pytest.raises(WrongMode):
        attack_triangular_cascade(general.transcript, inputs=blocks, q_blocks=general.q_blocks)
    _, t = fed_givens(partition_rows(rng.standard_normal((8, 4)), [4, 4]))
    with pytest.raises(WrongMode):
        attack_triangular_cascade(t, inputs=blocks, q_blocks=blocks)


def test_cascade_flags_sign_ambiguity(rng):
    blocks = _triangular_blocks(rng, 2, 3)
    res = fed_gram_schmidt(PartitionedDataset.from_blocks(blocks), "clear")
    rep = attack_triangular_cascade(res.transcript, inputs=blocks, q_blocks=res.q_blocks)[0]
    assert rep.details["sign_ambiguous_diagonal"] == [True, True, True]


def test_cascade_row_signs_are_not_identifiable(rng):
    # negating a row of a client's block leaves every inner product unchanged,
    # so the transcript (and any reconstruction) cannot depend on that sign
    blocks = _triangular_blocks(rng, 2, 3)
    flipped = [blocks[0] * np.array([[1.0], [-1.0], [1.0]]), blocks[1]]
    t1 = fed_gram_schmidt(PartitionedDataset.from_blocks(blocks), "clear").transcript
    t2 = fed_gram_schmidt(PartitionedDataset.from_blocks(flipped), "clear").transcript
    for e1, e2 in zip(t1.entries, t2.entries):
        np.testing.assert_allclose(e1.payload, e2.payload, atol=1e-14)
