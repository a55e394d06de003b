import io
import json

import numpy as np
import pytest

from fedqr.errors import ConfigError, ProtocolError, SizeMismatch
from fedqr.federation import (
    AGGREGATOR,
    PARTIAL,
    RAW,
    SHARE,
    Federation,
    PartitionedDataset,
    RankOneMatrix,
    Transcript,
    aggregator_view,
    client_view,
    dumps,
    even_sizes,
    partition_rows,
    raw_secrets_at_aggregator,
    run_rounds,
)


def test_partition_examples():
    a = np.arange(12.0).reshape(6, 2)
    d = partition_rows(a, [3, 3])
    assert d.offsets == (0, 3)
    assert [b.shape for b in d.blocks] == [(3, 2), (3, 2)]
    np.testing.assert_array_equal(d.stacked(), a)
    assert partition_rows(np.ones((5, 1)), [2, 2, 1]).offsets == (0, 2, 4)
    with pytest.raises(SizeMismatch):
        partition_rows(a, [4, 3])
    with pytest.raises(SizeMismatch):
        partition_rows(a, [6, 0])


def test_dataset_validation_and_owner():
    with pytest.raises(SizeMismatch):
        PartitionedDataset.from_blocks([np.ones((2, 2)), np.ones((2, 3))])
    with pytest.raises(SizeMismatch):
        PartitionedDataset((np.ones((2, 2)), np.ones((2, 2))), (0, 1))
    d = partition_rows(np.ones((7, 2)), [3, 4])
    assert d.owner(0) == (0, 0)
    assert d.owner(3) == (1, 0)
    assert d.owner(6) == (1, 3)
    assert (d.n_rows, d.n_cols, d.n_clients) == (7, 2, 2)


def test_even_sizes():
    assert even_sizes(442, 5) == [89, 89, 88, 88, 88]
    with pytest.raises(SizeMismatch):
        even_sizes(3, 4)


def test_rank_one_matrix():
    m = RankOneMatrix([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(m.to_dense(), np.outer([1, -2, 3], [1, -2, 3]))
    np.testing.assert_array_equal(m.diagonal(), [1, 4, 9])
    np.testing.assert_array_equal(m.column(1), [-2, 4, -6])
    assert m.entry(0, 2) == 3.0
    assert m.shape == (3, 3)


def test_unknown_mode():
    with pytest.raises(ConfigError):
        Federation(partition_rows(np.ones((2, 1)), [1, 1]), "plain")


def _two_clients():
    return partition_rows(np.arange(8.0).reshape(4, 2), [2, 2])


def test_aggregate_clear_mode_sends_raw_values():
    fed = Federation(_two_clients(), "clear")
    out = fed.aggregate({"x": [[1.0, 2.0], [3.0, 4.0]]}, key=(0,))
    np.testing.assert_array_equal(out["x"], [4.0, 6.0])
    assert fed.rounds == 1
    kinds = [e.kind for e in fed.transcript.entries]
    assert kinds == [RAW, RAW, "aggregate"]
    assert len(raw_secrets_at_aggregator(fed.transcript)) == 2


def test_aggregate_smpc_mode_routes_through_shares():
    fed = Federation(_two_clients(), "smpc", seed=5)
    out = fed.aggregate({"x": [[1.0], [3.0]]})
    np.testing.assert_array_equal(out["x"], [4.0])
    assert raw_secrets_at_aggregator(fed.transcript) == []
    agg = aggregator_view(fed.transcript)
    assert {e.kind for e in agg} == {PARTIAL, "aggregate"}
    shares = [e for e in fed.transcript.entries if e.kind == SHARE]
    assert len(shares) == 4
    # a client sees the shares addressed to it, never the peer's local note
    view = client_view(fed.transcript, 0)
    assert all(not (e.kind == "local" and e.sender == "client1") for e in view)


def test_aggregate_checks_contribution_count():
    fed = Federation(_two_clients(), "clear")
    with pytest.raises(ProtocolError):
        fed.aggregate({"x": [[1.0]]})


def test_empty_transcript_views():
    t = Transcript("custom", "clear", (2, 2), 2)
    assert aggregator_view(t) == []
    assert client_view(t, 0) == []


def test_transcript_payloads_are_frozen():
    fed = Federation(_two_clients(), "clear")
    v = np.array([1.0, 2.0])
    e = fed.send("client0", AGGREGATOR, "x", v)
    v[0] = 99.0
    assert e.payload[0] == 1.0
    with pytest.raises(ValueError):
        e.payload[0] = 5.0


def test_jsonl_export_round_trips():
    out = run_rounds("fed-householder", _two_clients(), "smpc", seed=1)
    buf = io.StringIO()
    out.transcript.to_jsonl(buf)
    lines = buf.getvalue().splitlines()
    header = json.loads(lines[0])["header"]
    assert header["protocol"] == "fed-householder"
    assert header["n_rounds"] == out.round_count
    records = [json.loads(line) for line in lines[1:]]
    assert len(records) == len(out.transcript)
    assert {"round", "sender", "receiver", "label", "kind", "payload", "key"} <= set(records[0])
    outer = next(r for r in records if r["label"] == "outer_uu")
    assert set(outer["payload"]) == {"outer_diagonal", "outer_first_column"}


def test_dumps_full_precision():
    assert dumps(0.1) == "0.10000000000000001"
    assert dumps({"a": [1, 2.5, True, None]}) == '{"a": [1, 2.5, true, null]}'
    assert dumps(float("nan")) == "NaN"


def test_run_rounds_identity():
    out = run_rounds("fed-gs", partition_rows(np.eye(4), [2, 2]), "clear")
    np.testing.assert_allclose(np.vstack(out.per_client_outputs), np.eye(4))
    np.testing.assert_allclose(out.global_outputs["r"], np.eye(4))
    assert out.round_count == out.transcript.n_rounds


def _entries(t):
    return [(e.round, e.sender, e.receiver, e.label, e.kind, e.key, dumps(e.payload)
             if not isinstance(e.payload, RankOneMatrix) else dumps(e.payload.diagonal()))
            for e in t.entries]


@pytest.mark.parametrize("protocol", ["fed-gs", "fed-householder", "fed-givens", "fed-pca"])
def test_run_rounds_deterministic(protocol, rng):
    data = partition_rows(rng.standard_normal((24, 3)), [8, 8, 8])
    a = run_rounds(protocol, data, "smpc", seed=11)
    b = run_rounds(protocol, data, "smpc", seed=11)
    assert _entries(a.transcript) == _entries(b.transcript)


def test_run_rounds_linreg(rng):
    a = rng.standard_normal((30, 2))
    b = a @ [1.0, -2.0] + 0.1 * rng.standard_normal(30)
    data = partition_rows(a, [15, 15])
    out = run_rounds("fed-linreg", data, "clear", responses=[b[:15], b[15:]])
    np.testing.assert_allclose(out.global_outputs["coefficients"], np.linalg.lstsq(a, b, rcond=None)[0])


def test_run_rounds_unknown_protocol_and_wrapping():
    with pytest.raises(ConfigError):
        run_rounds("fed-lu", _two_clients())
    dependent = partition_rows(np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [1.0, 2.0]]), [2, 2])
    with pytest.raises(ProtocolError):
        run_rounds("fed-gs", dependent)


def test_smpc_gram_schmidt_has_no_raw_norms_at_aggregator(rng):
    out = run_rounds("fed-gs", partition_rows(rng.standard_normal((20, 3)), [10, 10]), "smpc", seed=2)
    assert raw_secrets_at_aggregator(out.transcript) == []
