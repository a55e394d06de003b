"""In-process star-topology federation.

A :class:`Federation` owns the partitioned data, the aggregation mode and a
:class:`Transcript`.  Protocols call :meth:`Federation.aggregate` for every
sum they need; in ``"clear"`` mode clients send their values directly to the
aggregator, in ``"smpc"`` mode the sum runs through additive secret sharing
and the aggregator only receives partial sums of shares.  Each call to
``aggregate`` (or :meth:`Federation.barrier`) closes one synchronous round.

Principals are ``client0 .. client{S-1}``, ``aggregator`` and, for steps
that no secure-sum scheme can perform privately, ``oracle``.  Broadcasts
use the receiver ``"*"``.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, FedQrError, ProtocolError, SizeMismatch
from .linalg import as_matrix
from .smpc import FieldParams, run_secure_sum

AGGREGATOR = "aggregator"
ORACLE = "oracle"
BROADCAST = "*"
MODES = ("clear", "smpc")

# message kinds
RAW = "raw"              # a client's own value, in clear text
SHARE = "share"          # one additive share, client to client
PARTIAL = "partial"      # a party's sum of received shares
AGGREGATE = "aggregate"  # a global result announced by the aggregator
LOCAL = "local"          # private state a principal records for itself
CONTROL = "control"      # indices, parameters and other protocol metadata


def client(s: int) -> str:
    return f"client{s}"


def client_index(name: str) -> int:
    return int(name[len("client"):])


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PartitionedDataset:
    """Row blocks held by the clients, in global row order."""

    blocks: tuple
    offsets: tuple

    def __post_init__(self):
        if not self.blocks:
            raise SizeMismatch("a dataset needs at least one client")
        cols = {b.shape[1] for b in self.blocks}
        if len(cols) != 1:
            raise SizeMismatch(f"blocks disagree on column count: {sorted(cols)}")
        expected = tuple(int(x) for x in np.cumsum([0] + [b.shape[0] for b in self.blocks[:-1]]))
        if tuple(self.offsets) != expected:
            raise SizeMismatch(f"offsets {self.offsets} inconsistent with block heights")

    @classmethod
    def from_blocks(cls, blocks: Sequence) -> "PartitionedDataset":
        blocks = tuple(as_matrix(b) for b in blocks)
        offsets = tuple(int(x) for x in np.cumsum([0] + [b.shape[0] for b in blocks[:-1]]))
        return cls(blocks, offsets)

    @property
    def n_clients(self) -> int:
        return len(self.blocks)

    @property
    def sizes(self) -> tuple:
        return tuple(b.shape[0] for b in self.blocks)

    @property
    def n_rows(self) -> int:
        return sum(self.sizes)

    @property
    def n_cols(self) -> int:
        return self.blocks[0].shape[1]

    def stacked(self) -> np.ndarray:
        return np.vstack(self.blocks)

    def owner(self, row: int) -> tuple:
        """``(client, local_row)`` holding global row `row`."""
        s = int(np.searchsorted(self.offsets, row, side="right")) - 1
        return s, row - self.offsets[s]

    def map_blocks(self, fn: Callable[[np.ndarray], np.ndarray]) -> "PartitionedDataset":
        return PartitionedDataset.from_blocks([fn(b) for b in self.blocks])


def partition_rows(a, sizes: Sequence[int]) -> PartitionedDataset:
    """Split `a` horizontally into consecutive blocks of the given heights."""
    a = as_matrix(a)
    sizes = [int(x) for x in sizes]
    if any(x < 1 for x in sizes) or sum(sizes) != a.shape[0]:
        raise SizeMismatch(f"sizes {sizes} do not partition {a.shape[0]} rows")
    cuts = np.cumsum([0] + sizes)
    return PartitionedDataset.from_blocks([a[lo:hi] for lo, hi in zip(cuts[:-1], cuts[1:])])


def even_sizes(n_rows: int, n_clients: int) -> List[int]:
    if not 1 <= n_clients <= n_rows:
        raise SizeMismatch(f"cannot split {n_rows} rows over {n_clients} clients")
    base, extra = divmod(n_rows, n_clients)
    return [base + (1 if s < extra else 0) for s in range(n_clients)]


# ---------------------------------------------------------------------------
# transcript
# ---------------------------------------------------------------------------


class RankOneMatrix:
    """Outer product ``u u^T`` exposed entry-wise without materializing it.

    Only the entries of the product are reachable through the public API;
    the factor itself is kept private so transcript consumers see exactly
    what a party receiving the full matrix would see.
    """

    def __init__(self, factor):
        self._factor = np.asarray(factor, dtype=np.float64).copy()
        self._factor.setflags(write=False)

    @property
    def shape(self):
        return (self._factor.size, self._factor.size)

    def diagonal(self) -> np.ndarray:
        return self._factor * self._factor

    def column(self, j: int) -> np.ndarray:
        return self._factor * self._factor[j]

    def entry(self, i: int, j: int) -> float:
        return float(self._factor[i] * self._factor[j])

    def to_dense(self) -> np.ndarray:
        return np.outer(self._factor, self._factor)


@dataclass(frozen=True)
class TranscriptEntry:
    round: int
    sender: str
    receiver: str
    label: str
    kind: str
    payload: Any
    key: tuple = ()


@dataclass
class Transcript:
    """Append-only log of every message exchanged in one protocol run."""

    protocol: str
    mode: str
    block_rows: tuple
    n_cols: int
    _entries: List[TranscriptEntry] = field(default_factory=list, repr=False)
    n_rounds: int = 0

    @property
    def n_clients(self) -> int:
        return len(self.block_rows)

    @property
    def offsets(self) -> tuple:
        return tuple(int(x) for x in np.cumsum((0,) + tuple(self.block_rows[:-1])))

    @property
    def entries(self) -> tuple:
        return tuple(self._entries)

    def __len__(self):
        return len(self._entries)

    def record(self, sender, receiver, label, kind, payload, key=()) -> TranscriptEntry:
        if isinstance(payload, np.ndarray):
            payload = payload.copy()
            payload.setflags(write=False)
        entry = TranscriptEntry(self.n_rounds, sender, receiver, label, kind, payload, tuple(key))
        self._entries.append(entry)
        return entry

    def header(self) -> dict:
        return {
            "protocol": self.protocol,
            "mode": self.mode,
            "block_rows": list(self.block_rows),
            "n_cols": self.n_cols,
            "n_rounds": self.n_rounds,
        }

    def to_jsonl(self, fh) -> None:
        """Write one header line, then one record per entry."""
        fh.write(dumps({"header": self.header()}) + "\n")
        for e in self._entries:
            fh.write(dumps({
                "round": e.round, "sender": e.sender, "receiver": e.receiver,
                "label": e.label, "kind": e.kind, "key": list(e.key),
                "payload": _payload_record(e.payload),
            }) + "\n")


def _payload_record(payload):
    if isinstance(payload, RankOneMatrix):
        # diagonal plus first column determine a rank-one symmetric matrix
        return {"outer_diagonal": payload.diagonal().tolist(),
                "outer_first_column": payload.column(0).tolist()}
    if isinstance(payload, np.ndarray):
        return payload.tolist()
    if isinstance(payload, tuple):
        return [_payload_record(p) for p in payload]
    return payload


def _fmt_float(x: float) -> str:
    if x != x or x in (float("inf"), float("-inf")):
        return json.dumps(x)
    return format(x, ".17g")


def dumps(obj) -> str:
    """JSON with floats written to 17 significant digits."""
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(bool(obj) if obj is not None else None)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist())
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {dumps(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(dumps(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def aggregator_view(t: Transcript) -> List[TranscriptEntry]:
    """Entries the aggregator sent or received."""
    return [e for e in t.entries
            if e.receiver in (AGGREGATOR, BROADCAST) or e.sender == AGGREGATOR]


def client_view(t: Transcript, s: int) -> List[TranscriptEntry]:
    """Entries client `s` sent, received or recorded locally."""
    me = client(s)
    return [e for e in t.entries if e.receiver in (me, BROADCAST) or e.sender == me]


def raw_secrets_at_aggregator(t: Transcript, labels=None) -> List[TranscriptEntry]:
    """Clear-text client values that reached the aggregator.

    With `labels`, only messages carrying one of those labels count.
    """
    return [e for e in t.entries
            if e.receiver == AGGREGATOR and e.kind == RAW and e.sender.startswith("client")
            and (labels is None or e.label in labels)]


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------


class Federation:
    """Round-synchronous message passing between clients and an aggregator."""

    def __init__(self, data: PartitionedDataset, mode: str = "clear", *, seed: int = 0,
                 params: Optional[FieldParams] = None, protocol: str = "custom"):
        if mode not in MODES:
            raise ConfigError(f"unknown aggregation mode {mode!r}; choose from {MODES}")
        self.data = data
        self.mode = mode
        self.params = params or FieldParams()
        self.rng = random.Random(seed)
        self.transcript = Transcript(protocol, mode, data.sizes, data.n_cols)
        self.secure_labels = set()

    @property
    def n_clients(self) -> int:
        return self.data.n_clients

    @property
    def rounds(self) -> int:
        return self.transcript.n_rounds

    def barrier(self) -> None:
        self.transcript.n_rounds += 1

    def send(self, sender, receiver, label, payload, kind=RAW, key=()):
        return self.transcript.record(sender, receiver, label, kind, payload, key)

    def broadcast(self, label, payload, *, sender=AGGREGATOR, kind=AGGREGATE, key=()):
        return self.transcript.record(sender, BROADCAST, label, kind, payload, key)

    def note(self, s: int, label, payload, key=()):
        """Record private state of client `s` (visible only to itself)."""
        return self.transcript.record(client(s), client(s), label, LOCAL, payload, key)

    def aggregate(self, parts: Dict[str, Sequence], key=()) -> Dict[str, np.ndarray]:
        """Sum per-client vectors for each label and broadcast the results.

        `parts` maps a label to one vector per client (in client order).  All
        labels are summed in the same round, which this call closes.
        """
        out = {}
        for label, contributions in parts.items():
            vectors = [np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in contributions]
            if len(vectors) != self.n_clients:
                raise ProtocolError(f"{label}: expected {self.n_clients} contributions")
            self.secure_labels.add(label)
            if self.mode == "clear":
                total = np.zeros_like(vectors[0])
                for s, v in enumerate(vectors):
                    self.send(client(s), AGGREGATOR, label, v, RAW, key)
                    total = total + v
            else:
                total = self._secure(label, vectors, key)
            self.broadcast(label, total, key=key)
            out[label] = total
        self.barrier()
        return out

    def _secure(self, label, vectors, key):
        run = run_secure_sum(vectors, self.params, self.rng)
        for s, v in enumerate(vectors):
            self.note(s, label, v, key)
        for bundle in run.bundles:
            for dest, share in enumerate(bundle.shares):
                self.send(client(bundle.source), client(dest), label, share, SHARE, key)
        for dest, partial in enumerate(run.partials):
            self.send(client(dest), AGGREGATOR, label, partial, PARTIAL, key)
        return run.result


# ---------------------------------------------------------------------------
# protocol registry
# ---------------------------------------------------------------------------


@dataclass
class ProtocolOutcome:
    per_client_outputs: list
    global_outputs: dict
    transcript: Transcript
    round_count: int


PROTOCOLS: Dict[str, Callable[..., ProtocolOutcome]] = {}


def register_protocol(name: str):
    def deco(fn):
        PROTOCOLS[name] = fn
        return fn
    return deco


def run_rounds(protocol: str, data: PartitionedDataset, mode: str = "clear", *, seed: int = 0,
               params: Optional[FieldParams] = None, **kwargs) -> ProtocolOutcome:
    """Run a registered protocol end to end and return its outcome.

    Algorithm failures are re-raised as :class:`ProtocolError`.
    """
    from . import apps, protocols  # noqa: F401  (populate the registry)

    try:
        fn = PROTOCOLS[protocol]
    except KeyError:
        raise ConfigError(f"unknown protocol {protocol!r}; registered: {sorted(PROTOCOLS)}") from None
    try:
        return fn(data, mode, seed=seed, params=params, **kwargs)
    except (ProtocolError, ConfigError):
        raise
    except FedQrError as exc:
        raise ProtocolError(f"{protocol}: {exc}") from exc
