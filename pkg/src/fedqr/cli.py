"""Command line front-end: ``fedqr <command> [options]``.

Every command writes a deterministic report: a header with the resolved
configuration, an aligned table of metrics and a JSON data block.
"""

from __future__ import annotations

import argparse
import csv
import random
import sys
from dataclasses import asdict, dataclass
from typing import List, Optional, Tuple

import numpy as np

from .apps import fed_center, fed_linreg, fed_pca, ols_oracle
from .attacks import attack_givens, attack_householder, attack_triangular_cascade
from .errors import ConfigError, FedQrError, ParseError, RaggedRows
from .federation import (
    AGGREGATOR,
    PartitionedDataset,
    dumps,
    even_sizes,
    partition_rows,
    raw_secrets_at_aggregator,
)
from .linalg import gram_schmidt_qr
from .protocols import fed_givens, fed_gram_schmidt, fed_householder
from .smpc import FieldParams, run_secure_sum

COMMANDS = ("qr", "attack-householder", "attack-givens", "attack-cascade", "pca", "linreg", "smpc-demo")


@dataclass
class ExperimentConfig:
    command: str
    input: Optional[str] = None
    synthetic: Optional[Tuple[int, int]] = None
    clients: int = 5
    mode: str = "smpc"
    seed: int = 0
    response: Optional[str] = None
    intercept: bool = False
    prime_bits: int = 127
    frac_bits: int = 40
    k: Optional[int] = None
    attacker: Optional[int] = None
    output: Optional[str] = None
    transcript: Optional[str] = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if (self.input is None) == (self.synthetic is None):
            raise ConfigError("give exactly one of --input and --synthetic")
        if self.clients < 1:
            raise ConfigError("--clients must be at least 1")
        if self.synthetic is not None and self.synthetic[0] < self.synthetic[1]:
            raise ConfigError("synthetic data needs rows >= cols")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")

    def resolved(self) -> dict:
        d = asdict(self)
        d.pop("output")
        d.pop("transcript")
        if d["synthetic"] is not None:
            d["synthetic"] = list(d["synthetic"])
        return d


# ---------------------------------------------------------------------------
# input
# ---------------------------------------------------------------------------


def load_csv(path, has_header: bool = True, response_column: Optional[str] = None):
    """Read a numeric CSV into ``(matrix, response, column_names)``.

    `response` is None unless `response_column` names a header column, in
    which case that column is removed from the matrix.  Rows and columns
    in error messages are 1-based and count the header line.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ParseError("empty CSV", row=1, col=1)
    names = [c.strip() for c in rows[0]] if has_header else [f"x{i}" for i in range(len(rows[0]))]
    body = rows[1:] if has_header else rows
    first = 2 if has_header else 1
    width = len(names)
    values = []
    for r, row in enumerate(body, start=first):
        if len(row) != width:
            raise RaggedRows(f"row {r} has {len(row)} fields, expected {width}")
        try:
            values.append([float(x) for x in row])
        except ValueError:
            for c, cell in enumerate(row, start=1):
                try:
                    float(cell)
                except ValueError:
                    raise ParseError(f"non-numeric cell {cell!r}", row=r, col=c) from None
    if not values:
        raise ParseError("CSV has no data rows", row=first, col=1)
    matrix = np.array(values)
    if not np.all(np.isfinite(matrix)):
        bad = np.argwhere(~np.isfinite(matrix))[0]
        raise ParseError("non-finite value", row=int(bad[0]) + first, col=int(bad[1]) + 1)
    response = None
    if response_column is not None:
        if response_column not in names:
            raise ConfigError(f"response column {response_column!r} not among {names}")
        j = names.index(response_column)
        response = matrix[:, j].copy()
        matrix = np.delete(matrix, j, axis=1)
        names = names[:j] + names[j + 1:]
    return matrix, response, names


def parse_synthetic(text: str) -> Tuple[int, int]:
    try:
        rows, cols = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ROWSxCOLS, got {text!r}") from None
    if rows < 1 or cols < 1:
        raise argparse.ArgumentTypeError("rows and cols must be positive")
    return rows, cols


def synthetic_matrix(rows: int, cols: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((rows, cols))


def _load(cfg: ExperimentConfig):
    if cfg.synthetic is not None:
        a = synthetic_matrix(*cfg.synthetic, cfg.seed)
        return a, None, [f"x{i}" for i in range(a.shape[1])]
    return load_csv(cfg.input, True, cfg.response)


def _split(a, n_clients) -> PartitionedDataset:
    return partition_rows(a, even_sizes(a.shape[0], n_clients))


def _split_vector(v, data: PartitionedDataset):
    return [v[o:o + n] for o, n in zip(data.offsets, data.sizes)]


# ---------------------------------------------------------------------------
# commands; each returns (table rows, data block, transcripts)
# ---------------------------------------------------------------------------


def _cmd_qr(cfg, params):
    a, _, _ = _load(cfg)
    data = _split(a, cfg.clients)
    res = fed_gram_schmidt(data, cfg.mode, seed=cfg.seed, params=params)
    (qc, rc), _ = gram_schmidt_qr(a)
    dq = float(np.linalg.norm(qc - res.stacked_q()))
    dr = float(np.linalg.norm(rc - res.r))
    table = [("||Q_c - Q_f||_F", dq), ("||R_c - R_f||_F", dr), ("rounds", res.round_count)]
    return table, {"q_frobenius_delta": dq, "r_frobenius_delta": dr, "r": res.r}, [res.transcript]


def _attack_table(rep):
    return [("target", rep.target), ("mean abs error", rep.mean_abs_error),
            ("max abs error", rep.max_abs_error)]


def _cmd_attack_householder(cfg, params):
    a, _, _ = _load(cfg)
    _, t = fed_householder(_split(a, cfg.clients), cfg.mode, seed=cfg.seed, params=params)
    rep = attack_householder(t, cfg.attacker or 0, a)
    return _attack_table(rep), rep.summary(), [t]


def _cmd_attack_givens(cfg, params):
    a, _, _ = _load(cfg)
    _, t = fed_givens(_split(a, cfg.clients), cfg.mode, seed=cfg.seed, params=params)
    rep = attack_givens(t, cfg.attacker or 0)
    table = _attack_table(rep) + [("rotations attacked", len(rep.details["rotations"])),
                                  ("skipped (s = 0)", rep.details["skipped_zero_sine"])]
    summary = {k: v for k, v in rep.summary().items() if k != "per_rotation_max_abs_error"}
    return table, summary, [t]


def _cmd_attack_cascade(cfg, params):
    # the inputs are the clients' local R factors, as in the PCA pipeline
    a, _, _ = _load(cfg)
    blocks = [gram_schmidt_qr(b)[0].r for b in _split(a, cfg.clients).blocks]
    res = fed_gram_schmidt(PartitionedDataset.from_blocks(blocks), cfg.mode, seed=cfg.seed, params=params)
    attacker = AGGREGATOR if cfg.attacker is None else cfg.attacker
    reports = attack_triangular_cascade(res.transcript, attacker, inputs=blocks, q_blocks=res.q_blocks)
    table = [(f"{rep.target} max abs error", rep.max_abs_error) for rep in reports]
    data = {"attacker": str(attacker),
            "reports": [{k: v for k, v in r.summary().items() if k != "q_signed"} for r in reports]}
    return table, data, [res.transcript]


def _cmd_pca(cfg, params):
    a, _, _ = _load(cfg)
    rep = fed_pca(_split(a, cfg.clients), cfg.k, cfg.mode, seed=cfg.seed, params=params)
    centered = a - a.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    v_ref = vt[:rep.k].T
    signs = np.where(np.sum(v_ref * rep.v, axis=0) < 0, -1.0, 1.0)
    dv = float(np.max(np.abs(rep.v - v_ref * signs)))
    ds = float(np.max(np.abs(rep.sigma - s[:rep.k])))
    recon = float(np.linalg.norm(rep.stacked_u() * rep.sigma @ rep.v.T - centered) / np.linalg.norm(centered))
    table = [("k", rep.k), ("max |V - V_c| (up to sign)", dv), ("max |sigma - sigma_c|", ds),
             ("relative reconstruction error", recon)]
    return table, {**rep.summary(), "v_delta": dv, "sigma_delta": ds, "reconstruction_error": recon}, \
        [rep.transcript]


def _cmd_linreg(cfg, params):
    if cfg.input is None or cfg.response is None:
        raise ConfigError("linreg needs --input and --response")
    a, b, names = _load(cfg)
    data = _split(a, cfg.clients)
    if cfg.intercept:
        design, resp = data, _split_vector(b, data)
        oracle_a, oracle_b = a, b
    else:
        # standardize the features and center the response, globally
        joint = fed_center(_split(np.column_stack([a, b]), cfg.clients), cfg.mode, seed=cfg.seed, params=params)
        design = joint.map_blocks(lambda x: x[:, :-1])
        resp = [x[:, -1] for x in joint.blocks]
        z = joint.stacked()
        oracle_a, oracle_b = z[:, :-1], z[:, -1]
    rep = fed_linreg(design, resp, cfg.mode, intercept=cfg.intercept, seed=cfg.seed, params=params)
    ref = ols_oracle(oracle_a, oracle_b, intercept=cfg.intercept)
    x_design = np.column_stack([np.ones(len(oracle_a)), oracle_a]) if cfg.intercept else oracle_a
    (qc, rc), _ = gram_schmidt_qr(x_design)
    q_f = np.vstack(rep.q_blocks)
    metrics = {
        "q_frobenius_delta": float(np.linalg.norm(qc - q_f)),
        "r_frobenius_delta": float(np.linalg.norm(rc - rep.r)),
        "coefficient_abs_sum_delta": float(np.sum(np.abs(rep.coefficients - ref.coefficients))),
        "p_value_abs_sum_delta": float(np.sum(np.abs(rep.p_values - ref.p_values))),
        "r_squared_delta": float(abs(rep.r_squared - ref.r_squared)),
    }
    labels = (["(intercept)"] if cfg.intercept else []) + names
    table = [("||Q_c - Q_f||_F", metrics["q_frobenius_delta"]),
             ("||R_c - R_f||_F", metrics["r_frobenius_delta"]),
             ("sum |x_c - x_f|", metrics["coefficient_abs_sum_delta"]),
             ("sum |p_c - p_f|", metrics["p_value_abs_sum_delta"]),
             ("|r2_c - r2_f|", metrics["r_squared_delta"]),
             ("r2", rep.r_squared), ("dof", rep.dof)]
    table += [(f"coef {n}", c) for n, c in zip(labels, rep.coefficients)]
    return table, {**metrics, "features": labels, "regression": rep.summary()}, list(rep.transcripts)


def _cmd_smpc_demo(cfg, params):
    # every client secret-shares the column sums of its block
    a, _, _ = _load(cfg)
    data = _split(a, cfg.clients)
    secrets = [b.sum(axis=0) for b in data.blocks]
    run = run_secure_sum(secrets, params, random.Random(cfg.seed))
    exact = np.sum(secrets, axis=0)
    err = float(np.max(np.abs(run.result - exact)))
    bound = cfg.clients * 2.0 ** -params.frac_bits
    fed_run = fed_gram_schmidt(data, cfg.mode, seed=cfg.seed, params=params)
    leaks = len(raw_secrets_at_aggregator(fed_run.transcript))
    table = [("parties", cfg.clients), ("prime bits", params.prime.bit_length()),
             ("max decode error", err), ("error bound S*2^-frac", bound),
             ("raw values at aggregator (fed-gs)", leaks)]
    data_block = {"field_total": [str(x) for x in run.field_total], "decoded": run.result,
                  "exact": exact, "max_decode_error": err, "raw_values_at_aggregator": leaks}
    return table, data_block, [fed_run.transcript]


HANDLERS = {
    "qr": _cmd_qr,
    "attack-householder": _cmd_attack_householder,
    "attack-givens": _cmd_attack_givens,
    "attack-cascade": _cmd_attack_cascade,
    "pca": _cmd_pca,
    "linreg": _cmd_linreg,
    "smpc-demo": _cmd_smpc_demo,
}


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".6g")
    return str(v)


def render_report(cfg: ExperimentConfig, table, data) -> str:
    lines = [f"# fedqr {cfg.command}", f"# config: {dumps(cfg.resolved())}", ""]
    width = max([len("metric")] + [len(str(k)) for k, _ in table])
    lines.append(f"{'metric':<{width}}  value")
    lines.append(f"{'-' * width}  {'-' * 12}")
    lines += [f"{str(k):<{width}}  {_fmt(v)}" for k, v in table]
    lines += ["", "# data", dumps(data), ""]
    return "\n".join(lines)


def run_experiment(cfg: ExperimentConfig) -> str:
    """Run one experiment and return its report text (also written to
    ``cfg.output`` when set)."""
    try:
        params = FieldParams.from_bits(cfg.prime_bits, cfg.frac_bits)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    table, data, transcripts = HANDLERS[cfg.command](cfg, params)
    report = render_report(cfg, table, data)
    if cfg.output:
        with open(cfg.output, "w", encoding="utf-8") as fh:
            fh.write(report)
    if cfg.transcript:
        with open(cfg.transcript, "w", encoding="utf-8") as fh:
            for t in transcripts:
                t.to_jsonl(fh)
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedqr", description="Federated QR experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--input", metavar="PATH", help="numeric CSV with a header line")
        src.add_argument("--synthetic", metavar="RxC", type=parse_synthetic,
                         help="seeded standard Gaussian matrix")
        p.add_argument("--clients", type=int, default=5)
        p.add_argument("--mode", choices=("clear", "smpc"), default="smpc")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--prime-bits", type=int, default=127)
        p.add_argument("--frac-bits", type=int, default=40)
        p.add_argument("--output", metavar="PATH")
        p.add_argument("--transcript", metavar="PATH", help="write the message transcript as JSON lines")
        if name == "linreg":
            p.add_argument("--response", required=True)
            p.add_argument("--intercept", action="store_true",
                           help="fit raw data with an intercept instead of standardizing")
        if name == "pca":
            p.add_argument("--k", type=int)
        if name.startswith("attack"):
            p.add_argument("--attacker", type=int,
                           help="attacking client index (cascade: default is the aggregator)")
    return parser


def config_from_args(args) -> ExperimentConfig:
    return ExperimentConfig(
        command=args.command, input=args.input, synthetic=args.synthetic, clients=args.clients,
        mode=args.mode, seed=args.seed, response=getattr(args, "response", None),
        intercept=getattr(args, "intercept", False), prime_bits=args.prime_bits,
        frac_bits=args.frac_bits, k=getattr(args, "k", None), attacker=getattr(args, "attacker", None),
        output=args.output, transcript=args.transcript,
    )


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        report = run_experiment(cfg)
    except FedQrError as exc:
        print(f"fedqr {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        print(f"fedqr {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    if not cfg.output:
        sys.stdout.write(report)
    return 0


if __name__ == "__main__":
    sys.exit(main())
