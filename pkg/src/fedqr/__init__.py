"""Federated QR decomposition under additive secret sharing, with the
reconstruction attacks that rule out Householder and Givens variants."""

from .apps import covariance_from_r, fed_center, fed_linreg, fed_pca
from .attacks import attack_givens, attack_householder, attack_triangular_cascade
from .federation import Federation, PartitionedDataset, Transcript, partition_rows, run_rounds
from .linalg import givens_qr, gram_schmidt_qr, householder_qr
from .protocols import fed_givens, fed_gram_schmidt, fed_householder
from .smpc import FieldParams, decode, encode, secure_sum

__version__ = "0.1.0"

__all__ = [
    "FieldParams", "Federation", "PartitionedDataset", "Transcript",
    "attack_givens", "attack_householder", "attack_triangular_cascade",
    "covariance_from_r", "decode", "encode",
    "fed_center", "fed_givens", "fed_gram_schmidt", "fed_householder", "fed_linreg", "fed_pca",
    "givens_qr", "gram_schmidt_qr", "householder_qr", "partition_rows", "run_rounds", "secure_sum",
]
