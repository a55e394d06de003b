"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line front-end can map
failures to process exit codes without a lookup table.
"""


class FedQrError(Exception):
    exit_code = 1


class ConfigError(FedQrError, ValueError):
    exit_code = 2


class NumericalError(FedQrError, ArithmeticError):
    exit_code = 3


class AttackPreconditionError(FedQrError):
    exit_code = 4


# linear algebra
class ZeroColumn(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class DegeneratePair(NumericalError):
    pass


class SingularDiagonal(NumericalError):
    pass


class NotSquare(NumericalError, ValueError):
    pass


class IndexOutOfRange(FedQrError, IndexError):
    exit_code = 2


# secret sharing
class OutOfRange(NumericalError, OverflowError):
    pass


class TooFewParties(ConfigError):
    pass


# federation
class SizeMismatch(ConfigError):
    pass


class ProtocolError(NumericalError):
    pass


# attacks
class MissingTranscriptLabel(AttackPreconditionError, KeyError):
    pass


class WrongMode(AttackPreconditionError):
    pass


class SignAnchorError(AttackPreconditionError):
    """The attacker's own first reflector entry is zero, so no sign can be anchored."""


class ZeroSineParameter(AttackPreconditionError):
    pass


class NegativeRadicand(AttackPreconditionError):
    pass


class ZeroPivot(AttackPreconditionError):
    pass


# applications
class ZeroVariance(NumericalError):
    pass


class DofExhausted(NumericalError):
    pass


# ingestion
class ParseError(ConfigError):
    def __init__(self, message, row=None, col=None):
        super().__init__(message)
        self.row = row
        self.col = col


class RaggedRows(ConfigError):
    pass
