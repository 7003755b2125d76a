"""Exception types shared across the package.

Every failure mode callers are expected to handle gets its own class so the
CLI can map them onto distinct exit codes.
"""


class ProtosetError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(ProtosetError, ValueError):
    """Operands have incompatible shapes for the requested operation."""


class DomainError(ProtosetError, ValueError):
    """An input lies outside an operation's mathematical domain."""


class ConfigError(ProtosetError, ValueError):
    """A configuration key, value, or combination is invalid."""


class DegenerateInputError(ProtosetError, ValueError):
    """An input vector is numerically degenerate (e.g. zero norm under cosine cost)."""


class InvalidMarginalsError(ProtosetError, ValueError):
    """A marginal vector is not a valid strictly positive probability vector."""


class NumericalError(ProtosetError, ArithmeticError):
    """A computation produced non-finite intermediates it cannot recover from."""


class TrainingDivergedError(ProtosetError, ArithmeticError):
    """A training loss became non-finite; carries diagnostics in the message."""


class CheckpointError(ProtosetError, ValueError):
    """A checkpoint file is missing fields or cannot be parsed."""


class CheckpointVersionError(CheckpointError):
    """A checkpoint was written by an incompatible format version."""
