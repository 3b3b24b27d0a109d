"""Exception types shared across the package."""


class GaussKGError(Exception):
    """Base class for all package-specific errors."""


class InvalidParameterError(GaussKGError, ValueError):
    """A value violates a structural precondition (non-finite, bad shape, ...)."""


class DimensionMismatchError(GaussKGError, ValueError):
    """Operands live in different spaces."""


class NumericError(GaussKGError, ArithmeticError):
    """A numeric routine failed (non-PD system, overflow).

    ``ids`` carries identifiers of the offending operands when the caller
    supplied them (entity ids, DAG node indices).
    """

    def __init__(self, message, ids=None):
        super().__init__(message)
        self.ids = ids


class FormatError(GaussKGError, ValueError):
    """A file is malformed, truncated, or has an unsupported version."""


class VocabMismatchError(FormatError):
    """A checkpoint was produced against a different vocabulary."""


class QuerySyntaxError(GaussKGError, ValueError):
    """Query text failed to parse; ``offset`` is the byte offset of the error."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class UnknownNameError(GaussKGError, KeyError):
    """An entity or relation name is not in the vocabulary."""


class ShapeUnsatisfiableError(GaussKGError, RuntimeError):
    """The query sampler exhausted its retry budget for a query shape."""
