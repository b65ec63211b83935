"""Exception hierarchy for the pruning engine.

The CLI maps these onto its exit-code contract: format/integrity problems
exit 3, plan/validation problems exit 2, argument problems exit 4.
"""


class SnpError(Exception):
    """Base class for all engine errors."""


class DimensionError(SnpError):
    """Shapes of operands or stored tensors are inconsistent."""


class NumericError(SnpError):
    """Non-finite values appeared where finite values are guaranteed."""


class FormatError(SnpError):
    """A file does not carry the expected magic or version."""


class IntegrityError(SnpError):
    """File header and payload disagree (counts, offsets, lengths)."""


class TruncatedFileError(IntegrityError):
    """File ends before the payload declared in its header."""


class InvalidPlanError(SnpError):
    """A prune plan violates the model's coupling constraints."""


class StalePlanError(InvalidPlanError):
    """A plan or table was built for a different model fingerprint."""
