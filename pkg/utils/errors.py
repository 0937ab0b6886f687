"""
Exception hierarchy shared by every package.
Callers catch PvtError for anything the library raises on purpose.
"""


class PvtError(Exception):
    """Base class for library errors."""


class InvalidShapeError(PvtError, ValueError):
    """Tensor extents, ranks or dtypes are incompatible with an operation."""


class InvalidConfigError(PvtError, ValueError):
    """Hyperparameters are inconsistent (e.g. heads do not divide channels)."""


class UnknownVariantError(InvalidConfigError):
    """Requested model variant is not part of the built-in grid."""


class ConfigParseError(PvtError, ValueError):
    """Text configuration could not be parsed."""

    def __init__(self, message, line_no=None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class WeightFormatError(PvtError):
    """Weight file does not start with the expected magic bytes."""


class WeightVersionError(WeightFormatError):
    """Weight file declares a format version this reader does not know."""


class WeightCorruptionError(WeightFormatError):
    """Weight file is truncated or its declared sizes are inconsistent."""


class WeightMismatchError(PvtError):
    """Weight store does not fit a model; lists every mismatch found."""

    def __init__(self, mismatches):
        self.mismatches = list(mismatches)
        lines = "\n  ".join(self.mismatches)
        super().__init__(f"{len(self.mismatches)} weight mismatch(es):\n  {lines}")


class GradientCheckError(PvtError):
    """Tape gradients disagree with finite differences."""


class OracleError(PvtError):
    """A fast kernel disagrees with its naive-loop reference."""
