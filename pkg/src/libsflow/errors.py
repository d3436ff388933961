"""Exception hierarchy shared by every module.

Bad inputs derive from :class:`ValidationError` (itself a ``ValueError``)
and numerical failures from :class:`NumericError`. A missing run artifact
raises :class:`MissingArtifact`, which is an ``OSError``.
The command line maps each family to its own nonzero exit code.
"""


class LibsFlowError(Exception):
    """Base class for all package errors."""


class ValidationError(LibsFlowError, ValueError):
    """Input failed a documented precondition."""


class NumericError(LibsFlowError, ArithmeticError):
    """A computation produced non-finite values."""


class MissingArtifact(LibsFlowError, FileNotFoundError):
    """A fitted model file expected in a run directory is absent."""


# spectra
class NegativeIntensity(ValidationError):
    def __init__(self, row, col):
        super().__init__(f"negative intensity at row {row}, column {col}")
        self.row = row
        self.col = col


class NonMonotoneGrid(ValidationError):
    pass


class RaggedRow(ValidationError):
    def __init__(self, row, expected, got):
        super().__init__(f"row {row} has {got} values, expected {expected}")
        self.row = row


class NegativeConcentration(ValidationError):
    pass


class MissingSample(ValidationError):
    pass


class InvalidConfig(ValidationError):
    pass


class SizeMismatch(ValidationError):
    pass


# nmf
class RankOutOfBounds(ValidationError):
    pass


class AllZeroInput(ValidationError):
    pass


class ChannelMismatch(ValidationError):
    pass


class RankMismatch(ValidationError):
    pass


class NegativeLatent(ValidationError):
    pass


# flow / regress / uq
class DimTooSmall(ValidationError):
    pass


class DimMismatch(ValidationError):
    pass


class EmptyDataset(ValidationError):
    pass


class BTooSmall(ValidationError):
    pass


class DegenerateVariance(ValidationError, ArithmeticError):
    """R^2 is undefined because the targets have zero variance."""


class NonFiniteInput(NumericError, ValueError):
    pass
