"""Error and warning types raised by shiftlab."""


class ShiftLabError(ValueError):
    """Base class for all shiftlab errors."""


class DimensionMismatchError(ShiftLabError):
    """Covariate or parameter dimensions do not agree."""


class NumericRangeError(ShiftLabError):
    """A weight or likelihood term overflowed the float64 range."""


class DegenerateLabelsError(ShiftLabError):
    """All source labels are identical and no ridge penalty was requested."""


class SingularSystemError(ShiftLabError):
    """The design matrix is collinear and the Newton system cannot be solved."""


class DegenerateClassError(ShiftLabError):
    """The estimated target prevalence is 0 or 1, so one class is absent."""


class ZeroCellError(ShiftLabError):
    """A multinomial cell probability or frequency is zero."""


class TooManyFailuresError(ShiftLabError):
    """Too many bootstrap replicates failed to produce a statistic."""


class ConvergenceError(ShiftLabError):
    """A fit did not converge where convergence was required."""


class ArtifactError(ShiftLabError):
    """A model artifact could not be read or validated."""


class DataFormatError(ShiftLabError):
    """A CSV file does not match the expected schema.

    Parameters
    ----------
    message : str
        Description of the problem
    row : int, optional
        1-based data row (header excluded) of the offending cell
    column : str, optional
        Name of the offending column
    """

    def __init__(self, message: str, row: int | None = None, column: str | None = None) -> None:
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        prefix = f"[{', '.join(location)}] " if location else ""
        super().__init__(f"{prefix}{message}")
        self.row = row
        self.column = column


class ConvergenceWarning(RuntimeWarning):
    """An iterative fit stopped before its gradient tolerance was met."""


class SeparationWarning(RuntimeWarning):
    """An unpenalized logistic fit shows signs of (quasi-)separation."""


class IdentificationWarning(UserWarning):
    """The data fail at least one identification diagnostic."""
