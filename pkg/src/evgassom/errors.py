"""Exception hierarchy shared by all evgassom modules."""


class GassomError(Exception):
    """Base class for every error raised by this package."""


class DataError(GassomError, ValueError):
    """Malformed or inconsistent input data (CLI exit code 3)."""


# --- event formats -----------------------------------------------------------


class FormatError(DataError):
    """Binary stream could not be decoded. ``offset`` is the byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BadMagic(FormatError):
    pass


class TruncatedRecord(FormatError):
    pass


class NonMonotoneTimestamp(FormatError):
    pass


class OutOfRangeCoordinate(FormatError):
    pass


class LengthNotMultipleOf5(FormatError):
    pass


# --- surfaces / layers -------------------------------------------------------


class PatchLargerThanSensor(DataError):
    pass


class TimestampRegression(DataError):
    pass


class GeometryMismatch(DataError):
    pass


class BankShapeMismatch(DataError):
    pass


class ChainMismatch(DataError):
    pass


# --- subspace bank -----------------------------------------------------------


class NotPerfectSquare(DataError):
    pass


class HExceedsD(DataError):
    pass


class RankDeficient(GassomError, ArithmeticError):
    pass


class NumericalUnderflow(GassomError, ArithmeticError):
    pass


# --- simulator / classifier / export -----------------------------------------


class EmptyProgram(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyTrainingSet(DataError):
    pass


class TooFewSamples(DataError):
    pass


class WrongLayerShape(DataError):
    pass
