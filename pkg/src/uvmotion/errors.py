"""Exception hierarchy.

Errors fall into three families that the command line maps to exit codes:
configuration problems (2), bad or unreadable data (3) and numerical
failures (4).
"""


class UVMotionError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(UVMotionError):
    pass


class DataError(UVMotionError):
    pass


class NumericalError(UVMotionError):
    pass


# geometry
class DegenerateInput(NumericalError):
    pass


class NoConsensus(NumericalError):
    pass


class AtInfinity(NumericalError):
    pass


# matching
class EmptyFrame(DataError):
    pass


class SizeMismatch(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(DataError):
    pass


class TooFewPairs(DataError):
    pass


# fields, profiles, optimizer
class GridMismatch(DataError):
    pass


class FrameMismatch(DataError):
    pass


class NonContiguousFrames(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class NonFiniteEnergy(NumericalError):
    pass


# warping
class DegenerateQuad(NumericalError):
    def __init__(self, cell, message="warped cell folds over"):
        super().__init__(f"{message} at cell (row={cell[0]}, col={cell[1]})")
        self.cell = cell


class EmptyInput(DataError):
    pass


# metrics
class TooShort(DataError):
    pass


class InsufficientTexture(DataError):
    pass


class NoMatches(DataError):
    pass


# synthetic rig
class TooSmall(ConfigError):
    pass


class WindowOutOfScene(ConfigError):
    pass
