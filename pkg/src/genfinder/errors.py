"""Exception hierarchy shared by every genfinder module."""


class GenfinderError(Exception):
    """Base class for all errors raised by genfinder."""


class DegenerateSpectrum(GenfinderError):
    """Two eigenvalues are closer than the separation tolerance."""


class NonDiagonalizable(GenfinderError):
    """The eigenvector matrix could not be inverted to a biorthogonal pair."""


class LogUndefined(GenfinderError):
    """An eigenvalue lies within tolerance of the closed negative real axis."""

    def __init__(self, message, eigenvalue=None, lone=False):
        super().__init__(message)
        self.eigenvalue = eigenvalue
        # a non-degenerate negative eigenvalue admits no flip-invariant (or real) logarithm
        self.lone = lone


class Overflow(GenfinderError, OverflowError):
    """Matrix exponential argument exceeds the documented norm cap."""


class NotSquareOfSquare(GenfinderError, ValueError):
    """Matrix dimension is not a perfect square d**2."""


class NotHermitian(GenfinderError, ValueError):
    pass


class DimensionMismatch(GenfinderError, ValueError):
    pass


class InvalidSnapshot(GenfinderError, ValueError):
    """Snapshot failed validation where a valid one is required."""


class InconsistentSeries(GenfinderError, ValueError):
    pass


class NotLindblad(GenfinderError, ValueError):
    pass


class ParseError(GenfinderError, ValueError):
    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class InvalidClause(ParseError):
    pass


class TooLarge(GenfinderError, ValueError):
    pass


class BalancingFailed(GenfinderError):
    pass
