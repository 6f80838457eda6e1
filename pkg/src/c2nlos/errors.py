"""Exception types raised across the package."""


class C2NlosError(Exception):
    """Base class for all package errors."""


class InvalidSinusoid(C2NlosError, ValueError):
    """Sinusoid parameters that no physical scatterer can produce."""


class RangeOverflow(C2NlosError, ValueError):
    """A return time falls beyond the end of the time axis."""


class CircleOutOfBounds(C2NlosError, ValueError):
    """Scan circle leaves the extent of a wall grid."""


class InsufficientPeaks(C2NlosError):
    """Fewer parameter-space maxima than requested exceed the score floor."""

    def __init__(self, message, found=()):
        super().__init__(message)
        self.found = list(found)


class NoIntersection(C2NlosError):
    """Three spheres with no common point.

    ``point`` holds the least-squares estimate and ``residual`` the RMS
    sphere-equation residual at that point (meters).
    """

    def __init__(self, message, point=None, residual=None):
        super().__init__(message)
        self.point = point
        self.residual = residual


class WindowOutOfRange(C2NlosError, ValueError):
    """Requested crop window is not covered by the sinogram v-axis."""


class EmptySinogram(C2NlosError, ValueError):
    """Sinogram carries no energy."""


class BudgetExceeded(C2NlosError, MemoryError):
    """Explicit system matrix would exceed the memory budget."""


class Diverged(C2NlosError, RuntimeError):
    """Iterative solver objective kept increasing."""


class MalformedHeader(C2NlosError, ValueError):
    pass


class SizeMismatch(C2NlosError, ValueError):
    pass


class UnsupportedDtype(C2NlosError, ValueError):
    pass
