"""Exception types raised by the library."""


class TobitKFError(Exception):
    """Base class for all library errors."""


class CorrelationOutOfRange(TobitKFError, ValueError):
    pass


class DegenerateRegion(TobitKFError, ArithmeticError):
    """A truncation region has (numerically) zero probability."""


class SingularInnovation(TobitKFError, ArithmeticError):
    pass


class SingularCensoredCovariance(TobitKFError, ArithmeticError):
    """The censored measurement covariance could not be factorized even with jitter."""


class InvalidWindow(TobitKFError, ValueError):
    pass


class NoInteriorMaximum(TobitKFError):
    """The likelihood maximum lies on the edge of the search grid.

    ``q`` holds the best grid value so callers can still report it; ``grid``
    and ``profile`` hold the evaluated log-likelihood profile when available.
    """

    def __init__(self, q: float, message: str = "", grid=None, profile=None):
        self.q = q
        self.grid = grid
        self.profile = profile
        super().__init__(message or f"likelihood maximum at grid endpoint q={q:g}")


class IndexOutOfRange(TobitKFError, IndexError):
    pass


class SchemaMismatch(TobitKFError, ValueError):
    pass


class EmptyFile(TobitKFError, ValueError):
    pass


class NonMonotoneTimestamps(TobitKFError, ValueError):
    pass


class NoOverlap(TobitKFError, ValueError):
    pass


class BenchmarkAborted(TobitKFError):
    """Too many benchmark iterations failed."""

    def __init__(self, n_failed: int, n_total: int):
        self.n_failed = n_failed
        self.n_total = n_total
        super().__init__(f"{n_failed} of {n_total} iterations aborted")
