"""Exception types raised by hjblab."""

from typing import Optional


class HJBLabError(Exception):
    """Base class for every error raised on purpose by this package."""


class InvalidInputError(HJBLabError, ValueError):
    """An argument is outside the domain an operation accepts."""


class ConfigurationError(HJBLabError):
    """A run configuration cannot be turned into a problem."""


class CovarianceDegeneracyError(HJBLabError):
    """Q_t could not be factorized even after jitter."""

    def __init__(self, t: float, min_eigenvalue: float, jitter: float):
        self.t = t
        self.min_eigenvalue = min_eigenvalue
        self.jitter = jitter
        super().__init__(
            f"Covariance at t={t:g} is not positive definite after jitter {jitter:.3e} "
            f"(smallest eigenvalue {min_eigenvalue:.3e})"
        )


class OptimizerError(HJBLabError):
    """A numerical optimization hit its iteration cap."""

    def __init__(self, message: str, best_value: float, gap: Optional[float] = None):
        self.best_value = best_value
        self.gap = gap
        gap_text = "unknown" if gap is None else f"{gap:.3e}"
        super().__init__(f"{message} (best value {best_value:.6g}, gap estimate {gap_text})")


class SampleRejectionError(HJBLabError):
    """Too many Monte Carlo samples produced non-finite values."""

    def __init__(self, rejected: int, total: int):
        self.rejected = rejected
        self.total = total
        super().__init__(
            f"{rejected} of {total} samples were non-finite "
            f"({rejected / total:.3%}), above the allowed fraction"
        )
