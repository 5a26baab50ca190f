"""Exception hierarchy shared by every module."""

from __future__ import annotations


class X0LabError(Exception):
    """Base class for all errors raised by the package."""


class DomainError(X0LabError, ValueError):
    """A time argument fell outside the admissible range."""


class SingularConversionError(X0LabError, ArithmeticError):
    """A conversion denominator vanished (|denominator| < 1e-12)."""


class VPRequiredError(X0LabError, ValueError):
    """The v-parameterization was requested on a non variance-preserving schedule."""


class GammaOverflowError(X0LabError, ArithmeticError):
    """Stochastic sampler noise exceeds the available variance sigma_prev**2."""


class IllConditionedError(X0LabError, ArithmeticError):
    """The oracle's marginal covariance is too ill-conditioned to invert."""


class IncompatibleModeError(X0LabError, ValueError):
    """A supervision mode is not valid for the predictor kind or schedule."""


class TrainingDivergence(X0LabError, RuntimeError):
    """Training produced a non-finite value or a loss above the abort threshold."""
