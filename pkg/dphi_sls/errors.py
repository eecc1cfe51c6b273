"""Errors for the D-Phi synthesis package."""

from __future__ import annotations


class DPhiError(Exception):
    """Base exception for D-Phi synthesis."""


class ConfigError(DPhiError):
    """Raised when a configuration or input document is invalid."""

    def __init__(self, message: str, *, line: int | None = None) -> None:
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class DimensionError(DPhiError):
    """Raised when matrix or vector dimensions do not conform."""


class PreconditionError(DPhiError):
    """Raised when an operation is called outside its domain."""


class ConvergenceError(DPhiError):
    """Raised when an iterative method stops before meeting its tolerances."""

    def __init__(
        self,
        message: str,
        *,
        iterations: int | None = None,
        residual: float | None = None,
    ) -> None:
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class InfeasibleError(DPhiError):
    """Raised when a problem that must have a solution has none."""


class UnsupportedError(DPhiError):
    """Raised when a criterion, problem class or mode combination is not supported."""


class DStepError(DPhiError):
    """Raised when a D step cannot certify the scaling it computed."""
