"""
Exception hierarchy for serocontact.

Every error carries a human readable ``detail`` and the ``exit_code`` the CLI
returns when the error escapes a command: 2 for usage, configuration and data
problems, 1 for numerical failures.
"""
from typing import Any, List, Optional


class SeroContactError(Exception):
    """Base class for all errors raised by the package."""

    exit_code: int = 1

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code

    def __str__(self) -> str:
        return self.detail


class ConfigError(SeroContactError):
    """Invalid run configuration, missing input file or unknown model name."""

    exit_code = 2


class DataValidationError(SeroContactError):
    """An input file does not match its schema."""

    exit_code = 2

    def __init__(self, detail: str, line: Optional[int] = None, path: Optional[str] = None):
        prefix = ""
        if path is not None:
            prefix += f"{path}: "
        if line is not None:
            prefix += f"line {line}: "
        super().__init__(prefix + detail)
        self.line = line
        self.path = path


class DomainError(SeroContactError, ValueError):
    """An argument lies outside the domain of an operation."""

    exit_code = 2


class NumericalError(SeroContactError):
    """A numerical procedure failed."""

    exit_code = 1


class ConvergenceError(NumericalError):
    """An iterative estimation procedure did not converge.

    Attributes:
        best_iterate: Best parameter vector reached before giving up
        trace: Objective (or residual) values recorded per iteration
    """

    def __init__(self, detail: str, best_iterate: Any = None, trace: Optional[List[float]] = None):
        super().__init__(detail)
        self.best_iterate = best_iterate
        self.trace = list(trace) if trace is not None else []


class SmoothingError(ConvergenceError):
    """Penalized IRLS for the contact surface diverged or stalled."""


class FixedPointError(ConvergenceError):
    """The force-of-infection fixed-point iteration did not converge."""

    def __init__(self, detail: str, residual: float, best_iterate: Any = None,
                 trace: Optional[List[float]] = None):
        super().__init__(detail, best_iterate=best_iterate, trace=trace)
        self.residual = residual


class InsufficientReplicatesError(NumericalError):
    """Too few converged bootstrap replicates for the requested summary."""
