"""Exceptions raised across the drying pipeline."""

from typing import Optional


class KilnError(Exception):
    """Base class for all errors raised by kiln."""


class MaterialDomainError(KilnError, ValueError):
    """A material law was evaluated outside its validity window."""


class ConfigError(KilnError, ValueError):
    """The run configuration holds an unknown key or an invalid value."""


class RankError(KilnError, ValueError):
    """A requested POD order exceeds the numerical rank of the snapshots."""


class ProvenanceError(KilnError):
    """An upstream artifact is missing, tampered or built from another config."""


class NumericalError(KilnError, RuntimeError):
    """A simulation diverged or an iterative search did not converge."""


class InfeasibleProblemError(KilnError):
    """The terminal moisture bound cannot be met even under full heating.

    Parameters
    ----------
    message: str
        Human-readable report.
    best_terminal_moisture: float, optional
        Terminal moisture reached with the input at its upper bound.

    """

    def __init__(
        self,
        message: str,
        best_terminal_moisture: Optional[float] = None,
    ) -> None:
        super().__init__(message)
        self.best_terminal_moisture = best_terminal_moisture
