"""Error metrics comparing approximate trajectories with reference runs."""

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
import numpy.typing as npt


def nrmse(reference: npt.ArrayLike, approximation: npt.ArrayLike) -> float:
    """Root-mean-square error normalized by the range of the reference.

    Parameters
    ----------
    reference: array-like
        Reference series.
    approximation: array-like
        Approximate series on the same time grid.

    Returns
    -------
    float
        RMS(reference - approximation) / (max(reference) - min(reference)).

    Raises
    ------
    ValueError
        If the series differ in shape or the reference is flat.

    """
    reference = np.asarray(reference, dtype=np.float64)
    approximation = np.asarray(approximation, dtype=np.float64)
    if reference.shape != approximation.shape:
        raise ValueError(
            f"time grids differ: {reference.shape} vs {approximation.shape}"
        )
    spread = float(reference.max() - reference.min())
    if not spread > 0.0:
        raise ValueError("reference series is flat, NRMSE undefined")
    return float(np.sqrt(np.mean((reference - approximation) ** 2)) / spread)


def max_abs_error(reference: npt.ArrayLike, approximation: npt.ArrayLike) -> float:
    """Largest absolute deviation between two series."""
    diff = np.asarray(reference, dtype=np.float64) - np.asarray(
        approximation, dtype=np.float64
    )
    return float(np.max(np.abs(diff)))


@dataclass
class FieldErrorReport:
    """Per-cell, per-time residuals of the moisture and temperature fields.

    Attributes
    ----------
    residual_x, residual_T: np.ndarray
        Reference minus approximation, shape (m, N).
    max_abs_x, max_abs_T: float
        Largest absolute residual per field.
    argmax_x, argmax_T: Tuple[int, int]
        (cell, time index) of the largest residual.
    nrmse_x, nrmse_T: float
        RMS residual over cells and times divided by the reference field
        range; NaN for a flat reference field.

    """

    residual_x: npt.NDArray[np.float64]
    residual_T: npt.NDArray[np.float64]
    max_abs_x: float
    max_abs_T: float
    argmax_x: Tuple[int, int]
    argmax_T: Tuple[int, int]
    nrmse_x: float
    nrmse_T: float

    def summary(self) -> Dict[str, object]:
        """Scalar metrics for reports."""
        return {
            "max_abs_x": self.max_abs_x,
            "max_abs_T": self.max_abs_T,
            "argmax_x": {"cell": self.argmax_x[0], "time_index": self.argmax_x[1]},
            "argmax_T": {"cell": self.argmax_T[0], "time_index": self.argmax_T[1]},
            "nrmse_x": self.nrmse_x,
            "nrmse_T": self.nrmse_T,
        }


def _field_stats(
    reference: npt.NDArray[np.float64],
    residual: npt.NDArray[np.float64],
) -> Tuple[float, Tuple[int, int], float]:
    flat = int(np.argmax(np.abs(residual)))
    time_index, cell = divmod(flat, residual.shape[1])
    spread = float(reference.max() - reference.min())
    rms = float(np.sqrt(np.mean(residual**2)))
    return (
        float(abs(residual.ravel()[flat])),
        (cell, time_index),
        rms / spread if spread > 0.0 else float("nan"),
    )


def field_error_maps(
    reference_states: npt.NDArray[np.float64],
    approx_states: npt.NDArray[np.float64],
) -> FieldErrorReport:
    """Compare stacked state trajectories field by field.

    Parameters
    ----------
    reference_states: np.ndarray
        Reference states, shape (m, 2N).
    approx_states: np.ndarray
        Approximate states on the same grid and times.

    Returns
    -------
    FieldErrorReport
        Residual maps with their maxima and field NRMSEs.

    """
    reference_states = np.atleast_2d(np.asarray(reference_states, dtype=np.float64))
    approx_states = np.atleast_2d(np.asarray(approx_states, dtype=np.float64))
    if reference_states.shape != approx_states.shape:
        raise ValueError(
            f"trajectories differ: {reference_states.shape} vs {approx_states.shape}"
        )
    n = reference_states.shape[1] // 2
    residual = reference_states - approx_states
    res_x, res_T = residual[:, :n], residual[:, n:]
    max_x, arg_x, nrmse_x = _field_stats(reference_states[:, :n], res_x)
    max_T, arg_T, nrmse_T = _field_stats(reference_states[:, n:], res_T)
    return FieldErrorReport(res_x, res_T, max_x, max_T, arg_x, arg_T, nrmse_x, nrmse_T)
