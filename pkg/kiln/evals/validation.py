"""Validation of the reduced model against full-order simulations."""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import numpy.typing as npt
import pandas as pd

from kiln.errors import MaterialDomainError, NumericalError
from kiln.evals.evaluation import max_abs_error, nrmse
from kiln.models.rom import RomSystem, initial_coefficients, simulate_rom
from kiln.physics.constants import AMBIENT_REFERENCE, VALIDATION_TEMPERATURES
from kiln.physics.fom import FomSystem, StepAmbient, impulse_response, simulate
from kiln.utils.log import setup_logging


# Logging.
LOGGER = logging.getLogger(__name__)
setup_logging(print_level="INFO", logger=LOGGER)


@dataclass
class ScenarioResult:
    """Total moisture of both models after one ambient step."""

    ambient: float
    times: npt.NDArray[np.float64]
    fom_total_moisture: npt.NDArray[np.float64]
    rom_total_moisture: npt.NDArray[np.float64]
    nrmse: float
    max_abs: float
    stable: bool = True


@dataclass
class ValidationReport:
    """Scenario results with the worst-case error across scenarios."""

    scenarios: List[ScenarioResult]
    extras: Dict[str, Any] = field(default_factory=dict)

    @property
    def max_abs(self) -> float:
        """Largest absolute X(t) error over all scenarios."""
        return max(s.max_abs for s in self.scenarios)

    @property
    def worst_ambient(self) -> float:
        """Ambient step with the largest absolute error."""
        return max(self.scenarios, key=lambda s: s.max_abs).ambient

    def to_frame(self) -> pd.DataFrame:
        """Long-format plot data: ambient, t, X_fom, X_rom."""
        frames = [
            pd.DataFrame(
                {
                    "ambient": s.ambient,
                    "t": s.times,
                    "X_fom": s.fom_total_moisture,
                    "X_rom": s.rom_total_moisture,
                }
            )
            for s in self.scenarios
        ]
        return pd.concat(frames, ignore_index=True)

    def summary(self) -> Dict[str, Any]:
        """Scalar metrics per scenario and overall."""
        return {
            "scenarios": [
                {
                    "ambient": s.ambient,
                    "nrmse": s.nrmse,
                    "max_abs": s.max_abs,
                    "stable": s.stable,
                }
                for s in self.scenarios
            ],
            "max_abs": self.max_abs,
            "worst_ambient": self.worst_ambient,
            **self.extras,
        }


def _safe_nrmse(reference: npt.NDArray[np.float64], approx: npt.NDArray[np.float64]) -> float:
    try:
        return nrmse(reference, approx)
    except ValueError:
        return float("nan")


def validate_against_fom(
    rom: RomSystem,
    fom: FomSystem,
    z0: npt.NDArray[np.float64],
    temperatures: Sequence[float] = VALIDATION_TEMPERATURES,
    horizon: float = 1100.0,
    n_points: int = 100,
    initial_ambient: float = AMBIENT_REFERENCE,
    rom_dt: Optional[float] = None,
) -> ValidationReport:
    """Run both models through ambient steps and compare X(t).

    Parameters
    ----------
    rom: RomSystem
        Reduced model.
    fom: FomSystem
        Full-order model on the same grid and material.
    z0: np.ndarray
        Common initial state.
    temperatures: Sequence[float]
        Ambient temperatures after the step at t = 0 (K).
    horizon: float
        Simulated time (s).
    n_points: int
        Number of compared time points.
    initial_ambient: float
        Ambient temperature before the step (K).
    rom_dt: float, optional
        Reduced-model step; the stability bound at the lifted ``z0`` by default.

    Returns
    -------
    ValidationReport
        Per-scenario NRMSE and maximum absolute error of X(t).

    """
    c0 = initial_coefficients(rom.basis, z0)
    interval = horizon / (n_points - 1)
    dt = rom_dt if rom_dt else rom.stable_dt(c0, max(temperatures))
    substeps = max(1, math.ceil(interval / dt - 1e-9))
    scenarios = []
    for ambient_value in temperatures:
        ambient = StepAmbient(initial_ambient, ambient_value)
        reference = simulate(fom, z0, ambient, horizon, n_points)
        try:
            reduced = simulate_rom(
                rom, c0, ambient, interval / substeps, horizon, record_every=substeps
            ).total_moisture
        except (NumericalError, MaterialDomainError) as err:
            # Low orders may be unstable; reported, not raised.
            LOGGER.warning(f"Reduced model unstable for step to {ambient_value:g} K: {err}")
            scenarios.append(
                ScenarioResult(
                    ambient=float(ambient_value),
                    times=reference.times,
                    fom_total_moisture=reference.total_moisture,
                    rom_total_moisture=np.full_like(reference.total_moisture, np.nan),
                    nrmse=float("nan"),
                    max_abs=float("inf"),
                    stable=False,
                )
            )
            continue
        result = ScenarioResult(
            ambient=float(ambient_value),
            times=reference.times,
            fom_total_moisture=reference.total_moisture,
            rom_total_moisture=reduced,
            nrmse=_safe_nrmse(reference.total_moisture, reduced),
            max_abs=max_abs_error(reference.total_moisture, reduced),
        )
        LOGGER.info(
            f"Step to {ambient_value:g} K: NRMSE {100 * result.nrmse:.3f}%, "
            f"max |dX| {result.max_abs:.3e}"
        )
        scenarios.append(result)
    return ValidationReport(scenarios)


def compare_impulse_responses(
    rom: RomSystem,
    fom: FomSystem,
    z_ss: npt.NDArray[np.float64],
    c_ss: npt.NDArray[np.float64],
    u0: float,
    h_d: float,
    horizon: float,
    dt: float,
) -> ScenarioResult:
    """Compare the total-moisture response of both models to one impulse.

    Both models start from their own steady state, receive the state jump
    of weight ``h_d`` and run for ``horizon`` with the same step ``dt``.
    """
    reference = impulse_response(
        fom, z_ss, u0, h_d, horizon, dt=dt, stop_on_steady=False
    )
    c_jump = c_ss + rom.input_vector(c_ss) * h_d
    reduced = simulate_rom(rom, c_jump, u0, dt, reference.times[-1])
    return ScenarioResult(
        ambient=u0,
        times=reference.times,
        fom_total_moisture=reference.total_moisture,
        rom_total_moisture=reduced.total_moisture,
        nrmse=_safe_nrmse(reference.total_moisture, reduced.total_moisture),
        max_abs=max_abs_error(reference.total_moisture, reduced.total_moisture),
    )
