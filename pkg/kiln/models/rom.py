"""Galerkin reduced-order model of the drying chip.

The right-hand side lifts the coefficients to nodal fields, evaluates the
material laws there and projects the finite-volume balance back onto the
modes. The face fluxes are the full-order ones, so at full rank

    rom_rhs(c, u) == dV * Phi^T rhs_fom(lift(c), u)

holds up to rounding. Evaluation is batched over leading axes of ``c``.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt
import pandas as pd
import scipy.optimize
import scipy.sparse

from kiln.errors import NumericalError
from kiln.models.pod import PodBasis
from kiln.physics import material
from kiln.physics.constants import T_MAX_VALID, T_MIN_VALID
from kiln.physics.fom import FomSystem, SnapshotSet, check_fields, face_average
from kiln.physics.grid import Grid
from kiln.physics.material import MaterialParams
from kiln.utils.log import setup_logging


# Logging.
LOGGER = logging.getLogger(__name__)
setup_logging(print_level="INFO", logger=LOGGER)

Schedule = Union[Callable[[float], float], float]
FD_STEP = 1e-6
FD_SCHEMES = ("forward", "central")


class RomSystem:
    """Input-affine reduced dynamics dc/dt = f(c) + g(c) u.

    Parameters
    ----------
    basis: PodBasis
        Mean and modes defining the lift.
    grid: Grid
        Grid the basis lives on.
    params: MaterialParams
        Material constants.
    face_mean: str
        Face averaging of the full-order model.
    clamp: bool
        Clip lifted fields into the validity window instead of raising.

    """

    def __init__(
        self,
        basis: PodBasis,
        grid: Grid,
        params: MaterialParams,
        face_mean: str = "harmonic",
        clamp: bool = False,
    ) -> None:
        if basis.n_cells != grid.n_cells:
            raise ValueError(
                f"basis has {basis.n_cells} cells, grid has {grid.n_cells}"
            )
        if not math.isclose(basis.cell_volume, grid.cell_volume, rel_tol=1e-12):
            raise ValueError("basis and grid disagree on the cell volume")
        self.basis = basis
        self.grid = grid
        self.params = params
        self.face_mean = face_mean
        self.clamp = clamp
        self._fom = FomSystem(grid, params, face_mean)

        faces = grid.interior_faces
        surface = grid.boundary_faces
        self._faces = faces
        self._surface_cells = surface.cell
        # Discrete gradient of each moisture mode across every interior face.
        self._grad_x = basis.modes_x[faces.neighbour] - basis.modes_x[faces.owner]
        self._trace_x = basis.modes_x[surface.cell]
        n = grid.n_cells
        n_faces = faces.owner.size
        self._divergence = scipy.sparse.csr_matrix(
            (
                np.concatenate([np.ones(n_faces), -np.ones(n_faces)]),
                (
                    np.concatenate([faces.owner, faces.neighbour]),
                    np.concatenate([np.arange(n_faces), np.arange(n_faces)]),
                ),
            ),
            shape=(n, n_faces),
        )
        self._surface_sum = scipy.sparse.csr_matrix(
            (
                np.ones(surface.cell.size),
                (surface.cell, np.arange(surface.cell.size)),
            ),
            shape=(n, surface.cell.size),
        )
        self._input_weight = params.alpha * grid.face_area * grid.boundary_face_count

    @property
    def dim(self) -> int:
        """Reduced dimension n."""
        return self.basis.n

    @property
    def n_inputs(self) -> int:
        """Number of scalar inputs."""
        return 1

    def fields(
        self, c: npt.ArrayLike
    ) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
        """Lifted moisture and temperature fields, shape (..., N) each."""
        z = self.basis.lift(c)
        n = self.grid.n_cells
        x, T = z[..., :n], z[..., n:]
        if self.clamp:
            return np.maximum(x, 0.0), np.clip(T, T_MIN_VALID, T_MAX_VALID)
        check_fields(x, T, self.grid)
        return x, T

    def drift_and_input(
        self, c: npt.ArrayLike
    ) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
        """Return f(c) and g(c), each with the shape of ``c``."""
        c = np.asarray(c, dtype=np.float64)
        single = c.ndim == 1
        c2 = c[None, :] if single else c.reshape(-1, c.shape[-1])
        x, T = self.fields(c2)
        p = self.params
        h = self.grid.h
        area = self.grid.face_area
        faces = self._faces

        delta = material.mass_diffusivity(T, p)
        lam = material.heat_conductivity(x, p)
        s = np.asarray(material.heat_capacity_volumetric(x, p))
        k_x = face_average(
            delta[:, faces.owner, faces.axis],
            delta[:, faces.neighbour, faces.axis],
            self.face_mean,
        )
        k_T = face_average(
            lam[:, faces.owner, faces.axis],
            lam[:, faces.neighbour, faces.axis],
            self.face_mean,
        )
        q_x = k_x * (x[:, faces.neighbour] - x[:, faces.owner]) * h
        q_T = k_T * (T[:, faces.neighbour] - T[:, faces.owner]) * h
        cells = self._surface_cells
        gamma_x, gamma_T = material.boundary_fluxes(x[:, cells], T[:, cells], p)

        # Summation by parts: sum_i phi_i div_i = -sum_f q_f (phi_nbr - phi_own).
        dc_x = -(q_x @ self._grad_x) + (gamma_x * area) @ self._trace_x
        net_T = (
            self._divergence @ q_T.T + self._surface_sum @ (gamma_T * area).T
        ).T
        dc_T = (net_T / s) @ self.basis.modes_T
        g_T = (self._input_weight / s) @ self.basis.modes_T

        drift = np.concatenate([dc_x, dc_T], axis=1)
        inp = np.concatenate([np.zeros_like(dc_x), g_T], axis=1)
        if single:
            return drift[0], inp[0]
        return drift.reshape(c.shape), inp.reshape(c.shape)

    def drift(self, c: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Autonomous part f(c)."""
        return self.drift_and_input(c)[0]

    def input_vector(self, c: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Input column g(c), nonzero only on temperature coefficients."""
        return self.drift_and_input(c)[1]

    def input_matrix(self, c: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Input matrix of shape (n, 1)."""
        return self.input_vector(c)[:, None]

    def rhs(
        self, c: npt.ArrayLike, u: Union[float, npt.ArrayLike]
    ) -> npt.NDArray[np.float64]:
        """Time derivative f(c) + g(c) u; ``u`` broadcasts over batch axes."""
        f, g = self.drift_and_input(c)
        u = np.asarray(u, dtype=np.float64)
        return f + g * (u[..., None] if u.ndim else u)

    def stable_dt(
        self,
        c: npt.ArrayLike,
        u: Optional[float] = None,
        safety: float = 0.9,
    ) -> float:
        """Stability bound of the full-order model at the lifted state."""
        x, T = self.fields(np.asarray(c, dtype=np.float64))
        return self._fom.stable_dt(np.concatenate([x, T]), u, safety)


def rom_rhs(system: RomSystem, c: npt.ArrayLike, u: float) -> npt.NDArray[np.float64]:
    """Reduced right-hand side f(c) + g(c) u."""
    return system.rhs(c, u)


def jacobian(
    system: Any,
    c: npt.ArrayLike,
    u: Union[float, npt.ArrayLike],
    fd_step: float = FD_STEP,
    scale: Optional[float] = None,
    scheme: str = "forward",
) -> npt.NDArray[np.float64]:
    """State Jacobian d rhs / dc by finite differences in one batched call.

    Coordinate k is perturbed by ``fd_step * max(scale, |c_k|)``.

    Parameters
    ----------
    system: RomSystem or any system with a batched ``rhs``
        Dynamics to differentiate.
    c: np.ndarray
        Expansion point(s) of shape (..., n).
    u: float or np.ndarray
        Input held fixed, scalar or one value per expansion point.
    fd_step: float
        Relative perturbation per coordinate.
    scale: float, optional
        Floor of the perturbation scale. Defaults to 1 in field units, which
        is the square root of the chip volume for the volume weighted
        coefficients of a RomSystem and 1 for other systems.
    scheme: str
        ``"forward"`` (n + 1 evaluations) or ``"central"`` (2 n evaluations).

    Returns
    -------
    np.ndarray
        Jacobian(s) of shape (..., n, n).

    """
    if scheme not in FD_SCHEMES:
        raise ValueError(
            f"unknown difference scheme {scheme!r}; choose from {FD_SCHEMES}"
        )
    c = np.asarray(c, dtype=np.float64)
    n = c.shape[-1]
    if scale is None:
        grid = getattr(system, "grid", None)
        scale = math.sqrt(grid.volume) if grid is not None else 1.0
    steps = fd_step * np.maximum(scale, np.abs(c))
    eye = np.eye(n) * steps[..., None, :]
    plus = c[..., None, :] + eye
    if scheme == "forward":
        lower = c[..., None, :]
    else:
        lower = c[..., None, :] - eye
    u = np.asarray(u, dtype=np.float64)
    if u.ndim:
        u = np.broadcast_to(u[..., None], c.shape[:-1] + (n + lower.shape[-2],))
    values = system.rhs(np.concatenate([plus, lower], axis=-2), u)
    width = np.diagonal(plus - np.broadcast_to(lower, plus.shape), axis1=-2, axis2=-1)
    diff = values[..., :n, :] - values[..., n:, :]
    return np.asarray(np.swapaxes(diff, -1, -2) / width[..., None, :])


@dataclass
class RomTrajectory:
    """Coefficient trajectory of the reduced model.

    Attributes
    ----------
    times: np.ndarray
        Record times (s).
    coefficients: np.ndarray
        Coefficients, shape (k, n).
    total_moisture: np.ndarray
        Lifted X(t).

    """

    times: npt.NDArray[np.float64]
    coefficients: npt.NDArray[np.float64]
    total_moisture: npt.NDArray[np.float64]
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def final(self) -> npt.NDArray[np.float64]:
        """Last recorded coefficients."""
        return self.coefficients[-1]

    def to_frame(self) -> pd.DataFrame:
        """Tabulate as columns t, c_1..c_n, X."""
        frame = pd.DataFrame(
            self.coefficients,
            columns=[f"c_{k + 1}" for k in range(self.coefficients.shape[1])],
        )
        frame.insert(0, "t", self.times)
        frame["X"] = self.total_moisture
        return frame


def _as_callable(schedule: Schedule) -> Callable[[float], float]:
    if callable(schedule):
        return schedule
    value = float(schedule)
    return lambda t: value


def simulate_rom(
    system: RomSystem,
    c0: npt.ArrayLike,
    schedule: Schedule,
    dt: float,
    horizon: float,
    record_every: int = 1,
) -> RomTrajectory:
    """Integrate the reduced model with explicit Euler steps.

    Parameters
    ----------
    system: RomSystem
        Reduced model.
    c0: array-like
        Initial coefficients.
    schedule: callable or float
        Ambient temperature u(t), or a constant.
    dt: float
        Nominal step, shortened so that ``horizon`` is a whole number of steps.
    horizon: float
        Final time (s).
    record_every: int
        Record every ``record_every``-th step; the final state is always kept.

    Returns
    -------
    RomTrajectory
        Recorded coefficients with lifted total moisture.

    """
    c = np.array(c0, dtype=np.float64)
    if not np.all(np.isfinite(c)):
        raise NumericalError("initial coefficients are not finite")
    u_of_t = _as_callable(schedule)
    n_steps = max(1, int(math.ceil(horizon / dt - 1e-9)))
    dt = horizon / n_steps
    times = [0.0]
    states = [c.copy()]
    for step in range(n_steps):
        t = step * dt
        c = c + dt * system.rhs(c, u_of_t(t))
        if not np.all(np.isfinite(c)):
            raise NumericalError(
                f"reduced model diverged at t={(step + 1) * dt:g} s "
                f"(coefficient {int(np.flatnonzero(~np.isfinite(c))[0]) + 1})"
            )
        if (step + 1) % record_every == 0 or step + 1 == n_steps:
            times.append((step + 1) * dt)
            states.append(c.copy())
    coefficients = np.array(states)
    return RomTrajectory(
        np.array(times),
        coefficients,
        system.basis.total_moisture(coefficients),
        meta={"dt": dt, "n_steps": n_steps},
    )


def initial_coefficients(basis: PodBasis, z0: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Project an initial state onto the basis."""
    return basis.coefficients(z0)


def rom_steady_state(
    system: RomSystem,
    u0: float,
    c_init: npt.ArrayLike,
    tol: float = 1e-10,
    dt: Optional[float] = None,
    max_steps: int = 200_000,
) -> npt.NDArray[np.float64]:
    """Steady coefficients under constant ``u0``.

    Marches with explicit Euler from ``c_init`` until ``max|rhs| < tol``; if the
    step budget runs out, the last iterate is polished by a root search.

    Raises
    ------
    NumericalError
        If neither marching nor the root search meets the tolerance.

    """
    c = np.array(c_init, dtype=np.float64)
    step = dt if dt else system.stable_dt(c, u0)
    for count in range(max_steps):
        r = system.rhs(c, u0)
        if float(np.max(np.abs(r))) < tol:
            LOGGER.info(f"Reduced steady state under u0={u0:g} K after {count} steps")
            return c
        c = c + step * r
        if not np.all(np.isfinite(c)):
            raise NumericalError("reduced steady-state march diverged")

    solution = scipy.optimize.root(lambda v: system.rhs(v, u0), c, method="hybr")
    residual = float(np.max(np.abs(system.rhs(solution.x, u0))))
    if residual < tol:
        LOGGER.info(f"Reduced steady state polished by root search ({residual:.2e})")
        return np.asarray(solution.x)
    raise NumericalError(
        f"reduced steady state not found under u0={u0:g} K, residual {residual:.3e}"
    )


def compare_coefficients(
    basis: PodBasis,
    trajectory: RomTrajectory,
    snaps: SnapshotSet,
    n_modes: int = 3,
) -> pd.DataFrame:
    """Reduced versus projected full-order coefficients of the leading modes.

    The reduced trajectory must be recorded on the snapshot times.
    """
    if trajectory.times.shape != snaps.times.shape or not np.allclose(
        trajectory.times, snaps.times
    ):
        raise ValueError("trajectory and snapshots are on different time grids")
    projected = basis.coefficients(snaps.states)
    frame = pd.DataFrame({"t": snaps.times})
    labels = [f"x{k + 1}" for k in range(basis.n_x)] + [
        f"T{k + 1}" for k in range(basis.n_T)
    ]
    leading = list(range(min(n_modes, basis.n_x))) + [
        basis.n_x + k for k in range(min(n_modes, basis.n_T))
    ]
    for k in leading:
        frame[f"rom_{labels[k]}"] = trajectory.coefficients[:, k]
        frame[f"fom_{labels[k]}"] = projected[:, k]
    return frame
