"""Full-order finite-volume model of the drying chip.

The semi-discrete system is input-affine in the ambient temperature u,

    dz/dt = f(z) + g(z) u,

where g(z) is nonzero only in the temperature entries of surface cells. It is
integrated with explicit Euler steps bounded by ``FomSystem.stable_dt``.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import numpy.typing as npt
from tqdm import tqdm

from kiln.errors import ConfigError, MaterialDomainError, NumericalError
from kiln.physics import material
from kiln.physics.constants import T_MAX_VALID, T_MIN_VALID
from kiln.physics.grid import FullState, Grid, split_state
from kiln.physics.material import MaterialParams
from kiln.utils.log import setup_logging


# Logging.
LOGGER = logging.getLogger(__name__)
setup_logging(print_level="INFO", logger=LOGGER)

FACE_MEANS = ("harmonic", "arithmetic")
STABILITY_POLICIES = ("abort", "warn", "adapt")
STEADY_TOL = 1e-10

# Finite-difference steps of the boundary stiffness estimate.
_STIFFNESS_STEP_T = 1e-4
_STIFFNESS_STEP_X = 1e-7


class Ambient(ABC):
    """Ambient temperature as a function of time."""

    @abstractmethod
    def __call__(self, t: float) -> float:
        """Return the ambient temperature (K) at time ``t`` (s)."""


@dataclass(frozen=True)
class ConstantAmbient(Ambient):
    """Ambient temperature held at ``value``."""

    value: float

    def __call__(self, t: float) -> float:
        """Return the constant value."""
        return self.value


@dataclass(frozen=True)
class StepAmbient(Ambient):
    """Ambient temperature jumping from ``before`` to ``after`` at ``switch_time``."""

    before: float
    after: float
    switch_time: float = 0.0

    def __call__(self, t: float) -> float:
        """Return the value on the active side of the step."""
        return self.before if t < self.switch_time else self.after


@dataclass(frozen=True)
class ZeroOrderHoldAmbient(Ambient):
    """Piecewise-constant schedule, ``values[j]`` held on [j*hold, (j+1)*hold)."""

    values: Tuple[float, ...]
    hold: float

    def __post_init__(self) -> None:
        """Freeze the values."""
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.values:
            raise ValueError("schedule needs at least one value")
        if not self.hold > 0:
            raise ValueError("hold interval must be positive")

    def __call__(self, t: float) -> float:
        """Return the value of the hold interval containing ``t``."""
        j = math.floor(t / self.hold + 1e-9)
        return self.values[min(max(j, 0), len(self.values) - 1)]


def face_average(
    a: npt.NDArray[np.float64],
    b: npt.NDArray[np.float64],
    kind: str = "harmonic",
) -> npt.NDArray[np.float64]:
    """Face coefficient from the two adjacent cell coefficients."""
    if kind == "arithmetic":
        return 0.5 * (a + b)
    total = a + b
    return np.divide(
        2.0 * a * b, total, out=np.zeros_like(total), where=total > 0.0
    )


def check_fields(
    x: npt.NDArray[np.float64],
    T: npt.NDArray[np.float64],
    grid: Grid,
    t: Optional[float] = None,
) -> None:
    """Raise ``MaterialDomainError`` naming the first cell outside the window.

    Parameters
    ----------
    x, T: np.ndarray
        Moisture and temperature fields, shape (N,) or (B, N).
    grid: Grid
        Grid used to report the cell indices.
    t: float, optional
        Time stamp added to the message.

    """
    bad = (
        ~np.isfinite(x)
        | ~np.isfinite(T)
        | (x < 0.0)
        | (T < T_MIN_VALID)
        | (T > T_MAX_VALID)
    )
    if not np.any(bad):
        return
    flat = int(np.flatnonzero(bad.ravel())[0])
    row, cell = divmod(flat, grid.n_cells)
    where = f" at t={t:g} s" if t is not None else ""
    batch = f" (batch row {row})" if x.ndim > 1 else ""
    raise MaterialDomainError(
        f"cell {cell} {grid.unravel(cell)}{batch}{where} outside validity "
        f"window: x={x.ravel()[flat]:.6g}, T={T.ravel()[flat]:.6g}"
    )


@dataclass
class SnapshotSet:
    """States recorded at increasing times, with the total moisture series.

    Attributes
    ----------
    times: np.ndarray
        Snapshot times (s), shape (m,).
    states: np.ndarray
        Stacked states, shape (m, 2N).
    total_moisture: np.ndarray
        X(t_j), shape (m,).
    stride: int
        Number of integrator steps between records, when fixed.

    """

    times: npt.NDArray[np.float64]
    states: npt.NDArray[np.float64]
    total_moisture: npt.NDArray[np.float64]
    stride: int = 1
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        """Validate shapes and time ordering."""
        self.times = np.asarray(self.times, dtype=np.float64)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        self.total_moisture = np.asarray(self.total_moisture, dtype=np.float64)
        if self.states.shape[0] != self.times.size:
            raise ValueError("one state per snapshot time is required")
        if self.total_moisture.shape != self.times.shape:
            raise ValueError("one total-moisture value per snapshot is required")
        if self.states.shape[1] % 2:
            raise ValueError("states must have 2N entries")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("snapshot times must be strictly increasing")

    @classmethod
    def from_states(
        cls,
        times: npt.ArrayLike,
        states: npt.ArrayLike,
        stride: int = 1,
    ) -> "SnapshotSet":
        """Build a set computing the total moisture from the states."""
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        n = states.shape[1] // 2
        return cls(np.asarray(times), states, states[:, :n].mean(axis=1), stride)

    @property
    def n_snapshots(self) -> int:
        """Number of snapshots m."""
        return int(self.times.size)

    @property
    def n_cells(self) -> int:
        """Number of cells N."""
        return self.states.shape[1] // 2

    @property
    def moisture(self) -> npt.NDArray[np.float64]:
        """Moisture snapshots, shape (m, N)."""
        return self.states[:, : self.n_cells]

    @property
    def temperature(self) -> npt.NDArray[np.float64]:
        """Temperature snapshots, shape (m, N)."""
        return self.states[:, self.n_cells :]

    @property
    def final(self) -> npt.NDArray[np.float64]:
        """Last recorded state."""
        return self.states[-1]


class FomSystem:
    """Finite-volume right-hand side of the coupled heat and moisture balance.

    Parameters
    ----------
    grid: Grid
        Cell geometry.
    params: MaterialParams
        Material constants.
    face_mean: str
        ``"harmonic"`` or ``"arithmetic"`` averaging of face coefficients.

    """

    def __init__(
        self,
        grid: Grid,
        params: MaterialParams,
        face_mean: str = "harmonic",
    ) -> None:
        if face_mean not in FACE_MEANS:
            raise ConfigError(f"face_mean must be one of {FACE_MEANS}, got {face_mean}")
        self.grid = grid
        self.params = params
        self.face_mean = face_mean
        self._faces = grid.interior_faces
        self._boundary = grid.boundary_faces
        self._surface_cells = np.flatnonzero(grid.boundary_face_count)

    @property
    def dim(self) -> int:
        """Length 2N of the state vector."""
        return 2 * self.grid.n_cells

    @property
    def n_inputs(self) -> int:
        """Number of scalar inputs."""
        return 1

    def split(
        self, z: npt.NDArray[np.float64]
    ) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
        """Split a state into validated moisture and temperature fields."""
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.dim,):
            raise ValueError(f"expected state of length {self.dim}, got {z.shape}")
        x, T = split_state(z)
        check_fields(x, T, self.grid)
        return x, T

    def interior_fluxes(
        self,
        x: npt.NDArray[np.float64],
        T: npt.NDArray[np.float64],
    ) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
        """Moisture and heat flow through every interior face into its owner.

        The flow through a face is k_f (u_nbr - u_own) / h * h^2; the
        neighbour receives the same amount with opposite sign.
        """
        faces = self._faces
        delta = material.mass_diffusivity(T, self.params)
        lam = material.heat_conductivity(x, self.params)
        k_x = face_average(
            delta[faces.owner, faces.axis],
            delta[faces.neighbour, faces.axis],
            self.face_mean,
        )
        k_T = face_average(
            lam[faces.owner, faces.axis],
            lam[faces.neighbour, faces.axis],
            self.face_mean,
        )
        h = self.grid.h
        q_x = k_x * (x[faces.neighbour] - x[faces.owner]) * h
        q_T = k_T * (T[faces.neighbour] - T[faces.owner]) * h
        return q_x, q_T

    def _divergence(self, q: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        n = self.grid.n_cells
        faces = self._faces
        return np.bincount(faces.owner, weights=q, minlength=n) - np.bincount(
            faces.neighbour, weights=q, minlength=n
        )

    def drift_and_input(
        self, z: npt.NDArray[np.float64]
    ) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
        """Return f(z) and g(z) of the input-affine form."""
        x, T = self.split(z)
        n = self.grid.n_cells
        area = self.grid.face_area
        dv = self.grid.cell_volume
        s = material.heat_capacity_volumetric(x, self.params)

        q_x, q_T = self.interior_fluxes(x, T)
        cells = self._boundary.cell
        gamma_x, gamma_T = material.boundary_fluxes(x[cells], T[cells], self.params)
        net_x = self._divergence(q_x) + np.bincount(
            cells, weights=gamma_x * area, minlength=n
        )
        net_T = self._divergence(q_T) + np.bincount(
            cells, weights=gamma_T * area, minlength=n
        )
        f = np.concatenate([net_x / dv, net_T / (s * dv)])
        g_T = self.params.alpha * area * self.grid.boundary_face_count / (s * dv)
        g = np.concatenate([np.zeros(n), g_T])
        return f, g

    def drift(self, z: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        """Autonomous part f(z)."""
        return self.drift_and_input(z)[0]

    def input_vector(self, z: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        """Input column g(z)."""
        return self.drift_and_input(z)[1]

    def rhs(self, z: npt.NDArray[np.float64], u: float) -> npt.NDArray[np.float64]:
        """Time derivative f(z) + g(z) u."""
        f, g = self.drift_and_input(z)
        return f + g * u

    def stable_dt(
        self,
        z: npt.NDArray[np.float64],
        u: Optional[float] = None,
        safety: float = 0.9,
    ) -> float:
        """Largest explicit Euler step considered stable at state ``z``.

        The bound is ``safety / r`` with ``r`` the largest Gershgorin row sum
        of the linearized system: 6 D_max / h^2 for interior cells and the
        interior faces plus the boundary relaxation rates for surface cells.
        With zero transfer coefficients it equals safety h^2 / (6 D_max).
        """
        x, T = self.split(z)
        p = self.params
        h = self.grid.h
        delta = material.mass_diffusivity(T, p)
        lam = material.heat_conductivity(x, p)
        s = np.asarray(material.heat_capacity_volumetric(x, p))
        d_max = max(float(delta.max()), float((lam / s[:, None]).max()))
        rate = 6.0 * d_max / h**2

        cells = self._surface_cells
        if cells.size and (p.alpha > 0 or p.beta > 0):
            xb, Tb = x[cells], T[cells]
            gx, gT = material.boundary_fluxes(xb, Tb, p)
            step_T = np.where(
                Tb + _STIFFNESS_STEP_T <= T_MAX_VALID,
                _STIFFNESS_STEP_T,
                -_STIFFNESS_STEP_T,
            )
            gT_dT = (material.boundary_fluxes(xb, Tb + step_T, p)[1] - gT) / step_T
            gx_dx = (
                material.boundary_fluxes(xb + _STIFFNESS_STEP_X, Tb, p)[0] - gx
            ) / _STIFFNESS_STEP_X
            count = self.grid.boundary_face_count[cells]
            interior = (6.0 - count) * d_max / h**2
            row_T = interior + count * np.maximum(0.0, -gT_dT) / (s[cells] * h)
            row_x = interior + count * np.maximum(0.0, -gx_dx) / h
            rate = max(rate, float(row_T.max()), float(row_x.max()))
        return safety / rate


def step_explicit_euler(
    system: FomSystem,
    z: npt.NDArray[np.float64],
    u: float,
    dt: float,
    policy: str = "abort",
    safety: float = 0.9,
) -> npt.NDArray[np.float64]:
    """Advance one explicit Euler step ``z + dt * rhs(z, u)``.

    Parameters
    ----------
    system: FomSystem
        Model to advance.
    z: np.ndarray
        Current state.
    u: float
        Ambient temperature held over the step (K).
    dt: float
        Step size (s).
    policy: str
        ``"abort"`` raises when ``dt`` exceeds the stability bound,
        ``"warn"`` logs and proceeds.
    safety: float
        Safety factor of the stability bound.

    Returns
    -------
    np.ndarray
        State after the step.

    """
    if dt == 0.0:
        return np.array(z, dtype=np.float64)
    bound = system.stable_dt(z, u, safety)
    if dt > bound:
        message = f"dt={dt:.4g} s exceeds the stability bound {bound:.4g} s"
        if policy == "abort":
            raise NumericalError(message)
        LOGGER.warning(message)
    return np.asarray(z, dtype=np.float64) + dt * system.rhs(z, u)


def _raise_if_diverged(
    z: npt.NDArray[np.float64],
    t: float,
    grid: Grid,
) -> None:
    if np.all(np.isfinite(z)):
        return
    idx = int(np.flatnonzero(~np.isfinite(z))[0])
    field_name = "moisture" if idx < grid.n_cells else "temperature"
    cell = idx % grid.n_cells
    raise NumericalError(
        f"non-finite {field_name} at t={t:g} s in cell {cell} {grid.unravel(cell)}"
    )


def simulate(
    system: FomSystem,
    z0: npt.NDArray[np.float64],
    ambient: Ambient,
    horizon: float,
    n_snapshots: int = 100,
    dt: Optional[float] = None,
    stability: str = "adapt",
    safety: float = 0.9,
    progress: bool = False,
) -> SnapshotSet:
    """Integrate the full-order model and record equally spaced snapshots.

    Parameters
    ----------
    system: FomSystem
        Model to integrate.
    z0: np.ndarray
        Initial state, recorded as the first snapshot.
    ambient: Ambient
        Ambient temperature schedule.
    horizon: float
        Final time (s), recorded as the last snapshot.
    n_snapshots: int
        Number of snapshots m including both ends.
    dt: float, optional
        Nominal step size; the stability bound at ``z0`` when omitted.
    stability: str
        Reaction to a step above the current stability bound: ``"abort"``,
        ``"warn"`` or ``"adapt"`` (shrink the step).
    safety: float
        Safety factor of the stability bound.
    progress: bool
        Show a progress bar over snapshot intervals.

    Returns
    -------
    SnapshotSet
        Snapshots at ``linspace(0, horizon, n_snapshots)``.

    """
    if stability not in STABILITY_POLICIES:
        raise ConfigError(f"stability must be one of {STABILITY_POLICIES}")
    if n_snapshots < 2 or not horizon > 0:
        raise ValueError("need a positive horizon and at least two snapshots")
    z = np.array(z0, dtype=np.float64)
    system.split(z)
    times = np.linspace(0.0, horizon, n_snapshots)
    dt_nominal = dt if dt else system.stable_dt(z, ambient(0.0), safety)
    states = np.empty((n_snapshots, z.size))
    states[0] = z
    warned = False
    n_steps = 0

    intervals = range(1, n_snapshots)
    for j in tqdm(intervals, desc="fom", disable=not progress):
        t, t_end = times[j - 1], times[j]
        while t_end - t > 1e-9 * dt_nominal:
            remaining = t_end - t
            step = remaining / math.ceil(remaining / dt_nominal - 1e-9)
            u = ambient(t)
            bound = system.stable_dt(z, u, safety)
            if step > bound:
                if stability == "abort":
                    raise NumericalError(
                        f"dt={step:.4g} s exceeds the stability bound "
                        f"{bound:.4g} s at t={t:g} s"
                    )
                if stability == "warn":
                    if not warned:
                        LOGGER.warning(
                            f"dt={step:.4g} s exceeds the stability bound "
                            f"{bound:.4g} s at t={t:g} s"
                        )
                        warned = True
                else:
                    step = bound
            z = z + step * system.rhs(z, u)
            t += step
            n_steps += 1
            _raise_if_diverged(z, t, system.grid)
        states[j] = z

    LOGGER.info(
        f"Simulated {horizon:g} s in {n_steps} steps (nominal dt {dt_nominal:.4g} s)"
    )
    snaps = SnapshotSet.from_states(times, states)
    snaps.meta.update({"dt_nominal": dt_nominal, "n_steps": n_steps})
    return snaps


def uniform_equilibrium(grid: Grid, params: MaterialParams, u0: float) -> FullState:
    """Uniform state in hygroscopic and thermal equilibrium with the air at u0."""
    return FullState.uniform(grid, material.equilibrium_moisture(u0, params), u0)


def steady_state(
    system: FomSystem,
    u0: float,
    z_init: Optional[npt.NDArray[np.float64]] = None,
    tol: float = STEADY_TOL,
    dt: Optional[float] = None,
    max_time: float = 1e6,
    max_steps: Optional[int] = None,
    safety: float = 0.9,
) -> npt.NDArray[np.float64]:
    """March in time under constant ambient ``u0`` until the state stops moving.

    Parameters
    ----------
    system: FomSystem
        Model to integrate.
    u0: float
        Constant ambient temperature (K).
    z_init: np.ndarray, optional
        Starting state; the uniform equilibrium state when omitted.
    tol: float
        Detector threshold on ``max|rhs|`` per second.
    dt: float, optional
        Fixed step; the current stability bound when omitted.
    max_time: float
        Marching horizon before giving up (s).
    max_steps: int, optional
        Step budget before giving up.
    safety: float
        Safety factor of the stability bound.

    Returns
    -------
    np.ndarray
        Steady state.

    Raises
    ------
    NumericalError
        If the detector does not fire within the budget.

    """
    if z_init is None:
        z = uniform_equilibrium(system.grid, system.params, u0).z
    else:
        z = np.array(z_init, dtype=np.float64)
    t = 0.0
    steps = 0
    while True:
        r = system.rhs(z, u0)
        residual = float(np.max(np.abs(r)))
        if residual < tol:
            LOGGER.info(f"Steady state under u0={u0:g} K after {steps} steps")
            return z
        if t >= max_time or (max_steps is not None and steps >= max_steps):
            raise NumericalError(
                f"steady state not reached after {steps} steps ({t:g} s), "
                f"residual {residual:.3e}"
            )
        step = dt if dt else system.stable_dt(z, u0, safety)
        z = z + step * r
        t += step
        steps += 1
        _raise_if_diverged(z, t, system.grid)


def impulse_response(
    system: FomSystem,
    z_ss: npt.NDArray[np.float64],
    u0: float,
    h_d: float,
    horizon: float,
    dt: Optional[float] = None,
    tol: float = STEADY_TOL,
    stride: int = 1,
    method: str = "jump",
    stop_on_steady: bool = True,
) -> SnapshotSet:
    """Response of the model to an impulse of weight ``h_d`` in the ambient input.

    With ``method="jump"`` the impulse is the state jump
    ``z(0+) = z_ss + g(z_ss) h_d``; with ``method="pulse"`` the first step
    holds ``u0 + h_d / dt``. Afterwards the model runs under ``u0``.

    Parameters
    ----------
    system: FomSystem
        Model to integrate.
    z_ss: np.ndarray
        Steady state under ``u0``.
    u0: float
        Steady ambient temperature (K).
    h_d: float
        Impulse weight (K s).
    horizon: float
        Longest simulated time (s).
    dt: float, optional
        Fixed step; the stability bound at ``z_ss`` when omitted.
    tol: float
        Steady-state detector threshold.
    stride: int
        Record every ``stride``-th step.
    method: str
        ``"jump"`` or ``"pulse"``.
    stop_on_steady: bool
        Stop as soon as the detector fires.

    Returns
    -------
    SnapshotSet
        Recorded trajectory; ``final`` is the terminal state.

    """
    if method not in ("jump", "pulse"):
        raise ConfigError(f"unknown impulse method {method}")
    z_ss = np.asarray(z_ss, dtype=np.float64)
    dt = dt if dt else system.stable_dt(z_ss, u0)
    n_steps = int(math.ceil(horizon / dt - 1e-9))
    if method == "jump":
        z = z_ss + system.input_vector(z_ss) * h_d
        u_first = u0
    else:
        z = z_ss.copy()
        u_first = u0 + h_d / dt

    times = [0.0]
    states = [z.copy()]
    taken = 0
    for step in range(n_steps):
        u = u_first if step == 0 else u0
        r = system.rhs(z, u)
        if stop_on_steady and step > 0 and float(np.max(np.abs(r))) < tol:
            break
        z = z + dt * r
        taken = step + 1
        _raise_if_diverged(z, taken * dt, system.grid)
        if taken % stride == 0:
            times.append(taken * dt)
            states.append(z.copy())
    if taken % stride:
        times.append(taken * dt)
        states.append(z.copy())
    return SnapshotSet.from_states(np.array(times), np.array(states), stride)


def calibrate_mass_scale(
    grid: Grid,
    params: MaterialParams,
    x0: float,
    T0: float,
    ambient: float,
    horizon: float,
    target_fraction: float = 0.01,
    bounds: Tuple[float, float] = (1e-9, 1e-5),
    rel_tol: float = 0.02,
    face_mean: str = "harmonic",
) -> Tuple[float, List[Dict[str, float]]]:
    """Smallest mass diffusivity multiplier that dries the chip within ``horizon``.

    Bisects log10(diffusivity_scale_mass) until X(horizon) after a step from
    ``T0`` to ``ambient`` lies within ``target_fraction`` of the total drop
    from ``x0`` to the equilibrium moisture at ``ambient``.

    Parameters
    ----------
    grid: Grid
        Chip discretization.
    params: MaterialParams
        Material; every constant except the mass multiplier is kept.
    x0, T0: float
        Uniform initial moisture and temperature.
    ambient: float
        Ambient temperature after the step (K).
    horizon: float
        Drying time to match (s).
    target_fraction: float
        Accepted residual share of the total moisture drop.
    bounds: Tuple[float, float]
        Search bracket of the multiplier.
    rel_tol: float
        Relative width of the final bracket.
    face_mean: str
        Face averaging of the model.

    Returns
    -------
    Tuple[float, List[Dict[str, float]]]
        Multiplier and the evaluated (scale, gap, settled) history.

    Raises
    ------
    NumericalError
        If the upper bound of the bracket does not dry the chip.

    """
    x_eq = material.equilibrium_moisture(ambient, params)
    z0 = FullState.uniform(grid, x0, T0).z
    threshold = target_fraction * abs(x0 - x_eq)
    history: List[Dict[str, float]] = []

    def settled(log_scale: float) -> bool:
        scale = 10.0**log_scale
        system = FomSystem(
            grid, params.replace(diffusivity_scale_mass=scale), face_mean
        )
        snaps = simulate(system, z0, StepAmbient(T0, ambient), horizon, n_snapshots=2)
        gap = abs(float(snaps.total_moisture[-1]) - x_eq)
        history.append({"scale": scale, "gap": gap, "settled": float(gap < threshold)})
        LOGGER.info(f"Mass scale {scale:.4e}: |X(t_f) - X_eq| = {gap:.4e}")
        return gap < threshold

    lo, hi = math.log10(bounds[0]), math.log10(bounds[1])
    if not settled(hi):
        raise NumericalError(
            f"mass scale {bounds[1]:g} does not dry the chip within {horizon:g} s"
        )
    if settled(lo):
        return bounds[0], history
    while hi - lo > math.log10(1.0 + rel_tol):
        mid = 0.5 * (lo + hi)
        if settled(mid):
            hi = mid
        else:
            lo = mid
    return 10.0**hi, history
