"""Energy-optimal drying schedules on the reduced model.

The ambient temperature is held piecewise constant on a grid of step dt and
the heating cost

    J = sum_{j=0}^{m} (u_j - 298.15) dt

is minimized subject to box bounds and the terminal moisture constraint
X(t_f) <= X_f. The constraint enters an augmented Lagrangian whose gradient is
the discrete adjoint of the explicit Euler rollout; each subproblem is solved
by projected gradient descent with a backtracking line search.
"""

import dataclasses
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
import pandas as pd
from tqdm import tqdm

from kiln.errors import (
    ConfigError,
    InfeasibleProblemError,
    MaterialDomainError,
    NumericalError,
)
from kiln.models.pod import PodDecomposition, split_order
from kiln.models.rom import FD_SCHEMES, FD_STEP, RomSystem, jacobian
from kiln.physics.constants import AMBIENT_REFERENCE
from kiln.physics.fom import FomSystem, ZeroOrderHoldAmbient, simulate
from kiln.physics.grid import Grid
from kiln.physics.material import MaterialParams
from kiln.utils.log import setup_logging


# Logging.
LOGGER = logging.getLogger(__name__)
setup_logging(print_level="INFO", logger=LOGGER)

SWITCH_HYSTERESIS = 1.0


@dataclass(frozen=True, eq=False)
class OcpSpec:
    """Discretized optimal control problem on a reduced model.

    Attributes
    ----------
    rom: RomSystem
        Reduced dynamics.
    c0: np.ndarray
        Initial coefficients.
    t_f: float
        Horizon (s).
    dt: float
        Zero-order-hold and Euler step (s).
    u_min, u_max: float
        Closed input bounds (K).
    target: float
        Terminal moisture bound X_f (kg/kg).
    baseline: float
        Input level of zero cost (K).

    """

    rom: RomSystem
    c0: npt.NDArray[np.float64]
    t_f: float = 600.0
    dt: float = 1.0
    u_min: float = 298.15
    u_max: float = 373.15
    target: float = 0.1
    baseline: float = AMBIENT_REFERENCE

    def __post_init__(self) -> None:
        """Check the bounds and the time grid."""
        object.__setattr__(self, "c0", np.asarray(self.c0, dtype=np.float64))
        if self.c0.shape != (self.rom.dim,):
            raise ConfigError(
                f"initial coefficients must have length {self.rom.dim}"
            )
        if not self.u_min < self.u_max:
            raise ConfigError(f"u_min={self.u_min} must be below u_max={self.u_max}")
        if not self.dt > 0 or not self.t_f > 0:
            raise ConfigError("t_f and dt must be positive")
        m = round(self.t_f / self.dt)
        if m < 1 or abs(m * self.dt - self.t_f) > 1e-9 * self.t_f:
            raise ConfigError(f"t_f={self.t_f} is not a multiple of dt={self.dt}")

    @property
    def n_steps(self) -> int:
        """Number m of hold intervals."""
        return int(round(self.t_f / self.dt))

    @property
    def times(self) -> npt.NDArray[np.float64]:
        """Grid times t_0..t_m."""
        return np.arange(self.n_steps + 1) * self.dt

    def constant(self, level: float) -> npt.NDArray[np.float64]:
        """Schedule holding ``level`` at every grid time."""
        return np.full(self.n_steps + 1, float(level))

    def check_schedule(self, schedule: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Return the schedule as an array after checking length and bounds."""
        u = np.asarray(schedule, dtype=np.float64)
        if u.shape != (self.n_steps + 1,):
            raise ValueError(
                f"schedule must have {self.n_steps + 1} entries, got {u.shape}"
            )
        if np.any(u < self.u_min - 1e-9) or np.any(u > self.u_max + 1e-9):
            raise ValueError("schedule leaves the input bounds")
        return u


@dataclass(frozen=True)
class SolverSettings:
    """Augmented Lagrangian and projected gradient parameters.

    Attributes
    ----------
    n_starts: int
        Number of constant start levels spanning [u_min, u_max].
    max_outer, max_inner: int
        Iteration limits of the multiplier loop and of each subproblem.
    mu0, mu_growth, mu_max: float
        Initial penalty weight, its growth per outer iteration and its cap.
    constraint_tol: float
        Accepted terminal constraint violation (kg/kg).
    gradient_tol: float
        Projected gradient tolerance relative to dt * m.
    armijo, backtrack: float
        Sufficient decrease constant and step shrink factor.
    max_backtracks: int
        Line search trials before a subproblem counts as stalled.
    fd_step: float
        Relative finite-difference step of the reduced Jacobians.
    fd_scheme: str
        Difference scheme of the reduced Jacobians, "forward" or "central".
    workers: int
        Processes running multistart branches; 1 runs inline.

    """

    n_starts: int = 5
    max_outer: int = 30
    max_inner: int = 200
    mu0: float = 1e3
    mu_growth: float = 10.0
    mu_max: float = 1e9
    constraint_tol: float = 1e-4
    gradient_tol: float = 1e-6
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    fd_step: float = FD_STEP
    fd_scheme: str = "forward"
    workers: int = 1

    def __post_init__(self) -> None:
        """Validate limits."""
        if self.n_starts < 1 or self.max_outer < 1 or self.max_inner < 1:
            raise ConfigError("iteration limits and n_starts must be positive")
        if not (self.mu0 > 0 and self.mu_growth >= 1 and self.mu_max >= self.mu0):
            raise ConfigError("need mu0 > 0, mu_growth >= 1 and mu_max >= mu0")
        if not 0 < self.backtrack < 1 or not 0 < self.armijo < 1:
            raise ConfigError("armijo and backtrack must lie in (0, 1)")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.fd_scheme not in FD_SCHEMES:
            raise ConfigError(f"fd_scheme must be one of {FD_SCHEMES}")


@dataclass
class Rollout:
    """Reduced trajectory under a schedule."""

    coefficients: npt.NDArray[np.float64]
    moisture: npt.NDArray[np.float64]

    @property
    def terminal_moisture(self) -> float:
        """X(t_f)."""
        return float(self.moisture[-1])


@dataclass
class StartRecord:
    """Outcome of one multistart branch."""

    index: int
    level: float
    cost: float
    terminal_moisture: float
    feasible: bool
    converged: bool
    outer_iterations: int
    inner_iterations: int


@dataclass
class OcpResult:
    """Optimal schedule with diagnostics.

    Attributes
    ----------
    schedule: np.ndarray
        Inputs u_0..u_m (K).
    times: np.ndarray
        Grid times t_0..t_m (s).
    cost: float
        Heating cost J recomputed from ``schedule``.
    terminal_moisture: float
        X(t_f) of the reduced model.
    constraint_residual: float
        X(t_f) - X_f.
    switch_points: List[float]
        Times where the schedule crosses mid-range.
    outer_iterations, inner_iterations: int
        Iterations of the selected branch.
    converged: bool
        Whether the selected branch met both tolerances.
    status: str
        ``"optimal"``, ``"stagnated"``, ``"lower-bound"`` or ``"upper-bound"``.
    start_index: int
        Multistart branch the result came from, -1 for the closed-form cases.
    starts: List[StartRecord]
        All branches.

    """

    schedule: npt.NDArray[np.float64]
    times: npt.NDArray[np.float64]
    cost: float
    terminal_moisture: float
    constraint_residual: float
    switch_points: List[float]
    outer_iterations: int
    inner_iterations: int
    converged: bool
    status: str
    start_index: int = -1
    starts: List[StartRecord] = field(default_factory=list)
    moisture: Optional[npt.NDArray[np.float64]] = None

    def schedule_frame(self) -> pd.DataFrame:
        """Schedule as columns t, u."""
        return pd.DataFrame({"t": self.times, "u": self.schedule})

    def moisture_frame(self) -> pd.DataFrame:
        """Reduced-model X(t) as columns t, X."""
        return pd.DataFrame({"t": self.times, "X": self.moisture})

    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready summary without the arrays."""
        return {
            "cost": self.cost,
            "terminal_moisture": self.terminal_moisture,
            "constraint_residual": self.constraint_residual,
            "switch_points": list(self.switch_points),
            "outer_iterations": self.outer_iterations,
            "inner_iterations": self.inner_iterations,
            "converged": self.converged,
            "status": self.status,
            "start_index": self.start_index,
            "starts": [dataclasses.asdict(record) for record in self.starts],
        }


def evaluate_cost(
    schedule: npt.ArrayLike,
    dt: float = 1.0,
    baseline: float = AMBIENT_REFERENCE,
) -> float:
    """Heating cost sum_j (u_j - baseline) dt in K s."""
    u = np.asarray(schedule, dtype=np.float64)
    return float(np.sum(u - baseline) * dt)


def rollout(spec: OcpSpec, schedule: npt.ArrayLike) -> Rollout:
    """Explicit Euler rollout of the reduced model under a held schedule.

    Raises
    ------
    NumericalError
        If the coefficients stop being finite.

    """
    u = spec.check_schedule(schedule)
    m = spec.n_steps
    c = np.empty((m + 1, spec.rom.dim))
    c[0] = spec.c0
    for j in range(m):
        c[j + 1] = c[j] + spec.dt * spec.rom.rhs(c[j], u[j])
        if not np.all(np.isfinite(c[j + 1])):
            raise NumericalError(
                f"reduced model diverged at t={(j + 1) * spec.dt:g} s under "
                f"u={u[j]:g} K (coefficient "
                f"{int(np.flatnonzero(~np.isfinite(c[j + 1]))[0]) + 1})"
            )
    return Rollout(c, spec.rom.basis.total_moisture(c))


def terminal_moisture(spec: OcpSpec, schedule: npt.ArrayLike) -> float:
    """X(t_f) of the rollout."""
    return rollout(spec, schedule).terminal_moisture


def _adjoint_gradient(
    spec: OcpSpec,
    u: npt.NDArray[np.float64],
    states: npt.NDArray[np.float64],
    fd_step: float,
    fd_scheme: str = "forward",
) -> npt.NDArray[np.float64]:
    m = spec.n_steps
    rom = spec.rom
    head = states[:m]
    jacobians = jacobian(rom, head, u[:m], fd_step, scheme=fd_scheme)
    inputs = rom.input_vector(head)
    grad = np.zeros(m + 1)
    p = np.concatenate([rom.basis.moisture_weights, np.zeros(rom.basis.n_T)])
    for j in range(m - 1, -1, -1):
        grad[j] = spec.dt * (p @ inputs[j])
        p = p + spec.dt * (jacobians[j].T @ p)
    return grad


def constraint_gradient(
    spec: OcpSpec,
    schedule: npt.ArrayLike,
    fd_step: float = FD_STEP,
    fd_scheme: str = "forward",
) -> npt.NDArray[np.float64]:
    """Adjoint gradient of X(t_f) with respect to u_0..u_m.

    The last entry is zero because u_m holds no interval.
    """
    u = spec.check_schedule(schedule)
    path = rollout(spec, u)
    return _adjoint_gradient(spec, u, path.coefficients, fd_step, fd_scheme)


def _penalty(g: float, lam: float, mu: float) -> Tuple[float, float]:
    shifted = max(0.0, g + lam / mu)
    return 0.5 * mu * (shifted**2 - (lam / mu) ** 2), max(0.0, lam + mu * g)


def augmented_objective(
    spec: OcpSpec,
    schedule: npt.ArrayLike,
    multiplier: float,
    penalty: float,
    with_gradient: bool = True,
    fd_step: float = FD_STEP,
    fd_scheme: str = "forward",
) -> Tuple[float, Optional[npt.NDArray[np.float64]], float]:
    """Cost plus the augmented Lagrangian term of the terminal constraint.

    Parameters
    ----------
    spec: OcpSpec
        Problem.
    schedule: array-like
        Inputs u_0..u_m.
    multiplier: float
        Estimate of the constraint multiplier (>= 0).
    penalty: float
        Penalty weight; 0 drops the constraint term.
    with_gradient: bool
        Also return the adjoint gradient.
    fd_step: float
        Relative Jacobian step.
    fd_scheme: str
        Jacobian difference scheme.

    Returns
    -------
    Tuple[float, np.ndarray or None, float]
        Objective value, gradient and X(t_f).

    """
    u = spec.check_schedule(schedule)
    path = rollout(spec, u)
    cost = evaluate_cost(u, spec.dt, spec.baseline)
    g = path.terminal_moisture - spec.target
    if penalty > 0:
        term, slope = _penalty(g, multiplier, penalty)
    else:
        term, slope = 0.0, 0.0
    if not with_gradient:
        return cost + term, None, path.terminal_moisture
    grad = np.full(u.size, spec.dt)
    if slope > 0:
        grad += slope * _adjoint_gradient(
            spec, u, path.coefficients, fd_step, fd_scheme
        )
    return cost + term, grad, path.terminal_moisture


def _projected_gradient_norm(
    spec: OcpSpec, u: npt.NDArray[np.float64], grad: npt.NDArray[np.float64]
) -> float:
    return float(np.linalg.norm(u - np.clip(u - grad, spec.u_min, spec.u_max)))


def _solve_subproblem(
    spec: OcpSpec,
    settings: SolverSettings,
    u: npt.NDArray[np.float64],
    lam: float,
    mu: float,
) -> Tuple[npt.NDArray[np.float64], int, bool]:
    value, grad, _ = augmented_objective(
        spec, u, lam, mu, fd_step=settings.fd_step, fd_scheme=settings.fd_scheme
    )
    assert grad is not None
    tol = settings.gradient_tol * spec.dt * spec.n_steps
    width = spec.u_max - spec.u_min
    step = width / max(float(np.max(np.abs(grad))), 1e-300)
    for it in range(settings.max_inner):
        if _projected_gradient_norm(spec, u, grad) < tol:
            return u, it, True
        for _ in range(settings.max_backtracks):
            trial = np.clip(u - step * grad, spec.u_min, spec.u_max)
            trial_value, _, _ = augmented_objective(
                spec, trial, lam, mu, with_gradient=False
            )
            if trial_value <= value + settings.armijo * float(grad @ (trial - u)):
                break
            step *= settings.backtrack
        else:
            return u, it, False
        u = trial
        value, grad, _ = augmented_objective(
            spec, u, lam, mu, fd_step=settings.fd_step, fd_scheme=settings.fd_scheme
        )
        assert grad is not None
        step = min(2.0 * step, width / max(float(np.max(np.abs(grad))), 1e-300))
    return u, settings.max_inner, _projected_gradient_norm(spec, u, grad) < tol


def _solve_from(
    spec: OcpSpec,
    settings: SolverSettings,
    index: int,
    level: float,
) -> Tuple[npt.NDArray[np.float64], StartRecord]:
    u = spec.constant(level)
    lam = 0.0
    mu = settings.mu0
    inner_total = 0
    converged = False
    outer = 0
    for outer in range(1, settings.max_outer + 1):
        u, inner, inner_converged = _solve_subproblem(spec, settings, u, lam, mu)
        inner_total += inner
        x_f = terminal_moisture(spec, u)
        g = x_f - spec.target
        lam = max(0.0, lam + mu * g)
        LOGGER.info(
            f"Start {index} outer {outer}: J={evaluate_cost(u, spec.dt, spec.baseline):.6g}, "
            f"X(t_f)-X_f={g:.3e}, lambda={lam:.3e}, mu={mu:.1e}"
        )
        if g < settings.constraint_tol and inner_converged:
            converged = True
            break
        mu = min(mu * settings.mu_growth, settings.mu_max)
    x_f = terminal_moisture(spec, u)
    record = StartRecord(
        index=index,
        level=float(level),
        cost=evaluate_cost(u, spec.dt, spec.baseline),
        terminal_moisture=x_f,
        feasible=x_f - spec.target < settings.constraint_tol,
        converged=converged,
        outer_iterations=outer,
        inner_iterations=inner_total,
    )
    return u, record


def _start_task(
    args: Tuple[OcpSpec, SolverSettings, int, float],
) -> Tuple[npt.NDArray[np.float64], StartRecord]:
    return _solve_from(*args)


def _closed_form(
    spec: OcpSpec, level: float, status: str, path: Rollout
) -> OcpResult:
    u = spec.constant(level)
    return OcpResult(
        schedule=u,
        times=spec.times,
        cost=evaluate_cost(u, spec.dt, spec.baseline),
        terminal_moisture=path.terminal_moisture,
        constraint_residual=path.terminal_moisture - spec.target,
        switch_points=[],
        outer_iterations=0,
        inner_iterations=0,
        converged=True,
        status=status,
        moisture=path.moisture,
    )


def solve(
    spec: OcpSpec,
    settings: Optional[SolverSettings] = None,
    starts: Optional[Sequence[float]] = None,
    progress: bool = False,
) -> OcpResult:
    """Solve the drying problem from several constant start schedules.

    Parameters
    ----------
    spec: OcpSpec
        Problem.
    settings: SolverSettings, optional
        Solver parameters; defaults when omitted.
    starts: Sequence[float], optional
        Constant start levels; ``settings.n_starts`` levels spanning the bounds
        when omitted.
    progress: bool
        Show a progress bar over inline multistart branches.

    Returns
    -------
    OcpResult
        Lowest-cost feasible branch, ties broken by start index. Without a
        feasible branch the one with the smallest violation is returned with
        status ``"stagnated"``.

    Raises
    ------
    InfeasibleProblemError
        If even u = u_max misses the terminal bound.

    """
    settings = settings or SolverSettings()
    full = rollout(spec, spec.constant(spec.u_max))
    if full.terminal_moisture - spec.target > settings.constraint_tol:
        raise InfeasibleProblemError(
            f"X(t_f)={full.terminal_moisture:.6g} under u={spec.u_max:g} K "
            f"exceeds X_f={spec.target:g}",
            best_terminal_moisture=full.terminal_moisture,
        )
    idle = rollout(spec, spec.constant(spec.u_min))
    if idle.terminal_moisture <= spec.target:
        LOGGER.info("Terminal bound inactive; holding the lower input bound")
        return _closed_form(spec, spec.u_min, "lower-bound", idle)
    if abs(full.terminal_moisture - spec.target) <= settings.constraint_tol:
        LOGGER.info("Terminal bound reachable only by full heating")
        return _closed_form(spec, spec.u_max, "upper-bound", full)

    levels = (
        list(starts)
        if starts is not None
        else list(np.linspace(spec.u_min, spec.u_max, settings.n_starts))
    )
    args = [(spec, settings, index, float(level)) for index, level in enumerate(levels)]
    if settings.workers > 1:
        with ProcessPoolExecutor(max_workers=settings.workers) as pool:
            outcomes = list(pool.map(_start_task, args))
    else:
        outcomes = [
            _start_task(a) for a in tqdm(args, desc="multistart", disable=not progress)
        ]

    records = [record for _, record in outcomes]
    feasible = [k for k, record in enumerate(records) if record.feasible]
    if feasible:
        best = min(feasible, key=lambda k: (records[k].cost, k))
    else:
        best = min(
            range(len(records)), key=lambda k: (records[k].terminal_moisture, k)
        )
    u, record = outcomes[best]
    converged = record.converged and record.feasible
    if not converged:
        LOGGER.warning(
            f"Solver stagnated; returning start {best} with "
            f"X(t_f)-X_f={record.terminal_moisture - spec.target:.3e}"
        )
    path = rollout(spec, u)
    result = OcpResult(
        schedule=u,
        times=spec.times,
        cost=evaluate_cost(u, spec.dt, spec.baseline),
        terminal_moisture=path.terminal_moisture,
        constraint_residual=path.terminal_moisture - spec.target,
        switch_points=switch_points(u, spec.times, spec.u_min, spec.u_max),
        outer_iterations=record.outer_iterations,
        inner_iterations=record.inner_iterations,
        converged=converged,
        status="optimal" if converged else "stagnated",
        start_index=best,
        starts=records,
        moisture=path.moisture,
    )
    LOGGER.info(
        f"Optimal cost J={result.cost:.6g} K s from start {best}, "
        f"switch points {result.switch_points}"
    )
    return result


def minimal_constant_schedule(
    spec: OcpSpec,
    tol: float = 1e-3,
) -> Tuple[float, float]:
    """Lowest constant input meeting the terminal bound, by bisection.

    Returns
    -------
    Tuple[float, float]
        Input level (K) and its cost J.

    Raises
    ------
    InfeasibleProblemError
        If u = u_max misses the bound.

    """
    x_max = terminal_moisture(spec, spec.constant(spec.u_max))
    if x_max > spec.target:
        raise InfeasibleProblemError(
            f"X(t_f)={x_max:.6g} under u={spec.u_max:g} K exceeds X_f={spec.target:g}",
            best_terminal_moisture=x_max,
        )
    lo, hi = spec.u_min, spec.u_max
    if terminal_moisture(spec, spec.constant(lo)) <= spec.target:
        hi = lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if terminal_moisture(spec, spec.constant(mid)) <= spec.target:
            hi = mid
        else:
            lo = mid
    return hi, evaluate_cost(spec.constant(hi), spec.dt, spec.baseline)


def _heating_flags(
    schedule: npt.ArrayLike,
    u_min: float,
    u_max: float,
    hysteresis: float,
) -> npt.NDArray[np.bool_]:
    u = np.asarray(schedule, dtype=np.float64)[:-1]
    mid = 0.5 * (u_min + u_max)
    flags = np.empty(u.size, dtype=bool)
    heating = bool(u[0] > mid) if u.size else False
    for j, value in enumerate(u):
        if heating and value < mid - 0.5 * hysteresis:
            heating = False
        elif not heating and value > mid + 0.5 * hysteresis:
            heating = True
        flags[j] = heating
    return flags


def switch_points(
    schedule: npt.ArrayLike,
    times: npt.ArrayLike,
    u_min: float,
    u_max: float,
    hysteresis: float = SWITCH_HYSTERESIS,
) -> List[float]:
    """Times where the held input crosses mid-range.

    A crossing counts once the input passes the midpoint by half the
    hysteresis band. The last entry holds no interval and is ignored.
    """
    flags = _heating_flags(schedule, u_min, u_max, hysteresis)
    t = np.asarray(times, dtype=np.float64)
    return [float(t[j]) for j in np.flatnonzero(flags[1:] != flags[:-1]) + 1]


def heating_intervals(
    schedule: npt.ArrayLike,
    times: npt.ArrayLike,
    u_min: float,
    u_max: float,
    hysteresis: float = SWITCH_HYSTERESIS,
) -> List[Tuple[float, float]]:
    """Intervals [start, end) during which the input is above mid-range."""
    flags = _heating_flags(schedule, u_min, u_max, hysteresis)
    t = np.asarray(times, dtype=np.float64)
    intervals = []
    start: Optional[float] = None
    for j, heating in enumerate(flags):
        if heating and start is None:
            start = float(t[j])
        elif not heating and start is not None:
            intervals.append((start, float(t[j])))
            start = None
    if start is not None:
        intervals.append((start, float(t[flags.size])))
    return intervals


def bound_fraction(
    schedule: npt.ArrayLike,
    u_min: float,
    u_max: float,
    rel_tol: float = 0.01,
) -> float:
    """Share of entries within ``rel_tol`` of the input range from a bound."""
    u = np.asarray(schedule, dtype=np.float64)
    band = rel_tol * (u_max - u_min)
    near = (u - u_min <= band) | (u_max - u <= band)
    return float(np.mean(near))


@dataclass
class FomVerification:
    """Reduced versus full-order moisture under one schedule."""

    times: npt.NDArray[np.float64]
    rom_moisture: npt.NDArray[np.float64]
    fom_moisture: npt.NDArray[np.float64]
    target: float

    @property
    def terminal_mismatch(self) -> float:
        """|X_rom(t_f) - X_fom(t_f)|."""
        return float(abs(self.rom_moisture[-1] - self.fom_moisture[-1]))

    @property
    def fom_feasible(self) -> bool:
        """Whether the full-order model meets the terminal bound."""
        return bool(self.fom_moisture[-1] <= self.target)

    def to_frame(self) -> pd.DataFrame:
        """Columns t, X_rom, X_fom."""
        return pd.DataFrame(
            {"t": self.times, "X_rom": self.rom_moisture, "X_fom": self.fom_moisture}
        )

    def summary(self) -> Dict[str, Any]:
        """Report fields for manifests."""
        return {
            "rom_terminal_moisture": float(self.rom_moisture[-1]),
            "fom_terminal_moisture": float(self.fom_moisture[-1]),
            "terminal_mismatch": self.terminal_mismatch,
            "fom_feasible": self.fom_feasible,
        }


def verify_on_fom(
    spec: OcpSpec,
    schedule: npt.ArrayLike,
    fom: FomSystem,
    z0: npt.NDArray[np.float64],
    stability: str = "adapt",
) -> FomVerification:
    """Re-simulate a schedule on the full-order model.

    The full-order model records on the control grid, so every hold interval
    is integrated under its own input.
    """
    u = spec.check_schedule(schedule)
    path = rollout(spec, u)
    snaps = simulate(
        fom,
        z0,
        ZeroOrderHoldAmbient(tuple(u), spec.dt),
        spec.t_f,
        n_snapshots=spec.n_steps + 1,
        stability=stability,
    )
    verification = FomVerification(
        spec.times, path.moisture, snaps.total_moisture, spec.target
    )
    LOGGER.info(
        f"FOM check: X_fom(t_f)={snaps.total_moisture[-1]:.6g}, "
        f"mismatch {verification.terminal_mismatch:.3e}"
    )
    return verification


def order_study(
    decomposition: PodDecomposition,
    grid: Grid,
    params: MaterialParams,
    z0: npt.NDArray[np.float64],
    orders: Sequence[int],
    problem: Dict[str, float],
    settings: Optional[SolverSettings] = None,
    face_mean: str = "harmonic",
) -> Tuple[pd.DataFrame, Dict[int, OcpResult]]:
    """Solve the same problem on reduced models of several orders.

    Parameters
    ----------
    decomposition: PodDecomposition
        Snapshot SVD the bases are truncated from.
    grid, params: Grid, MaterialParams
        Discretization and material.
    z0: np.ndarray
        Initial full-order state.
    orders: Sequence[int]
        Even reduced orders.
    problem: Dict[str, float]
        Keyword arguments of OcpSpec besides ``rom`` and ``c0``.
    settings: SolverSettings, optional
        Solver parameters.
    face_mean: str
        Face averaging of the reduced model.

    Returns
    -------
    Tuple[pd.DataFrame, Dict[int, OcpResult]]
        Per-order table (order, cost, terminal moisture, heating periods,
        switch points, status, wall-clock seconds) and the results. Orders
        whose reduced model diverges or whose problem is infeasible get a row
        with status ``"unstable"`` or ``"infeasible"`` and no result.

    """
    rows = []
    results = {}
    for order in orders:
        basis = decomposition.basis(*split_order(order))
        rom = RomSystem(basis, grid, params, face_mean)
        spec = OcpSpec(rom=rom, c0=basis.coefficients(z0), **problem)
        start = time.perf_counter()
        try:
            result = solve(spec, settings)
        except (NumericalError, MaterialDomainError, InfeasibleProblemError) as err:
            status = "infeasible" if isinstance(err, InfeasibleProblemError) else "unstable"
            LOGGER.warning(f"Order {order}: {status} ({err})")
            rows.append(
                {
                    "order": order,
                    "cost": float("nan"),
                    "terminal_moisture": float("nan"),
                    "heating_periods": 0,
                    "switch_points": "",
                    "status": status,
                    "seconds": time.perf_counter() - start,
                }
            )
            continue
        seconds = time.perf_counter() - start
        results[order] = result
        rows.append(
            {
                "order": order,
                "cost": result.cost,
                "terminal_moisture": result.terminal_moisture,
                "heating_periods": len(
                    heating_intervals(result.schedule, result.times, spec.u_min, spec.u_max)
                ),
                "switch_points": " ".join(f"{t:g}" for t in result.switch_points),
                "status": result.status,
                "seconds": seconds,
            }
        )
        LOGGER.info(f"Order {order}: J={result.cost:.6g} K s in {seconds:.1f} s")
    return pd.DataFrame(rows), results
