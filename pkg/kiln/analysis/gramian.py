"""Empirical controllability Gramian of input-affine systems.

Impulses of weight h_d along input direction D_l e_i are applied as state
jumps, the responses are integrated with explicit Euler and their deviations
from the terminal state are accumulated with the left rectangle rule,

    W = sum_{d,l,i} 1 / (r s h_d^2) sum_j (c_j - c_m)(c_j - c_m)^T dt.

For a reduced model with mode matrix Phi the nonzero eigenvalues of the
full-order Gramian Phi W Phi^T are those of W Phi^T Phi = W / dV, with
eigenvectors Phi w.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
import pandas as pd
import scipy.linalg
from tqdm import tqdm

from kiln.errors import ConfigError, NumericalError
from kiln.models.pod import PodBasis, PodDecomposition, split_order
from kiln.models.rom import RomSystem, rom_steady_state
from kiln.physics.constants import AMBIENT_REFERENCE
from kiln.physics.grid import Grid
from kiln.physics.material import MaterialParams
from kiln.utils.log import setup_logging


# Logging.
LOGGER = logging.getLogger(__name__)
setup_logging(print_level="INFO", logger=LOGGER)

DEFAULT_MAGNITUDES = (1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3)
CONTROLLABLE = "ROM controllable (local, empirical)"


@dataclass(frozen=True, eq=False)
class GramianConfig:
    """Impulse family and quadrature of the empirical Gramian.

    Attributes
    ----------
    magnitudes: Tuple[float, ...]
        Impulse weights h_d.
    directions: Tuple[np.ndarray, ...]
        Orthonormal direction matrices D_l of shape (n_inputs, n_inputs);
        the identity when empty.
    n_inputs: int
        Number of inputs.
    u0: float
        Constant input of the steady state.
    dt: float
        Quadrature and integration step (s).
    n_steps: int
        Number of steps m_f of every impulse response.
    settle_tol: float
        Threshold of ``max|rhs|`` at the last step to count as settled.
    workers: int
        Processes simulating impulse responses; 1 runs inline.

    """

    magnitudes: Tuple[float, ...] = DEFAULT_MAGNITUDES
    directions: Tuple[npt.NDArray[np.float64], ...] = ()
    n_inputs: int = 1
    u0: float = AMBIENT_REFERENCE
    dt: float = 1.0
    n_steps: int = 20_000
    settle_tol: float = 1e-8
    workers: int = 1

    def __post_init__(self) -> None:
        """Validate the impulse family."""
        object.__setattr__(
            self, "magnitudes", tuple(float(h) for h in self.magnitudes)
        )
        if not self.magnitudes or any(h == 0.0 for h in self.magnitudes):
            raise ConfigError("impulse magnitudes must be nonempty and nonzero")
        if not self.directions:
            directions: Tuple[npt.NDArray[np.float64], ...] = (np.eye(self.n_inputs),)
        else:
            directions = tuple(
                np.atleast_2d(np.asarray(d, dtype=np.float64)) for d in self.directions
            )
        object.__setattr__(self, "directions", directions)
        for d in directions:
            if d.shape != (self.n_inputs, self.n_inputs):
                raise ConfigError(
                    f"direction matrices must be {self.n_inputs}x{self.n_inputs}"
                )
            if not np.allclose(d @ d.T, np.eye(self.n_inputs), atol=1e-12):
                raise ConfigError("direction matrices must be orthonormal")
        if not self.dt > 0 or self.n_steps < 1:
            raise ConfigError("Gramian quadrature needs dt > 0 and n_steps >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    def impulses(self) -> List[Tuple[int, int, int, npt.NDArray[np.float64]]]:
        """(magnitude index, direction index, input index, weight vector) tuples."""
        tasks = []
        for d, h_d in enumerate(self.magnitudes):
            for l, direction in enumerate(self.directions):  # noqa: E741
                for i in range(self.n_inputs):
                    tasks.append((d, l, i, h_d * direction[:, i]))
        return tasks


class LinearSystem:
    """Linear time-invariant system dc/dt = A c + B u.

    Parameters
    ----------
    A: array-like
        State matrix, shape (n, n).
    B: array-like
        Input matrix, shape (n, gamma).

    """

    def __init__(self, A: npt.ArrayLike, B: npt.ArrayLike) -> None:  # noqa: N803
        self.A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        self.B = np.asarray(B, dtype=np.float64).reshape(self.A.shape[0], -1)

    @property
    def dim(self) -> int:
        """State dimension."""
        return int(self.A.shape[0])

    @property
    def n_inputs(self) -> int:
        """Number of inputs."""
        return int(self.B.shape[1])

    def input_matrix(self, c: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Constant input matrix B."""
        return self.B

    def rhs(self, c: npt.ArrayLike, u: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """A c + B u for state(s) of shape (..., n).

        ``u`` is a scalar, an input vector of shape (..., gamma) or, for a
        single input, one value per state of shape (...).
        """
        c = np.asarray(c, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        if u.ndim == 0:
            u = np.full(self.n_inputs, float(u))
        elif self.n_inputs == 1 and u.shape[-1] != 1:
            u = u[..., None]
        return np.asarray(c @ self.A.T + u @ self.B.T)

    def steady_state(self, u0: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Equilibrium -A^{-1} B u0."""
        u0 = np.broadcast_to(np.asarray(u0, dtype=np.float64), (self.n_inputs,))
        return np.asarray(scipy.linalg.solve(self.A, -self.B @ u0))

    def stable_dt(
        self,
        c: Optional[npt.ArrayLike] = None,
        u: Optional[npt.ArrayLike] = None,
        safety: float = 0.9,
    ) -> float:
        """Largest explicit Euler step with |1 + dt lambda| < 1 for every eigenvalue.

        Returns ``inf`` when no eigenvalue has a negative real part.
        """
        lam = scipy.linalg.eigvals(self.A)
        lam = lam[lam.real < 0]
        if lam.size == 0:
            return float("inf")
        return safety * float(np.min(-2.0 * lam.real / np.abs(lam) ** 2))

    def lyapunov_gramian(self) -> npt.NDArray[np.float64]:
        """Controllability Gramian solving A W + W A^T + B B^T = 0."""
        return np.asarray(
            scipy.linalg.solve_continuous_lyapunov(self.A, -self.B @ self.B.T)
        )


@dataclass
class ImpulseDiagnostic:
    """Settling information of one impulse response."""

    magnitude: float
    direction: int
    input_index: int
    horizon: float
    residual: float
    settled: bool


@dataclass(eq=False)
class GramianResult:
    """Reduced Gramian with its eigen-decomposition.

    Attributes
    ----------
    gramian: np.ndarray
        Symmetric n x n matrix W.
    eigenvalues: np.ndarray
        Eigenvalues of W Phi^T Phi in descending order.
    eigenvectors: np.ndarray
        Reduced eigenvectors w_k as columns.
    lifted: np.ndarray, optional
        Lifted eigenvectors Phi w_k as columns.
    diagnostics: List[ImpulseDiagnostic]
        One entry per impulse.

    """

    gramian: npt.NDArray[np.float64]
    eigenvalues: npt.NDArray[np.float64]
    eigenvectors: npt.NDArray[np.float64]
    lifted: Optional[npt.NDArray[np.float64]] = None
    diagnostics: List[ImpulseDiagnostic] = field(default_factory=list)
    trajectories: List[npt.NDArray[np.float64]] = field(default_factory=list)


def _input_value(system: Any, u: npt.NDArray[np.float64]) -> Any:
    return float(u[0]) if isinstance(system, RomSystem) else u


def impulse_trajectory(
    system: Any,
    c_ss: npt.NDArray[np.float64],
    u0: npt.NDArray[np.float64],
    weight: npt.NDArray[np.float64],
    dt: float,
    n_steps: int,
) -> Tuple[npt.NDArray[np.float64], float]:
    """Explicit Euler response to the state jump ``B(c_ss) weight``.

    Returns
    -------
    Tuple[np.ndarray, float]
        States c_0..c_m of shape (n_steps + 1, n) and ``max|rhs|`` at c_m.

    Raises
    ------
    NumericalError
        At the first step whose state is not finite.

    """
    u = _input_value(system, u0)
    c = np.asarray(c_ss, dtype=np.float64) + system.input_matrix(c_ss) @ weight
    trajectory = np.empty((n_steps + 1, c.size))
    trajectory[0] = c
    for j in range(n_steps):
        with np.errstate(over="ignore", invalid="ignore"):
            c = c + dt * system.rhs(c, u)
        if not np.all(np.isfinite(c)):
            raise NumericalError(
                f"impulse response with weight {weight} diverged at "
                f"t={(j + 1) * dt:g} s "
                f"(step {j + 1} of {n_steps}, dt={dt:g} s)"
            )
        trajectory[j + 1] = c
    residual = float(np.max(np.abs(system.rhs(trajectory[-1], u))))
    return trajectory, residual


ImpulseArgs = Tuple[
    Any, npt.NDArray[np.float64], npt.NDArray[np.float64], npt.NDArray[np.float64], float, int
]


def _impulse_task(args: ImpulseArgs) -> Tuple[npt.NDArray[np.float64], float]:
    return impulse_trajectory(*args)


def gramian_from_trajectories(
    trajectories: Sequence[npt.NDArray[np.float64]],
    magnitudes: Sequence[float],
    n_directions: int,
    n_magnitudes: int,
    dt: float,
    lift: Optional[npt.NDArray[np.float64]] = None,
) -> npt.NDArray[np.float64]:
    """Accumulate impulse responses into a Gramian.

    Parameters
    ----------
    trajectories: Sequence[np.ndarray]
        One (m + 1, n) response per impulse, in accumulation order.
    magnitudes: Sequence[float]
        Impulse weight h_d of each trajectory.
    n_directions, n_magnitudes: int
        Counts r and s of the normalization 1 / (r s h_d^2).
    dt: float
        Quadrature step.
    lift: np.ndarray, optional
        Mode matrix Phi; the lifted full-order Gramian is assembled when given.

    Returns
    -------
    np.ndarray
        Symmetric Gramian.

    """
    if len(trajectories) != len(magnitudes):
        raise ValueError("one magnitude per trajectory is required")
    dim = trajectories[0].shape[1] if lift is None else lift.shape[0]
    gramian = np.zeros((dim, dim))
    for trajectory, h_d in zip(trajectories, magnitudes):
        deviation = trajectory - trajectory[-1]
        if lift is not None:
            deviation = deviation @ lift.T
        gramian += (deviation.T @ deviation) * dt / (n_directions * n_magnitudes * h_d**2)
    return 0.5 * (gramian + gramian.T)


def _sorted_eigenpairs(
    values: npt.NDArray[np.float64],
    vectors: npt.NDArray[np.float64],
) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    order = np.argsort(values)[::-1]
    values = values[order]
    vectors = vectors[:, order]
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return values, vectors * signs


def reduced_eigenproblem(
    gramian: npt.NDArray[np.float64],
    basis: PodBasis,
) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """Eigenpairs of W Phi^T Phi, sorted by descending eigenvalue.

    For modes orthonormal under the dV-weighted product Phi^T Phi = I / dV
    and the symmetric problem W w = dV beta w is solved; any other Gram
    matrix falls back to a general eigensolver.

    Raises
    ------
    NumericalError
        If the eigensolver fails.

    """
    gram = basis.gram()
    dv = basis.cell_volume
    try:
        if np.allclose(gram * dv, np.eye(gram.shape[0]), rtol=0.0, atol=1e-10):
            values, vectors = scipy.linalg.eigh(gramian)
            values = values / dv
        else:
            values, vectors = scipy.linalg.eig(gramian @ gram)
            values, vectors = values.real, vectors.real
    except (np.linalg.LinAlgError, ValueError) as err:
        raise NumericalError(f"Gramian eigensolver failed: {err}") from err
    return _sorted_eigenpairs(np.asarray(values), np.asarray(vectors))


def lift_eigenvectors(
    basis: PodBasis,
    vectors: npt.NDArray[np.float64],
    normalize: bool = True,
) -> npt.NDArray[np.float64]:
    """Full-order eigenvectors Phi w_k as columns, unit length if requested."""
    lifted = basis.matrix @ np.asarray(vectors, dtype=np.float64).reshape(basis.n, -1)
    if normalize:
        lifted = lifted / np.linalg.norm(lifted, axis=0)
    return np.asarray(lifted)


def eigenvector_fields(
    grid: Grid,
    lifted: npt.NDArray[np.float64],
) -> pd.DataFrame:
    """Per-cell moisture and temperature parts of one lifted eigenvector."""
    n = grid.n_cells
    ijk = grid.cell_ijk
    return pd.DataFrame(
        {
            "i": ijk[:, 0],
            "j": ijk[:, 1],
            "k": ijk[:, 2],
            "x": lifted[:n],
            "T": lifted[n:],
        }
    )


def empirical_gramian(
    system: Any,
    c_ss: npt.ArrayLike,
    config: GramianConfig,
    basis: Optional[PodBasis] = None,
    keep_trajectories: bool = False,
    progress: bool = False,
) -> GramianResult:
    """Empirical controllability Gramian around a steady state.

    Parameters
    ----------
    system: RomSystem or LinearSystem
        Input-affine system with ``rhs``, ``input_matrix`` and ``n_inputs``.
    c_ss: array-like
        Steady state under ``config.u0``.
    config: GramianConfig
        Impulse family and quadrature.
    basis: PodBasis, optional
        Basis of a reduced model; enables the weighted eigenproblem and the
        lifted eigenvectors. Without it W itself is decomposed.
    keep_trajectories: bool
        Keep the impulse responses in the result.
    progress: bool
        Show a progress bar over impulses.

    Returns
    -------
    GramianResult
        Gramian, eigenpairs and settling diagnostics.

    """
    if system.n_inputs != config.n_inputs:
        raise ConfigError(
            f"system has {system.n_inputs} inputs, config expects {config.n_inputs}"
        )
    c_ss = np.asarray(c_ss, dtype=np.float64)
    u0 = np.full(config.n_inputs, config.u0)
    if hasattr(system, "stable_dt"):
        bound = system.stable_dt(c_ss, _input_value(system, u0), 1.0)
        if config.dt > bound:
            LOGGER.warning(
                f"Gramian step dt={config.dt:g} s exceeds the explicit Euler bound "
                f"{bound:.3g} s at the steady state; impulse responses may diverge"
            )
    tasks = config.impulses()
    args = [(system, c_ss, u0, w, config.dt, config.n_steps) for *_, w in tasks]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outputs = list(pool.map(_impulse_task, args))
    else:
        outputs = [
            _impulse_task(a) for a in tqdm(args, desc="impulses", disable=not progress)
        ]

    horizon = config.dt * config.n_steps
    diagnostics = []
    for (d, l, i, _), (_, residual) in zip(tasks, outputs):
        settled = residual < config.settle_tol
        h_d = config.magnitudes[d]
        if not settled:
            LOGGER.warning(
                f"Impulse h_d={h_d:g} (direction {l}, input {i}) not settled after "
                f"{horizon:g} s: residual {residual:.3e}"
            )
        diagnostics.append(ImpulseDiagnostic(h_d, l, i, horizon, residual, settled))

    trajectories = [trajectory for trajectory, _ in outputs]
    gramian = gramian_from_trajectories(
        trajectories,
        [config.magnitudes[d] for d, *_ in tasks],
        len(config.directions),
        len(config.magnitudes),
        config.dt,
    )
    if basis is not None:
        values, vectors = reduced_eigenproblem(gramian, basis)
        lifted: Optional[npt.NDArray[np.float64]] = lift_eigenvectors(basis, vectors)
    else:
        values, vectors = _sorted_eigenpairs(*scipy.linalg.eigh(gramian))
        lifted = None
    LOGGER.info(
        "Gramian eigenvalues: " + ", ".join(f"{value:.3e}" for value in values)
    )
    return GramianResult(
        gramian,
        values,
        vectors,
        lifted,
        diagnostics,
        trajectories if keep_trajectories else [],
    )


@dataclass
class ControllabilityReport:
    """Positivity verdict and hyperellipsoid semi-axes of the Gramian."""

    eigenvalues: npt.NDArray[np.float64]
    controllable: bool
    verdict: str
    semi_axes: npt.NDArray[np.float64]
    uncontrollable: List[int]

    def to_frame(self) -> pd.DataFrame:
        """Tabulate k, eigenvalue and semi-axis length."""
        return pd.DataFrame(
            {
                "k": np.arange(1, self.eigenvalues.size + 1),
                "eigenvalue": self.eigenvalues,
                "semi_axis": self.semi_axes,
            }
        )

    def summary(self) -> Dict[str, Any]:
        """Report fields for manifests."""
        positive = self.eigenvalues[self.eigenvalues > 0]
        return {
            "verdict": self.verdict,
            "controllable": self.controllable,
            "uncontrollable_directions": self.uncontrollable,
            "eigenvalues": self.eigenvalues.tolist(),
            "spread": float(positive[0] / positive[-1]) if positive.size else None,
        }


def controllability_report(
    result: GramianResult,
    positivity_tol: float = 1e-14,
) -> ControllabilityReport:
    """Check positive definiteness of the Gramian.

    An eigenvalue counts as zero when it does not exceed ``positivity_tol``
    times the largest eigenvalue. Semi-axes are sqrt(beta_k) times the length
    of the (lifted) eigenvector.
    """
    values = np.asarray(result.eigenvalues)
    largest = float(values[0]) if values.size else 0.0
    threshold = positivity_tol * max(largest, 0.0)
    uncontrollable = [int(k) for k in np.flatnonzero(values <= threshold)]
    controllable = largest > 0.0 and not uncontrollable
    if controllable:
        verdict = CONTROLLABLE
    else:
        verdict = (
            f"uncontrollable directions: {[k + 1 for k in uncontrollable]} "
            "(eigenvalues not positive)"
        )
    vectors = result.lifted if result.lifted is not None else result.eigenvectors
    semi_axes = np.sqrt(np.maximum(values, 0.0)) * np.linalg.norm(vectors, axis=0)
    return ControllabilityReport(values, controllable, verdict, semi_axes, uncontrollable)


def eigenvalue_order_table(eigenvalues: Dict[int, npt.NDArray[np.float64]]) -> pd.DataFrame:
    """Long table (order, k, eigenvalue) of eigenvalues per reduced order."""
    rows = [
        {"order": order, "k": k + 1, "eigenvalue": float(value)}
        for order, values in sorted(eigenvalues.items())
        for k, value in enumerate(values)
    ]
    return pd.DataFrame(rows, columns=["order", "k", "eigenvalue"])


def eigenvalue_order_sweep(
    decomposition: PodDecomposition,
    grid: Grid,
    params: MaterialParams,
    z_ss: npt.NDArray[np.float64],
    orders: Sequence[int],
    config: GramianConfig,
    face_mean: str = "harmonic",
) -> pd.DataFrame:
    """Gramian eigenvalues for a range of reduced orders.

    Each order uses the even split of modes and starts its steady-state
    search from the projection of the full-order steady state ``z_ss``.
    Orders whose reduced model fails numerically are logged and skipped.
    """
    eigenvalues = {}
    for order in orders:
        basis = decomposition.basis(*split_order(order))
        rom = RomSystem(basis, grid, params, face_mean)
        try:
            c_ss = rom_steady_state(rom, config.u0, basis.coefficients(z_ss))
            eigenvalues[order] = empirical_gramian(rom, c_ss, config, basis).eigenvalues
        except NumericalError as err:
            LOGGER.warning(f"Order {order}: reduced model failed ({err})")
    return eigenvalue_order_table(eigenvalues)


def horizon_convergence(
    system: Any,
    c_ss: npt.ArrayLike,
    config: GramianConfig,
    factor: int = 10,
) -> float:
    """Relative change of W when the quadrature horizon grows by ``factor``.

    Both Gramians come from the same responses, the shorter one from their
    prefixes, so only the horizon differs.
    """
    longer = GramianConfig(
        magnitudes=config.magnitudes,
        directions=config.directions,
        n_inputs=config.n_inputs,
        u0=config.u0,
        dt=config.dt,
        n_steps=config.n_steps * factor,
        settle_tol=config.settle_tol,
        workers=config.workers,
    )
    result = empirical_gramian(system, c_ss, longer, keep_trajectories=True)
    tasks = config.impulses()
    magnitudes = [config.magnitudes[d] for d, *_ in tasks]
    counts = (len(config.directions), len(config.magnitudes), config.dt)
    short = gramian_from_trajectories(
        [t[: config.n_steps + 1] for t in result.trajectories], magnitudes, *counts
    )
    change = np.linalg.norm(result.gramian - short) / np.linalg.norm(result.gramian)
    LOGGER.info(f"Gramian change for a {factor}x horizon: {100 * change:.4f}%")
    return float(change)
