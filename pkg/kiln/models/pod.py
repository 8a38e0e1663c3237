"""Proper orthogonal decomposition of drying snapshots.

Moisture and temperature are decomposed separately. Modes are orthonormal
under the discrete inner product <a, b> = sum_i a_i b_i dV, so the plain
Gram matrix of the block mode matrix is I / dV.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
import pandas as pd
import scipy.linalg

from kiln.errors import RankError
from kiln.evals import evaluation
from kiln.physics.fom import SnapshotSet
from kiln.utils.log import setup_logging


# Logging.
LOGGER = logging.getLogger(__name__)
setup_logging(print_level="INFO", logger=LOGGER)

RANK_TOL = 1e-10
# Singular values below this fraction of the snapshot norm count as zero.
_ABS_RANK_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PodBasis:
    """Mean state and truncated per-field modes.

    Attributes
    ----------
    mean: np.ndarray
        Time-averaged state, length 2N.
    modes_x, modes_T: np.ndarray
        Moisture and temperature modes as columns, shapes (N, n_x), (N, n_T).
    cell_volume: float
        Cell volume dV of the inner product.
    singular_values_x, singular_values_T: np.ndarray
        All singular values of the weighted, centered snapshot matrices.

    """

    mean: npt.NDArray[np.float64]
    modes_x: npt.NDArray[np.float64]
    modes_T: npt.NDArray[np.float64]
    cell_volume: float
    singular_values_x: npt.NDArray[np.float64]
    singular_values_T: npt.NDArray[np.float64]

    def __post_init__(self) -> None:
        """Check the block dimensions."""
        n_cells = self.mean.size // 2
        if self.modes_x.shape[0] != n_cells or self.modes_T.shape[0] != n_cells:
            raise ValueError("modes must have one row per cell")

    @property
    def n_cells(self) -> int:
        """Number of cells N."""
        return self.mean.size // 2

    @property
    def n_x(self) -> int:
        """Retained moisture modes."""
        return int(self.modes_x.shape[1])

    @property
    def n_T(self) -> int:
        """Retained temperature modes."""
        return int(self.modes_T.shape[1])

    @property
    def n(self) -> int:
        """Reduced dimension n_x + n_T."""
        return self.n_x + self.n_T

    @cached_property
    def matrix(self) -> npt.NDArray[np.float64]:
        """Block-diagonal mode matrix Phi of shape (2N, n)."""
        phi = np.zeros((2 * self.n_cells, self.n))
        phi[: self.n_cells, : self.n_x] = self.modes_x
        phi[self.n_cells :, self.n_x :] = self.modes_T
        return phi

    @cached_property
    def moisture_weights(self) -> npt.NDArray[np.float64]:
        """Cell average of each moisture mode, dX/dc_x."""
        return np.asarray(self.modes_x.mean(axis=0))

    @cached_property
    def mean_total_moisture(self) -> float:
        """Total moisture of the mean state."""
        return float(self.mean[: self.n_cells].mean())

    def coefficients(self, z: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Project state(s) of shape (..., 2N) onto the modes."""
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != 2 * self.n_cells:
            raise ValueError(
                f"expected states of length {2 * self.n_cells}, got {z.shape[-1]}"
            )
        centered = z - self.mean
        n = self.n_cells
        c_x = centered[..., :n] @ self.modes_x
        c_T = centered[..., n:] @ self.modes_T
        return np.concatenate([c_x, c_T], axis=-1) * self.cell_volume

    def lift(self, c: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Map coefficient vector(s) of shape (..., n) to states z_mean + Phi c."""
        c = np.asarray(c, dtype=np.float64)
        if c.shape[-1] != self.n:
            raise ValueError(f"expected {self.n} coefficients, got {c.shape[-1]}")
        x = self.mean[: self.n_cells] + c[..., : self.n_x] @ self.modes_x.T
        T = self.mean[self.n_cells :] + c[..., self.n_x :] @ self.modes_T.T
        return np.concatenate([x, T], axis=-1)

    def reconstruct(self, z: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Orthogonal projection of state(s) onto the affine POD subspace."""
        return self.lift(self.coefficients(z))

    def total_moisture(self, c: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Total moisture of lifted coefficient vector(s), without lifting."""
        c = np.asarray(c, dtype=np.float64)
        return np.asarray(
            self.mean_total_moisture + c[..., : self.n_x] @ self.moisture_weights
        )

    def gram(self) -> npt.NDArray[np.float64]:
        """Plain Gram matrix Phi^T Phi, equal to I / dV."""
        return np.asarray(self.matrix.T @ self.matrix)

    def energy_fraction(self) -> Tuple[float, float]:
        """Share of the centered snapshot energy captured per field."""

        def fraction(sv: npt.NDArray[np.float64], n: int) -> float:
            total = float(np.sum(sv**2))
            return float(np.sum(sv[:n] ** 2) / total) if total > 0 else 1.0

        return (
            fraction(self.singular_values_x, self.n_x),
            fraction(self.singular_values_T, self.n_T),
        )


def _field_svd(
    block: npt.NDArray[np.float64],
    cell_volume: float,
    rank_tol: float,
) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64], npt.NDArray[np.float64], int]:
    """Mean, modes up to the numerical rank, singular values and rank of a field."""
    mean = block.mean(axis=0)
    weight = np.sqrt(cell_volume)
    weighted = weight * (block - mean).T
    u, sv, _ = scipy.linalg.svd(weighted, full_matrices=False)
    scale = weight * float(np.linalg.norm(block))
    if sv.size == 0 or sv[0] <= _ABS_RANK_TOL * scale:
        rank = 0
    else:
        rank = int(np.count_nonzero(sv > rank_tol * sv[0]))
    modes = u[:, :rank] / weight
    # Largest-magnitude entry of every mode is positive.
    pivots = np.argmax(np.abs(modes), axis=0)
    signs = np.sign(modes[pivots, np.arange(rank)])
    signs[signs == 0] = 1.0
    return mean, modes * signs, sv, rank


@dataclass(frozen=True, eq=False)
class PodDecomposition:
    """Complete per-field decomposition from which bases of any order are cut.

    Attributes
    ----------
    mean: np.ndarray
        Time-averaged state.
    modes_x, modes_T: np.ndarray
        All modes up to the numerical rank of each field.
    singular_values_x, singular_values_T: np.ndarray
        All singular values.
    cell_volume: float
        Cell volume of the inner product.

    """

    mean: npt.NDArray[np.float64]
    modes_x: npt.NDArray[np.float64]
    modes_T: npt.NDArray[np.float64]
    singular_values_x: npt.NDArray[np.float64]
    singular_values_T: npt.NDArray[np.float64]
    cell_volume: float

    @property
    def rank_x(self) -> int:
        """Numerical rank of the centered moisture snapshots."""
        return int(self.modes_x.shape[1])

    @property
    def rank_T(self) -> int:
        """Numerical rank of the centered temperature snapshots."""
        return int(self.modes_T.shape[1])

    def basis(self, n_x: int, n_T: int) -> PodBasis:
        """Keep the leading ``n_x`` moisture and ``n_T`` temperature modes.

        Raises
        ------
        RankError
            If an order is negative or above the attainable rank.

        """
        if n_x < 0 or n_T < 0:
            raise RankError("mode counts must be nonnegative")
        if n_x > self.rank_x or n_T > self.rank_T:
            raise RankError(
                f"requested (n_x, n_T) = ({n_x}, {n_T}) exceeds the numerical rank "
                f"of the snapshots; attainable: n_x <= {self.rank_x}, "
                f"n_T <= {self.rank_T}"
            )
        return PodBasis(
            mean=self.mean,
            modes_x=np.ascontiguousarray(self.modes_x[:, :n_x]),
            modes_T=np.ascontiguousarray(self.modes_T[:, :n_T]),
            cell_volume=self.cell_volume,
            singular_values_x=self.singular_values_x,
            singular_values_T=self.singular_values_T,
        )


def decompose(
    snaps: SnapshotSet,
    cell_volume: float,
    rank_tol: float = RANK_TOL,
) -> PodDecomposition:
    """Decompose a snapshot set field by field with a dV-weighted SVD.

    Parameters
    ----------
    snaps: SnapshotSet
        Snapshots, the initial condition included.
    cell_volume: float
        Cell volume of the inner product.
    rank_tol: float
        Singular values below ``rank_tol`` times the largest are dropped.

    Returns
    -------
    PodDecomposition
        Mean and all modes up to the numerical rank.

    """
    mean_x, modes_x, sv_x, rank_x = _field_svd(snaps.moisture, cell_volume, rank_tol)
    mean_T, modes_T, sv_T, rank_T = _field_svd(
        snaps.temperature, cell_volume, rank_tol
    )
    LOGGER.info(
        f"POD of {snaps.n_snapshots} snapshots: rank {rank_x} (moisture), "
        f"{rank_T} (temperature)"
    )
    return PodDecomposition(
        mean=np.concatenate([mean_x, mean_T]),
        modes_x=modes_x,
        modes_T=modes_T,
        singular_values_x=sv_x,
        singular_values_T=sv_T,
        cell_volume=cell_volume,
    )


def build_basis(
    snaps: SnapshotSet,
    n_x: int,
    n_T: int,
    cell_volume: float,
    rank_tol: float = RANK_TOL,
) -> PodBasis:
    """Build the POD basis of order ``(n_x, n_T)`` from snapshots."""
    basis = decompose(snaps, cell_volume, rank_tol).basis(n_x, n_T)
    energy_x, energy_T = basis.energy_fraction()
    LOGGER.info(
        f"Basis n_x={n_x}, n_T={n_T} keeps {100 * energy_x:.6f}% / "
        f"{100 * energy_T:.6f}% of the snapshot energy"
    )
    return basis


def coefficients(basis: PodBasis, state: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Coefficients <field - mean, phi_k> of a state."""
    return basis.coefficients(state)


def lift(basis: PodBasis, c: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """State approximation z_mean + Phi c."""
    return basis.lift(c)


def split_order(n: int) -> Tuple[int, int]:
    """Split a reduced order evenly between moisture and temperature modes."""
    if n < 2 or n % 2:
        raise RankError(f"reduced order must be even and at least 2, got {n}")
    return n // 2, n // 2


def reconstruction_energy(
    basis: PodBasis, snaps: SnapshotSet
) -> Tuple[float, float]:
    """Weighted squared projection error of the snapshots per field."""
    residual = snaps.states - basis.reconstruct(snaps.states)
    n = basis.n_cells
    dv = basis.cell_volume
    return (
        float(np.sum(residual[:, :n] ** 2) * dv),
        float(np.sum(residual[:, n:] ** 2) * dv),
    )


def nrmse_total_moisture(
    basis: PodBasis,
    snaps: SnapshotSet,
    approx_total_moisture: Optional[npt.ArrayLike] = None,
) -> float:
    """NRMSE of the total moisture against the snapshots.

    Parameters
    ----------
    basis: PodBasis
        Basis whose projection is scored when no trajectory is given.
    snaps: SnapshotSet
        Reference snapshots.
    approx_total_moisture: array-like, optional
        Total moisture of a reduced trajectory on the snapshot times.

    Returns
    -------
    float
        NRMSE of X(t).

    """
    if approx_total_moisture is None:
        approx_total_moisture = basis.total_moisture(
            basis.coefficients(snaps.states)
        )
    return evaluation.nrmse(snaps.total_moisture, approx_total_moisture)


def field_error_maps(
    basis: PodBasis,
    snaps: SnapshotSet,
    approx_states: Optional[npt.NDArray[np.float64]] = None,
) -> evaluation.FieldErrorReport:
    """Residual fields of the basis projection, or of a lifted trajectory."""
    if approx_states is None:
        approx_states = basis.reconstruct(snaps.states)
    return evaluation.field_error_maps(snaps.states, approx_states)


def reconstruction_nrmse_sweep(
    decomposition: PodDecomposition,
    snaps: SnapshotSet,
    orders: Optional[Sequence[int]] = None,
) -> pd.DataFrame:
    """Projection NRMSE of X(t) against the reduced order n = 2 n_x.

    Orders default to every even n up to twice the smaller field rank.
    """
    max_order = 2 * min(decomposition.rank_x, decomposition.rank_T)
    if orders is None:
        orders = range(2, max_order + 1, 2)
    rows = []
    for n in orders:
        n_x, n_T = split_order(n)
        basis = decomposition.basis(n_x, n_T)
        rows.append(
            {
                "order": n,
                "n_x": n_x,
                "n_T": n_T,
                "nrmse": nrmse_total_moisture(basis, snaps),
            }
        )
    return pd.DataFrame(rows, columns=["order", "n_x", "n_T", "nrmse"])
