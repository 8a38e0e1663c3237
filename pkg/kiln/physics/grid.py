"""Cartesian cell geometry of the chip and the stacked state vector.

Cells are numbered row-major with the x index fastest:
``idx = i + nx * (j + ny * k)``. A state vector ``z`` of length 2N holds the
N moisture values followed by the N temperature values.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, NamedTuple, Tuple, Union

import numpy as np
import numpy.typing as npt

from kiln.errors import ConfigError


class InteriorFaces(NamedTuple):
    """Faces shared by two cells; ``neighbour`` follows ``owner`` along ``axis``."""

    owner: npt.NDArray[np.intp]
    neighbour: npt.NDArray[np.intp]
    axis: npt.NDArray[np.intp]


class BoundaryFaces(NamedTuple):
    """Faces on the chip surface with the owning cell and outward normal."""

    cell: npt.NDArray[np.intp]
    axis: npt.NDArray[np.intp]
    sign: npt.NDArray[np.intp]


@dataclass(frozen=True)
class Grid:
    """Uniform grid of cubic finite volumes.

    The default is a 10 mm x 20 mm x 5 mm chip with 1 mm cells.

    Attributes
    ----------
    nx, ny, nz: int
        Cell counts per axis.
    h: float
        Cell edge length (m).

    """

    nx: int = 10
    ny: int = 20
    nz: int = 5
    h: float = 1e-3

    def __post_init__(self) -> None:
        """Validate the dimensions."""
        for name in ("nx", "ny", "nz"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"grid.{name} must be at least 1")
        if not self.h > 0:
            raise ConfigError(f"grid.h must be positive, got {self.h}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Grid":
        """Build a grid from a mapping with keys nx, ny, nz, h."""
        unknown = sorted(set(data) - {"nx", "ny", "nz", "h"})
        if unknown:
            raise ConfigError(f"Unknown grid keys: {unknown}")
        kwargs: Dict[str, Any] = {
            key: int(value) for key, value in data.items() if key != "h"
        }
        if "h" in data:
            kwargs["h"] = float(data["h"])
        return cls(**kwargs)

    def to_dict(self) -> Dict[str, Any]:
        """Return the defining parameters."""
        return {"nx": self.nx, "ny": self.ny, "nz": self.nz, "h": self.h}

    @property
    def shape(self) -> Tuple[int, int, int]:
        """Cell counts as (nx, ny, nz)."""
        return (self.nx, self.ny, self.nz)

    @property
    def n_cells(self) -> int:
        """Total number of cells N."""
        return self.nx * self.ny * self.nz

    @property
    def cell_volume(self) -> float:
        """Volume of one cell (m^3)."""
        return self.h**3

    @property
    def face_area(self) -> float:
        """Area of one face (m^2)."""
        return self.h**2

    @property
    def volume(self) -> float:
        """Chip volume (m^3)."""
        return self.nx * self.h * (self.ny * self.h) * (self.nz * self.h)

    def index(self, i: int, j: int, k: int) -> int:
        """Map cell indices (i, j, k) to the linear cell index."""
        if not (0 <= i < self.nx and 0 <= j < self.ny and 0 <= k < self.nz):
            raise IndexError(f"cell ({i}, {j}, {k}) outside grid {self.shape}")
        return i + self.nx * (j + self.ny * k)

    def unravel(self, idx: int) -> Tuple[int, int, int]:
        """Map a linear cell index back to (i, j, k)."""
        if not 0 <= idx < self.n_cells:
            raise IndexError(f"cell index {idx} outside [0, {self.n_cells})")
        k, rest = divmod(idx, self.nx * self.ny)
        j, i = divmod(rest, self.nx)
        return (i, j, k)

    @cached_property
    def cell_ijk(self) -> npt.NDArray[np.intp]:
        """Array of shape (N, 3) with the (i, j, k) of every cell."""
        idx = np.arange(self.n_cells)
        return np.stack(
            [idx % self.nx, (idx // self.nx) % self.ny, idx // (self.nx * self.ny)],
            axis=1,
        )

    @cached_property
    def _ids(self) -> npt.NDArray[np.intp]:
        # ids[k, j, i] is the linear index of cell (i, j, k)
        return np.arange(self.n_cells).reshape(self.nz, self.ny, self.nx)

    @cached_property
    def interior_faces(self) -> InteriorFaces:
        """All faces joining two cells, grouped by axis."""
        ids = self._ids
        pairs = [
            (ids[:, :, :-1], ids[:, :, 1:]),
            (ids[:, :-1, :], ids[:, 1:, :]),
            (ids[:-1, :, :], ids[1:, :, :]),
        ]
        owner = np.concatenate([a.ravel() for a, _ in pairs])
        neighbour = np.concatenate([b.ravel() for _, b in pairs])
        axis = np.concatenate(
            [np.full(a.size, ax, dtype=np.intp) for ax, (a, _) in enumerate(pairs)]
        )
        return InteriorFaces(owner, neighbour, axis)

    @cached_property
    def boundary_faces(self) -> BoundaryFaces:
        """All surface faces, one entry per (cell, axis, side)."""
        ids = self._ids
        sides = [
            (ids[:, :, 0], 0, -1),
            (ids[:, :, -1], 0, 1),
            (ids[:, 0, :], 1, -1),
            (ids[:, -1, :], 1, 1),
            (ids[0, :, :], 2, -1),
            (ids[-1, :, :], 2, 1),
        ]
        cell = np.concatenate([c.ravel() for c, _, _ in sides])
        axis = np.concatenate([np.full(c.size, a, dtype=np.intp) for c, a, _ in sides])
        sign = np.concatenate([np.full(c.size, s, dtype=np.intp) for c, _, s in sides])
        return BoundaryFaces(cell, axis, sign)

    @cached_property
    def boundary_face_count(self) -> npt.NDArray[np.float64]:
        """Number of surface faces of every cell."""
        return np.bincount(
            self.boundary_faces.cell, minlength=self.n_cells
        ).astype(np.float64)

    def to_field(self, values: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Reshape a length-N nodal field into an (nx, ny, nz) array."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.n_cells,):
            raise ValueError(f"expected {self.n_cells} values, got {values.shape}")
        return values.reshape(self.nz, self.ny, self.nx).transpose(2, 1, 0)


@dataclass
class FullState:
    """Stacked moisture and temperature of every cell at time ``t``.

    Attributes
    ----------
    z: np.ndarray
        Length-2N vector, moisture (kg/kg) then temperature (K).
    t: float
        Time (s).

    """

    z: npt.NDArray[np.float64]
    t: float = 0.0
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        """Check the stacked layout."""
        self.z = np.asarray(self.z, dtype=np.float64)
        if self.z.ndim != 1 or self.z.size % 2:
            raise ValueError("state vector must be 1-D with an even length")

    @classmethod
    def uniform(cls, grid: Grid, x0: float, T0: float, t: float = 0.0) -> "FullState":
        """Spatially uniform state."""
        n = grid.n_cells
        return cls(np.concatenate([np.full(n, x0), np.full(n, T0)]), t)

    @property
    def n_cells(self) -> int:
        """Number of cells N."""
        return self.z.size // 2

    @property
    def moisture(self) -> npt.NDArray[np.float64]:
        """Moisture block (a view)."""
        return self.z[: self.n_cells]

    @property
    def temperature(self) -> npt.NDArray[np.float64]:
        """Temperature block (a view)."""
        return self.z[self.n_cells :]


def split_state(
    z: npt.NDArray[np.float64],
) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """Split stacked state(s) of shape (..., 2N) into moisture and temperature."""
    n = z.shape[-1] // 2
    return z[..., :n], z[..., n:]


def inner_product(a: npt.ArrayLike, b: npt.ArrayLike, grid: Grid) -> float:
    """Discrete L2 inner product sum_i a_i b_i dV of two nodal fields."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.shape != (grid.n_cells,):
        raise ValueError(
            f"fields must both have length {grid.n_cells}, got {a.shape} and {b.shape}"
        )
    return float(np.dot(a, b) * grid.cell_volume)


def total_moisture(
    state: Union[FullState, npt.NDArray[np.float64]],
    grid: Grid,
) -> float:
    """Volume-averaged moisture X of the chip (kg/kg)."""
    z = state.z if isinstance(state, FullState) else np.asarray(state)
    if z.shape != (2 * grid.n_cells,):
        raise ValueError(f"expected state of length {2 * grid.n_cells}, got {z.shape}")
    # (1/V) sum_i x_i dV reduces to the mean on a uniform grid
    return float(np.mean(z[: grid.n_cells]))
