"""Artifact persistence with provenance manifests.

Every command writes into its own directory: CSV files for fields, series and
matrices, and a ``manifest.json`` naming each file by sha256, echoing the
resolved configuration sections and recording the manifest digests of the
upstream artifacts it was built from.
"""

import json
import logging
import os
from typing import Any, Dict, List, Optional

import numpy as np
import numpy.typing as npt
import pandas as pd

from kiln.errors import ProvenanceError
from kiln.models.pod import PodBasis
from kiln.physics.fom import SnapshotSet
from kiln.physics.grid import Grid
from kiln.utils.log import setup_logging
from kiln.utils.utils import canonical_json, digest, file_sha256


# Logging.
LOGGER = logging.getLogger(__name__)
setup_logging(print_level="INFO", logger=LOGGER)

MANIFEST = "manifest.json"
FLOAT_FORMAT = "%.17g"


def write_frame(frame: pd.DataFrame, path: str) -> None:
    """Write a table as CSV with round-trip float precision."""
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def read_frame(path: str) -> pd.DataFrame:
    """Read a table written by ``write_frame``."""
    if not os.path.exists(path):
        raise ProvenanceError(f"missing artifact file {path}")
    return pd.read_csv(path, float_precision="round_trip")


def field_frame(grid: Grid, z: npt.ArrayLike) -> pd.DataFrame:
    """Per-cell table i, j, k, x, T of a full state."""
    z = np.asarray(z, dtype=np.float64)
    n = grid.n_cells
    if z.shape != (2 * n,):
        raise ValueError(f"expected a state of length {2 * n}, got {z.shape}")
    ijk = grid.cell_ijk
    return pd.DataFrame(
        {"i": ijk[:, 0], "j": ijk[:, 1], "k": ijk[:, 2], "x": z[:n], "T": z[n:]}
    )


def state_from_frame(grid: Grid, frame: pd.DataFrame) -> npt.NDArray[np.float64]:
    """Inverse of ``field_frame``; rows may come in any order."""
    if len(frame) != grid.n_cells:
        raise ProvenanceError(
            f"field has {len(frame)} rows, grid has {grid.n_cells} cells"
        )
    idx = np.array(
        [grid.index(i, j, k) for i, j, k in frame[["i", "j", "k"]].to_numpy()]
    )
    z = np.empty(2 * grid.n_cells)
    z[idx] = frame["x"].to_numpy()
    z[grid.n_cells + idx] = frame["T"].to_numpy()
    return z


class ArtifactWriter:
    """Collect the files of one artifact directory and seal them in a manifest.

    Parameters
    ----------
    directory: str
        Output directory, created if needed.
    kind: str
        Artifact kind recorded in the manifest.
    config: Dict[str, Any]
        Resolved configuration sections the artifact depends on.
    upstream: Dict[str, str], optional
        Manifest digests of the input artifacts by name.

    """

    def __init__(
        self,
        directory: str,
        kind: str,
        config: Dict[str, Any],
        upstream: Optional[Dict[str, str]] = None,
    ) -> None:
        self.directory = directory
        self.kind = kind
        self.config = config
        self.upstream = dict(upstream or {})
        self.files: Dict[str, str] = {}
        os.makedirs(directory, exist_ok=True)

    def path(self, name: str) -> str:
        """Absolute location of a file inside the artifact."""
        return os.path.join(self.directory, name)

    def frame(self, name: str, frame: pd.DataFrame) -> str:
        """Write a CSV table and record its hash."""
        path = self.path(name)
        write_frame(frame, path)
        self.files[name] = file_sha256(path)
        return path

    def json(self, name: str, obj: Any) -> str:
        """Write canonical JSON and record its hash."""
        path = self.path(name)
        with open(path, "w") as file:
            file.write(canonical_json(obj))
        self.files[name] = file_sha256(path)
        return path

    def close(self, meta: Optional[Dict[str, Any]] = None) -> str:
        """Write the manifest and return its digest."""
        manifest = {
            "kind": self.kind,
            "files": dict(sorted(self.files.items())),
            "config": self.config,
            "config_digest": digest(self.config),
            "upstream": dict(sorted(self.upstream.items())),
            "meta": meta or {},
        }
        path = self.path(MANIFEST)
        with open(path, "w") as file:
            file.write(canonical_json(manifest))
        LOGGER.info(f"Wrote {len(self.files)} {self.kind} files to {self.directory}")
        return file_sha256(path)


def read_manifest(directory: str) -> Dict[str, Any]:
    """Load the manifest of an artifact directory.

    Raises
    ------
    ProvenanceError
        If the manifest is missing or not valid JSON.

    """
    path = os.path.join(directory, MANIFEST)
    if not os.path.exists(path):
        raise ProvenanceError(f"no manifest in {directory}; run the upstream command")
    try:
        with open(path, "r") as file:
            manifest: Dict[str, Any] = json.load(file)
    except json.JSONDecodeError as err:
        raise ProvenanceError(f"corrupt manifest {path}: {err}") from err
    return manifest


def manifest_digest(directory: str) -> str:
    """sha256 of the manifest file, used as the artifact's identity."""
    path = os.path.join(directory, MANIFEST)
    if not os.path.exists(path):
        raise ProvenanceError(f"no manifest in {directory}; run the upstream command")
    return file_sha256(path)


def verify_artifact(
    directory: str,
    kind: Optional[str] = None,
    config: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    """Check an artifact's files against its manifest.

    Parameters
    ----------
    directory: str
        Artifact directory.
    kind: str, optional
        Expected artifact kind.
    config: Dict[str, Any], optional
        Configuration sections the artifact must have been built from.

    Returns
    -------
    Dict[str, Any]
        The manifest.

    Raises
    ------
    ProvenanceError
        On a missing or tampered file, a kind mismatch or a config mismatch.

    """
    manifest = read_manifest(directory)
    if kind is not None and manifest.get("kind") != kind:
        raise ProvenanceError(
            f"{directory} holds a {manifest.get('kind')!r} artifact, expected {kind!r}"
        )
    for name, expected in manifest["files"].items():
        path = os.path.join(directory, name)
        if not os.path.exists(path):
            raise ProvenanceError(f"artifact file {path} is missing")
        if file_sha256(path) != expected:
            raise ProvenanceError(f"artifact file {path} was modified")
    if config is not None and manifest["config_digest"] != digest(config):
        raise ProvenanceError(
            f"{directory} was built from a different configuration; rerun it"
        )
    return manifest


def save_snapshots(
    directory: str,
    snaps: SnapshotSet,
    grid: Grid,
    config: Dict[str, Any],
    upstream: Optional[Dict[str, str]] = None,
) -> str:
    """Write one CSV per snapshot, the X(t) series and a manifest.

    Returns
    -------
    str
        Digest of the manifest.

    """
    writer = ArtifactWriter(directory, "snapshots", config, upstream)
    names: List[str] = []
    for j, state in enumerate(snaps.states):
        name = f"snapshot_{j:04d}.csv"
        writer.frame(name, field_frame(grid, state))
        names.append(name)
    writer.frame(
        "total_moisture.csv",
        pd.DataFrame({"t": snaps.times, "X": snaps.total_moisture}),
    )
    return writer.close(
        {"times": snaps.times, "snapshots": names, "stride": snaps.stride}
    )


def load_snapshots(
    directory: str,
    grid: Grid,
    config: Optional[Dict[str, Any]] = None,
) -> SnapshotSet:
    """Read a snapshot artifact after verifying it."""
    manifest = verify_artifact(directory, "snapshots", config)
    meta = manifest["meta"]
    states = np.array(
        [
            state_from_frame(grid, read_frame(os.path.join(directory, name)))
            for name in meta["snapshots"]
        ]
    )
    series = read_frame(os.path.join(directory, "total_moisture.csv"))
    return SnapshotSet(
        series["t"].to_numpy(),
        states,
        series["X"].to_numpy(),
        stride=int(meta["stride"]),
    )


def _mode_frame(grid: Grid, modes: npt.NDArray[np.float64]) -> List[pd.DataFrame]:
    ijk = grid.cell_ijk
    return [
        pd.DataFrame({"i": ijk[:, 0], "j": ijk[:, 1], "k": ijk[:, 2], "phi": mode})
        for mode in modes.T
    ]


def save_basis(
    directory: str,
    basis: PodBasis,
    grid: Grid,
    config: Dict[str, Any],
    upstream: Optional[Dict[str, str]] = None,
    extras: Optional[Dict[str, pd.DataFrame]] = None,
    meta: Optional[Dict[str, Any]] = None,
) -> str:
    """Write the mean, one CSV per mode, the singular values and a manifest.

    ``extras`` are further tables stored alongside, ``meta`` is merged into the
    manifest metadata.
    """
    writer = ArtifactWriter(directory, "basis", config, upstream)
    for name, frame in (extras or {}).items():
        writer.frame(name, frame)
    writer.frame("mean.csv", field_frame(grid, basis.mean))
    for k, frame in enumerate(_mode_frame(grid, basis.modes_x)):
        writer.frame(f"mode_x_{k + 1:02d}.csv", frame)
    for k, frame in enumerate(_mode_frame(grid, basis.modes_T)):
        writer.frame(f"mode_T_{k + 1:02d}.csv", frame)
    sv_x, sv_T = basis.singular_values_x, basis.singular_values_T
    writer.frame(
        "singular_values.csv",
        pd.DataFrame(
            {
                "field": ["x"] * sv_x.size + ["T"] * sv_T.size,
                "k": np.concatenate(
                    [np.arange(1, sv_x.size + 1), np.arange(1, sv_T.size + 1)]
                ),
                "sigma": np.concatenate([sv_x, sv_T]),
            }
        ),
    )
    energy_x, energy_T = basis.energy_fraction()
    return writer.close(
        {
            "n_x": basis.n_x,
            "n_T": basis.n_T,
            "cell_volume": basis.cell_volume,
            "energy_x": energy_x,
            "energy_T": energy_T,
            **(meta or {}),
        }
    )


def load_basis(
    directory: str,
    grid: Grid,
    config: Optional[Dict[str, Any]] = None,
) -> PodBasis:
    """Read a basis artifact after verifying it."""
    manifest = verify_artifact(directory, "basis", config)
    meta = manifest["meta"]
    mean = state_from_frame(grid, read_frame(os.path.join(directory, "mean.csv")))

    def modes(field_name: str, count: int) -> npt.NDArray[np.float64]:
        columns = np.zeros((grid.n_cells, count))
        for k in range(count):
            frame = read_frame(os.path.join(directory, f"mode_{field_name}_{k + 1:02d}.csv"))
            idx = [grid.index(i, j, l) for i, j, l in frame[["i", "j", "k"]].to_numpy()]
            columns[idx, k] = frame["phi"].to_numpy()
        return columns

    sv = read_frame(os.path.join(directory, "singular_values.csv"))
    return PodBasis(
        mean=mean,
        modes_x=modes("x", int(meta["n_x"])),
        modes_T=modes("T", int(meta["n_T"])),
        cell_volume=float(meta["cell_volume"]),
        singular_values_x=sv.loc[sv["field"] == "x", "sigma"].to_numpy(),
        singular_values_T=sv.loc[sv["field"] == "T", "sigma"].to_numpy(),
    )
