"""Run configuration: YAML presets merged with user files and overrides."""

import copy
import dataclasses
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple, Type, TypeVar

import yaml

from kiln.errors import ConfigError
from kiln.physics.constants import AMBIENT_REFERENCE, CASE_AMBIENTS
from kiln.physics.grid import Grid
from kiln.physics.material import MaterialParams
from kiln.utils.utils import digest


CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), "configs")
PRESETS = ("paper", "desk")

SectionT = TypeVar("SectionT", bound="Section")


@dataclass(frozen=True)
class Section:
    """Base of the plain configuration sections."""

    @classmethod
    def from_dict(cls: Type[SectionT], data: Dict[str, Any], name: str) -> SectionT:
        """Build a section, rejecting unknown keys and invalid values."""
        if not isinstance(data, dict):
            raise ConfigError(f"section {name} must be a mapping")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown {name} keys: {unknown}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as err:
            if isinstance(err, ConfigError):
                raise
            raise ConfigError(f"invalid {name} section: {err}") from err

    def to_dict(self) -> Dict[str, Any]:
        """Return the section as builtins."""
        return dataclasses.asdict(self)


def _floats(values: Any, name: str) -> Tuple[float, ...]:
    if not isinstance(values, (list, tuple)) or not values:
        raise ConfigError(f"{name} must be a nonempty list")
    return tuple(float(v) for v in values)


def _ints(values: Any, name: str) -> Tuple[int, ...]:
    if not isinstance(values, (list, tuple)) or not values:
        raise ConfigError(f"{name} must be a nonempty list")
    return tuple(int(v) for v in values)


def _positive(section: str, **values: Optional[float]) -> None:
    for key, value in values.items():
        if value is not None and not value > 0:
            raise ConfigError(f"{section}.{key} must be positive, got {value}")


@dataclass(frozen=True)
class FomConfig(Section):
    """Initial state, ambient cases and integration of the full-order model."""

    x0: float = 0.8
    T0: float = AMBIENT_REFERENCE
    initial_ambient: float = AMBIENT_REFERENCE
    cases: Dict[str, float] = field(default_factory=lambda: dict(CASE_AMBIENTS))
    case: str = "A"
    horizon: float = 1100.0
    n_snapshots: int = 100
    dt: Optional[float] = None
    stability: str = "adapt"
    safety: float = 0.9
    face_mean: str = "harmonic"

    def __post_init__(self) -> None:
        """Validate values."""
        object.__setattr__(
            self, "cases", {str(k): float(v) for k, v in dict(self.cases).items()}
        )
        if self.case not in self.cases:
            raise ConfigError(f"fom.case {self.case!r} not in {sorted(self.cases)}")
        if self.x0 < 0:
            raise ConfigError("fom.x0 must be nonnegative")
        _positive("fom", horizon=self.horizon, dt=self.dt, safety=self.safety)
        if self.n_snapshots < 2:
            raise ConfigError("fom.n_snapshots must be at least 2")
        if self.stability not in ("abort", "warn", "adapt"):
            raise ConfigError(f"fom.stability {self.stability!r} unknown")
        if self.face_mean not in ("harmonic", "arithmetic"):
            raise ConfigError(f"fom.face_mean {self.face_mean!r} unknown")

    @property
    def ambient(self) -> float:
        """Ambient temperature after the step for the selected case."""
        return self.cases[self.case]


@dataclass(frozen=True)
class PodConfig(Section):
    """Basis order and the snapshot case it is built from."""

    n_x: int = 3
    n_T: int = 3
    case: str = "A"
    rank_tol: float = 1e-10

    def __post_init__(self) -> None:
        """Validate values."""
        if self.n_x < 1 or self.n_T < 1:
            raise ConfigError("pod.n_x and pod.n_T must be at least 1")
        _positive("pod", rank_tol=self.rank_tol)


@dataclass(frozen=True)
class ValidationConfig(Section):
    """Ambient steps and impulse of the reduced-model validation."""

    temperatures: Tuple[float, ...] = (298.15, 323.15, 348.15, 373.15)
    horizon: float = 1100.0
    n_points: int = 100
    rom_dt: Optional[float] = None
    impulse_magnitude: float = 1.0
    impulse_horizon: float = 200.0

    def __post_init__(self) -> None:
        """Validate values."""
        object.__setattr__(
            self, "temperatures", _floats(self.temperatures, "validation.temperatures")
        )
        _positive(
            "validation",
            horizon=self.horizon,
            rom_dt=self.rom_dt,
            impulse_horizon=self.impulse_horizon,
        )
        if self.n_points < 2:
            raise ConfigError("validation.n_points must be at least 2")


@dataclass(frozen=True)
class GramianSection(Section):
    """Impulse family, quadrature and order sweep of the Gramian analysis."""

    magnitudes: Tuple[float, ...] = (1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3)
    u0: float = AMBIENT_REFERENCE
    dt: float = 1.0
    n_steps: int = 15_000
    settle_tol: float = 1e-8
    workers: int = 1
    orders: Tuple[int, ...] = (4, 6, 8, 10)
    convergence_factor: int = 0

    def __post_init__(self) -> None:
        """Validate values."""
        object.__setattr__(
            self, "magnitudes", _floats(self.magnitudes, "gramian.magnitudes")
        )
        object.__setattr__(self, "orders", _ints(self.orders, "gramian.orders"))
        if any(h == 0 for h in self.magnitudes):
            raise ConfigError("gramian.magnitudes must be nonzero")
        _positive("gramian", dt=self.dt, settle_tol=self.settle_tol)
        if self.n_steps < 1 or self.workers < 1 or self.convergence_factor < 0:
            raise ConfigError("gramian.n_steps and workers must be positive")


@dataclass(frozen=True)
class OcpSection(Section):
    """Optimal control problem and solver limits."""

    t_f: float = 600.0
    dt: float = 1.0
    u_min: float = 298.15
    u_max: float = 373.15
    target: float = 0.1
    baseline: float = AMBIENT_REFERENCE
    n_starts: int = 5
    max_outer: int = 30
    max_inner: int = 200
    mu0: float = 1e3
    mu_growth: float = 10.0
    mu_max: float = 1e9
    constraint_tol: float = 1e-4
    gradient_tol: float = 1e-6
    fd_step: float = 1e-6
    fd_scheme: str = "forward"
    workers: int = 1
    orders: Tuple[int, ...] = (6, 10, 34)
    verify: bool = True

    def __post_init__(self) -> None:
        """Validate values."""
        object.__setattr__(self, "orders", _ints(self.orders, "ocp.orders"))
        _positive("ocp", t_f=self.t_f, dt=self.dt, fd_step=self.fd_step)
        if self.fd_scheme not in ("forward", "central"):
            raise ConfigError("ocp.fd_scheme must be forward or central")
        if not self.u_min < self.u_max:
            raise ConfigError("ocp.u_min must be below ocp.u_max")

    def problem(self) -> Dict[str, float]:
        """Keyword arguments of the problem statement."""
        keys = ("t_f", "dt", "u_min", "u_max", "target", "baseline")
        return {key: getattr(self, key) for key in keys}


@dataclass(frozen=True)
class CalibrationConfig(Section):
    """Search bracket of the mass diffusivity calibration."""

    target_fraction: float = 0.01
    lower: float = 1e-9
    upper: float = 1e-5
    rel_tol: float = 0.02

    def __post_init__(self) -> None:
        """Validate values."""
        _positive(
            "calibration",
            target_fraction=self.target_fraction,
            lower=self.lower,
            rel_tol=self.rel_tol,
        )
        if not self.lower < self.upper:
            raise ConfigError("calibration.lower must be below calibration.upper")


@dataclass(frozen=True)
class IoConfig(Section):
    """Output location and console behaviour."""

    out_dir: str = "runs"
    progress: bool = False


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved configuration of one command."""

    material: MaterialParams = field(default_factory=MaterialParams)
    grid: Grid = field(default_factory=Grid)
    fom: FomConfig = field(default_factory=FomConfig)
    pod: PodConfig = field(default_factory=PodConfig)
    validation: ValidationConfig = field(default_factory=ValidationConfig)
    gramian: GramianSection = field(default_factory=GramianSection)
    ocp: OcpSection = field(default_factory=OcpSection)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    io: IoConfig = field(default_factory=IoConfig)
    seed: int = 0
    preset: str = "paper"

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        """Build and validate a configuration from nested mappings."""
        sections: Dict[str, Type[Section]] = {
            "fom": FomConfig,
            "pod": PodConfig,
            "validation": ValidationConfig,
            "gramian": GramianSection,
            "ocp": OcpSection,
            "calibration": CalibrationConfig,
            "io": IoConfig,
        }
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown config sections: {unknown}")
        kwargs: Dict[str, Any] = {
            name: section.from_dict(data.get(name) or {}, name)
            for name, section in sections.items()
        }
        kwargs["material"] = MaterialParams.from_dict(data.get("material") or {})
        kwargs["grid"] = Grid.from_dict(data.get("grid") or {})
        kwargs["seed"] = int(data.get("seed", 0))
        kwargs["preset"] = str(data.get("preset", "paper"))
        return cls(**kwargs)

    def to_dict(self) -> Dict[str, Any]:
        """Return the resolved configuration as builtins."""
        out: Dict[str, Any] = {
            f.name: getattr(self, f.name) for f in dataclasses.fields(self)
        }
        for name, value in out.items():
            if hasattr(value, "to_dict"):
                out[name] = value.to_dict()
        return out

    def sections(self, *names: str) -> Dict[str, Any]:
        """Subset of ``to_dict`` an artifact depends on."""
        resolved = self.to_dict()
        return {name: resolved[name] for name in names}


def config_digest(sections: Dict[str, Any]) -> str:
    """Digest identifying the configuration sections of an artifact."""
    return digest(sections)


def deep_merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    """Merge ``update`` into a copy of ``base``; nested mappings merge key-wise."""
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _read_yaml(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise ConfigError(f"config file {path} not found")
    with open(path, "r") as file:
        try:
            data = yaml.safe_load(file)
        except yaml.YAMLError as err:
            raise ConfigError(f"cannot parse {path}: {err}") from err
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a mapping")
    return data


def load_config(
    preset: str = "paper",
    config_path: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    """Resolve a configuration.

    Parameters
    ----------
    preset: str
        Name of the YAML preset in ``kiln/configs`` providing the defaults.
    config_path: str, optional
        User YAML merged over the preset.
    overrides: Dict[str, Any], optional
        Nested values merged last, e.g. from command-line flags.

    Returns
    -------
    RunConfig
        Validated configuration.

    Raises
    ------
    ConfigError
        On an unknown preset, an unknown key or an invalid value.

    """
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {PRESETS}")
    data = _read_yaml(os.path.join(CONFIG_DIR, f"{preset}.yaml"))
    if config_path:
        data = deep_merge(data, _read_yaml(config_path))
    if overrides:
        data = deep_merge(data, overrides)
    data["preset"] = preset
    return RunConfig.from_dict(data)
