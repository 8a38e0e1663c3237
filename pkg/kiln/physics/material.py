"""Empirical material laws of wet wood and the surface exchange fluxes.

Every function is vectorized: moisture ``x`` (kg/kg) and temperature ``T`` (K)
may be scalars or arrays of any broadcastable shape. Scalar input gives a
float back. Per-axis tensor entries are returned along a trailing axis of
length 3 ordered (x, y, z).
"""

import dataclasses
from dataclasses import dataclass
from typing import Any, Dict, Tuple, Union

import numpy as np
import numpy.typing as npt
from scipy.optimize import brentq

from kiln.errors import ConfigError, MaterialDomainError
from kiln.physics.constants import (
    BOND_FRACTION,
    BUCK_A,
    BUCK_B,
    BUCK_P0,
    BUCK_POLE,
    CELSIUS_OFFSET,
    DIFFUSIVITY_EXPONENT,
    DIFFUSIVITY_REFERENCE_T,
    FSP_INTERCEPT,
    FSP_SLOPE,
    LATENT_INTERCEPT,
    LATENT_SLOPE,
    SORPTION_EXPONENT,
    T_MAX_VALID,
    T_MIN_VALID,
)


ArrayLike = Union[float, npt.ArrayLike]
FloatOrArray = Union[float, npt.NDArray[np.float64]]

# Transfer coefficients may vanish to model an insulated, sealed surface.
_NONNEGATIVE_FIELDS = ("alpha", "beta")


@dataclass(frozen=True)
class MaterialParams:
    """Physical constants of a wood chip and its surroundings.

    Defaults are reference values for softwood chips in humid air.

    Attributes
    ----------
    rho_d: float
        Density of dry wood (kg/m^3).
    c_pd, c_pw: float
        Specific heat capacities of dry wood and water (J/(kg K)).
    lambda_w: float
        Thermal conductivity of water (W/(m K)).
    lambda_d_x, lambda_d_y, lambda_d_z: float
        Dry-wood thermal conductivity along each axis (W/(m K)).
    delta_d_x, delta_d_y, delta_d_z: float
        Mass diffusivity along each axis at the reference temperature (m^2/s).
    alpha: float
        Surface heat transfer coefficient (W/(m^2 K)).
    beta: float
        Surface mass transfer coefficient (m/s).
    M_H2O: float
        Molar mass of water (kg/mol).
    R: float
        Universal gas constant (J/(mol K)).
    rho_inf: float
        Absolute humidity of the ambient air (kg/m^3).
    diffusivity_scale_heat, diffusivity_scale_mass: float
        Dimensionless calibration multipliers of the conductivity and the
        mass diffusivity.

    """

    rho_d: float = 500.0
    c_pd: float = 1500.0
    c_pw: float = 4190.0
    lambda_w: float = 0.56
    lambda_d_x: float = 1e-7
    lambda_d_y: float = 2e-9
    lambda_d_z: float = 2e-9
    delta_d_x: float = 0.24
    delta_d_y: float = 0.12
    delta_d_z: float = 0.12
    alpha: float = 45.0
    beta: float = 0.075
    M_H2O: float = 18.01528e-3
    R: float = 8.3144621
    rho_inf: float = 0.007
    diffusivity_scale_heat: float = 1.0
    diffusivity_scale_mass: float = 1.0

    def __post_init__(self) -> None:
        """Reject nonpositive constants."""
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            if not np.isfinite(value):
                raise ConfigError(f"material.{field.name} must be finite, got {value}")
            if field.name in _NONNEGATIVE_FIELDS:
                if value < 0:
                    raise ConfigError(
                        f"material.{field.name} must be nonnegative, got {value}"
                    )
            elif value <= 0:
                raise ConfigError(f"material.{field.name} must be positive, got {value}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MaterialParams":
        """Build parameters from a flat mapping, rejecting unknown keys."""
        known = {field.name for field in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown material keys: {unknown}")
        return cls(**{key: float(value) for key, value in data.items()})

    def to_dict(self) -> Dict[str, float]:
        """Return the parameters as a flat mapping."""
        return dataclasses.asdict(self)

    def replace(self, **changes: float) -> "MaterialParams":
        """Return a copy with some constants changed."""
        return dataclasses.replace(self, **changes)

    @property
    def lambda_d(self) -> npt.NDArray[np.float64]:
        """Dry conductivities along (x, y, z)."""
        return np.array([self.lambda_d_x, self.lambda_d_y, self.lambda_d_z])

    @property
    def delta_d(self) -> npt.NDArray[np.float64]:
        """Reference mass diffusivities along (x, y, z)."""
        return np.array([self.delta_d_x, self.delta_d_y, self.delta_d_z])


def _out(value: npt.NDArray[np.float64]) -> FloatOrArray:
    return float(value) if np.ndim(value) == 0 else value


def _moisture(x: ArrayLike) -> npt.NDArray[np.float64]:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise MaterialDomainError("moisture must be finite")
    if np.any(x < 0):
        raise MaterialDomainError(f"moisture must be nonnegative, got {x.min()}")
    return x


def _temperature(T: ArrayLike) -> npt.NDArray[np.float64]:
    T = np.asarray(T, dtype=np.float64)
    if not np.all(np.isfinite(T)):
        raise MaterialDomainError("temperature must be finite")
    if np.any(T < T_MIN_VALID) or np.any(T > T_MAX_VALID):
        raise MaterialDomainError(
            f"temperature outside [{T_MIN_VALID}, {T_MAX_VALID}] K: "
            f"range [{T.min()}, {T.max()}]"
        )
    return T


def heat_capacity_volumetric(x: ArrayLike, p: MaterialParams) -> FloatOrArray:
    """Volumetric heat capacity s of wet wood (J/(m^3 K)).

    The wet density rho_d (1 + x) and the mass-averaged specific heat
    (c_pd + x c_pw) / (1 + x) combine to rho_d (c_pd + x c_pw).
    """
    x = _moisture(x)
    return _out(p.rho_d * (p.c_pd + x * p.c_pw))


def heat_conductivity(x: ArrayLike, p: MaterialParams) -> npt.NDArray[np.float64]:
    """Diagonal entries of the conductivity tensor, shape ``x.shape + (3,)``."""
    x = _moisture(x)
    wet = (x * p.lambda_w / (1.0 + x))[..., None]
    return (p.lambda_d + wet) * p.diffusivity_scale_heat


def heat_conductivity_tensor(x: float, p: MaterialParams) -> npt.NDArray[np.float64]:
    """Diagonal 3x3 thermal conductivity tensor (W/(m K)) at moisture ``x``."""
    return np.diag(heat_conductivity(x, p))


def mass_diffusivity(T: ArrayLike, p: MaterialParams) -> npt.NDArray[np.float64]:
    """Diagonal entries of the mass diffusivity tensor, shape ``T.shape + (3,)``."""
    T = np.asarray(T, dtype=np.float64)
    if not np.all(np.isfinite(T)) or np.any(T <= 0):
        raise MaterialDomainError("temperature must be positive and finite")
    factor = (T / DIFFUSIVITY_REFERENCE_T) ** DIFFUSIVITY_EXPONENT
    return p.delta_d * factor[..., None] * p.diffusivity_scale_mass


def mass_diffusivity_tensor(T: float, p: MaterialParams) -> npt.NDArray[np.float64]:
    """Diagonal 3x3 mass diffusivity tensor (m^2/s) at temperature ``T``."""
    return np.diag(mass_diffusivity(T, p))


def fiber_saturation(T: ArrayLike) -> FloatOrArray:
    """Moisture at the fiber saturation point (kg/kg)."""
    T = _temperature(T)
    return _out(FSP_INTERCEPT - FSP_SLOPE * T)


def saturation_pressure(T: ArrayLike) -> FloatOrArray:
    """Saturation vapour pressure over water after Buck (Pa)."""
    T = np.asarray(T, dtype=np.float64)
    if not np.all(np.isfinite(T)) or np.any(T <= BUCK_POLE):
        raise MaterialDomainError(
            f"saturation pressure undefined for T <= {BUCK_POLE} K"
        )
    celsius = T - CELSIUS_OFFSET
    return _out(
        BUCK_P0 * np.exp((BUCK_A - celsius / BUCK_B) * celsius / (T - BUCK_POLE))
    )


def _saturation_ratio(
    x: npt.NDArray[np.float64],
    T: npt.NDArray[np.float64],
) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.bool_]]:
    """Return 1 - x/x_fsp clipped at zero and the above-saturation mask."""
    x_fsp = FSP_INTERCEPT - FSP_SLOPE * T
    saturated = x >= x_fsp
    base = np.where(saturated, 0.0, 1.0 - x / x_fsp)
    assert np.all(base >= 0.0), "negative isotherm base"
    return base, saturated


def relative_humidity_surface(x: ArrayLike, T: ArrayLike) -> FloatOrArray:
    """Relative humidity of the air at the chip surface, in [0, 1]."""
    x = _moisture(x)
    T = _temperature(T)
    base, saturated = _saturation_ratio(x, T)
    phi = np.where(saturated, 1.0, 1.0 - base ** (SORPTION_EXPONENT * T))
    return _out(np.clip(phi, 0.0, 1.0))


def abs_humidity_surface(x: ArrayLike, T: ArrayLike, p: MaterialParams) -> FloatOrArray:
    """Absolute humidity of the air at the chip surface (kg/m^3)."""
    phi = np.asarray(relative_humidity_surface(x, T))
    T = np.asarray(T, dtype=np.float64)
    return _out(p.M_H2O * phi * np.asarray(saturation_pressure(T)) / (p.R * T))


def latent_heat(T: ArrayLike) -> FloatOrArray:
    """Latent heat of vaporization of free water (J/kg)."""
    T = _temperature(T)
    return _out(LATENT_INTERCEPT - LATENT_SLOPE * T)


def enthalpy_adsorption(x: ArrayLike, T: ArrayLike) -> FloatOrArray:
    """Enthalpy of desorption, latent heat plus bond enthalpy (J/kg)."""
    x = _moisture(x)
    T = _temperature(T)
    dh_v = LATENT_INTERCEPT - LATENT_SLOPE * T
    base, _ = _saturation_ratio(x, T)
    return _out(dh_v * (1.0 + BOND_FRACTION * base**2))


def boundary_flux_moisture(x: ArrayLike, T: ArrayLike, p: MaterialParams) -> FloatOrArray:
    """Moisture flux into the chip per unit area, (beta/rho_d)(rho_inf - rho)."""
    rho = np.asarray(abs_humidity_surface(x, T, p))
    return _out(p.beta / p.rho_d * (p.rho_inf - rho))


def boundary_flux_heat(x: ArrayLike, T: ArrayLike, p: MaterialParams) -> FloatOrArray:
    """Heat flux into the chip per unit area without the ambient term alpha*u."""
    rho = np.asarray(abs_humidity_surface(x, T, p))
    T = np.asarray(T, dtype=np.float64)
    dh = np.asarray(enthalpy_adsorption(x, T))
    return _out(-p.alpha * T + dh * p.beta * (p.rho_inf - rho))


def boundary_fluxes(
    x: ArrayLike,
    T: ArrayLike,
    p: MaterialParams,
) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """Evaluate both surface fluxes sharing one humidity evaluation.

    Returns
    -------
    Tuple[np.ndarray, np.ndarray]
        Moisture flux and heat flux (without alpha*u), as arrays.

    """
    x = _moisture(x)
    T = _temperature(T)
    base, saturated = _saturation_ratio(x, T)
    phi = np.clip(
        np.where(saturated, 1.0, 1.0 - base ** (SORPTION_EXPONENT * T)), 0.0, 1.0
    )
    celsius = T - CELSIUS_OFFSET
    p_sat = BUCK_P0 * np.exp((BUCK_A - celsius / BUCK_B) * celsius / (T - BUCK_POLE))
    deficit = p.rho_inf - p.M_H2O * phi * p_sat / (p.R * T)
    dh = (LATENT_INTERCEPT - LATENT_SLOPE * T) * (1.0 + BOND_FRACTION * base**2)
    return p.beta / p.rho_d * deficit, -p.alpha * T + dh * p.beta * deficit


def equilibrium_moisture(T: float, p: MaterialParams) -> float:
    """Moisture whose surface humidity equals the ambient humidity at ``T``.

    Parameters
    ----------
    T: float
        Uniform temperature of chip and air (K).
    p: MaterialParams
        Material parameters, ``rho_inf`` is the target humidity.

    Returns
    -------
    float
        Equilibrium moisture below the fiber saturation point (kg/kg).

    Raises
    ------
    MaterialDomainError
        If saturated air at ``T`` is not more humid than the ambient air.

    """
    x_fsp = float(fiber_saturation(T))
    rho_sat = float(abs_humidity_surface(x_fsp, T, p))
    if rho_sat <= p.rho_inf:
        raise MaterialDomainError(
            f"no hygroscopic equilibrium at T={T} K: saturated humidity "
            f"{rho_sat:.4g} <= ambient {p.rho_inf:.4g} kg/m^3"
        )
    return float(
        brentq(
            lambda x: float(abs_humidity_surface(x, T, p)) - p.rho_inf,
            0.0,
            x_fsp,
            xtol=1e-15,
            rtol=4.0 * np.finfo(float).eps,
        )
    )
