"""Fixed coefficients of the empirical wood and water vapour correlations."""

# Validity window of the empirical fits (K).
T_MIN_VALID = 200.0
T_MAX_VALID = 500.0

CELSIUS_OFFSET = 273.15
# Reference temperature of the mass diffusivity power law (K).
DIFFUSIVITY_REFERENCE_T = 293.15
DIFFUSIVITY_EXPONENT = 1.75

# Fiber saturation point x_fsp = FSP_INTERCEPT - FSP_SLOPE * T.
FSP_INTERCEPT = 0.598
FSP_SLOPE = 0.001

# Surface sorption isotherm exponent per kelvin.
SORPTION_EXPONENT = 6.453e-3

# Buck saturation pressure correlation.
BUCK_P0 = 611.21
BUCK_A = 18.678
BUCK_B = 234.5
BUCK_POLE = 16.01

# Latent heat of vaporization dh_v = LATENT_INTERCEPT - LATENT_SLOPE * T (J/kg).
LATENT_INTERCEPT = 3.1671e6
LATENT_SLOPE = 2433.2
# Bond enthalpy at zero moisture, as a fraction of dh_v.
BOND_FRACTION = 0.4

# Ambient reference of the energy cost and default steady state (K).
AMBIENT_REFERENCE = 298.15

# Drying cases: ambient temperature after the step (K).
CASE_AMBIENTS = {"A": 373.15, "B": 335.65}
VALIDATION_TEMPERATURES = (298.15, 323.15, 348.15, 373.15)
