"""Test material laws."""

from unittest import TestCase

import numpy as np

from kiln.errors import ConfigError, MaterialDomainError
from kiln.physics import constants, material
from kiln.physics.material import MaterialParams


class TestMaterialParams(TestCase):
    """Test MaterialParams."""

    def test_defaults(self):
        """Test the published defaults."""
        p = MaterialParams()
        self.assertEqual(p.rho_d, 500.0)
        np.testing.assert_array_equal(p.delta_d, [0.24, 0.12, 0.12])
        self.assertEqual(p.diffusivity_scale_mass, 1.0)

    def test_rejects_nonpositive(self):
        """Test rejection of nonpositive constants."""
        with self.assertRaises(ConfigError):
            MaterialParams(rho_d=0.0)
        with self.assertRaises(ConfigError):
            MaterialParams(alpha=-1.0)

    def test_transfer_coefficients_may_vanish(self):
        """Test alpha = beta = 0."""
        p = MaterialParams(alpha=0.0, beta=0.0)
        self.assertEqual(p.alpha, 0.0)

    def test_from_dict(self):
        """Test from_dict and unknown keys."""
        p = MaterialParams.from_dict({"rho_d": 450})
        self.assertEqual(p.rho_d, 450.0)
        self.assertEqual(MaterialParams.from_dict(p.to_dict()), p)
        with self.assertRaises(ConfigError):
            MaterialParams.from_dict({"density": 1.0})


class TestMaterialLaws(TestCase):
    """Test the empirical correlations."""

    def setUp(self) -> None:
        """Set up default parameters."""
        self.p = MaterialParams()

    def test_heat_capacity(self):
        """Test the volumetric heat capacity."""
        self.assertAlmostEqual(material.heat_capacity_volumetric(0.0, self.p), 7.5e5)
        self.assertAlmostEqual(
            material.heat_capacity_volumetric(0.8, self.p), 2.426e6, places=3
        )
        self.assertAlmostEqual(material.heat_capacity_volumetric(1.0, self.p), 2.845e6)
        with self.assertRaises(MaterialDomainError):
            material.heat_capacity_volumetric(-0.1, self.p)

    def test_heat_conductivity(self):
        """Test the conductivity tensor."""
        np.testing.assert_allclose(
            material.heat_conductivity_tensor(0.0, self.p), np.diag(self.p.lambda_d)
        )
        wet = material.heat_conductivity(0.8, self.p)
        np.testing.assert_allclose(wet, self.p.lambda_d + 0.8 * 0.56 / 1.8)
        doubled = material.heat_conductivity(
            0.3, self.p.replace(diffusivity_scale_heat=2.0)
        )
        np.testing.assert_allclose(doubled, 2.0 * material.heat_conductivity(0.3, self.p))
        fields = material.heat_conductivity(np.array([[0.1, 0.2]]), self.p)
        self.assertEqual(fields.shape, (1, 2, 3))

    def test_mass_diffusivity(self):
        """Test the mass diffusivity power law."""
        reference = material.mass_diffusivity_tensor(293.15, self.p)
        np.testing.assert_allclose(np.diag(reference), [0.24, 0.12, 0.12])
        self.assertEqual(reference[0, 0], 2.0 * reference[1, 1])
        hot = material.mass_diffusivity(373.15, self.p)
        np.testing.assert_allclose(hot / self.p.delta_d, 1.525, rtol=1e-3)

    def test_fiber_saturation(self):
        """Test the fiber saturation point."""
        self.assertAlmostEqual(material.fiber_saturation(298.15), 0.29985)
        self.assertAlmostEqual(material.fiber_saturation(373.15), 0.22485)
        # The affine law vanishes at 598 K, which lies outside the validity window.
        root = constants.FSP_INTERCEPT - constants.FSP_SLOPE * 598.0
        self.assertAlmostEqual(root, 0.0)
        self.assertAlmostEqual(material.fiber_saturation(500.0), 0.098)
        with self.assertRaises(MaterialDomainError):
            material.fiber_saturation(598.0)

    def test_saturation_pressure(self):
        """Test the Buck correlation."""
        self.assertAlmostEqual(material.saturation_pressure(273.15), 611.21)
        boiling = material.saturation_pressure(373.15)
        self.assertTrue(1.003e5 <= boiling <= 1.023e5)
        self.assertAlmostEqual(material.saturation_pressure(298.15), 3.17e3, delta=10.0)
        with self.assertRaises(MaterialDomainError):
            material.saturation_pressure(10.0)

    def test_relative_humidity(self):
        """Test the sorption isotherm branches."""
        self.assertEqual(material.relative_humidity_surface(0.5, 298.15), 1.0)
        self.assertEqual(material.relative_humidity_surface(0.0, 298.15), 0.0)
        x_fsp = material.fiber_saturation(298.15)
        self.assertEqual(material.relative_humidity_surface(x_fsp, 298.15), 1.0)
        phi = material.relative_humidity_surface(np.linspace(0, 0.29, 30), 298.15)
        self.assertTrue(np.all(np.diff(phi) >= 0))

    def test_abs_humidity(self):
        """Test the surface absolute humidity."""
        self.assertAlmostEqual(
            material.abs_humidity_surface(0.5, 298.15, self.p), 0.0230, places=4
        )
        self.assertAlmostEqual(
            material.abs_humidity_surface(0.5, 373.15, self.p), 0.588, delta=0.003
        )
        self.assertEqual(material.abs_humidity_surface(0.0, 298.15, self.p), 0.0)

    def test_enthalpy(self):
        """Test latent heat and bond enthalpy."""
        dh_v = material.latent_heat(298.15)
        self.assertAlmostEqual(dh_v, 3.1671e6 - 2433.2 * 298.15)
        self.assertAlmostEqual(material.enthalpy_adsorption(0.5, 298.15), dh_v)
        self.assertAlmostEqual(material.enthalpy_adsorption(0.0, 298.15), 1.4 * dh_v)
        for T in (250.0, 300.0, 450.0):
            x_fsp = material.fiber_saturation(T)
            below = material.enthalpy_adsorption(x_fsp * (1 - 1e-9), T)
            self.assertAlmostEqual(below / material.latent_heat(T), 1.0, places=12)

    def test_boundary_fluxes(self):
        """Test the signs and consistency of the surface fluxes."""
        self.assertLess(material.boundary_flux_moisture(0.8, 298.15, self.p), 0.0)
        self.assertGreater(material.boundary_flux_moisture(0.0, 298.15, self.p), 0.0)
        x_eq = material.equilibrium_moisture(330.0, self.p)
        self.assertAlmostEqual(
            material.boundary_flux_moisture(x_eq, 330.0, self.p), 0.0, places=15
        )
        self.assertAlmostEqual(
            material.boundary_flux_heat(x_eq, 330.0, self.p) + self.p.alpha * 330.0,
            0.0,
            places=6,
        )
        x = np.array([0.0, 0.1, 0.8])
        T = np.array([298.15, 330.0, 373.15])
        gamma_x, gamma_T = material.boundary_fluxes(x, T, self.p)
        np.testing.assert_allclose(
            gamma_x, material.boundary_flux_moisture(x, T, self.p), rtol=1e-14
        )
        np.testing.assert_allclose(
            gamma_T, material.boundary_flux_heat(x, T, self.p), rtol=1e-14
        )

    def test_equilibrium_moisture(self):
        """Test the hygroscopic equilibrium."""
        cool = material.equilibrium_moisture(298.15, self.p)
        hot = material.equilibrium_moisture(373.15, self.p)
        self.assertTrue(0.0 < hot < cool < material.fiber_saturation(298.15))
        self.assertAlmostEqual(
            material.abs_humidity_surface(cool, 298.15, self.p), 0.007, places=10
        )
        with self.assertRaises(MaterialDomainError):
            material.equilibrium_moisture(260.0, self.p)
