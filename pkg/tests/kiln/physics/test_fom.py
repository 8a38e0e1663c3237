"""Test the full-order model."""

from unittest import TestCase

import numpy as np
import pytest

from kiln.errors import ConfigError, MaterialDomainError, NumericalError
from kiln.physics import material
from kiln.physics.fom import (
    ConstantAmbient,
    FomSystem,
    SnapshotSet,
    StepAmbient,
    ZeroOrderHoldAmbient,
    calibrate_mass_scale,
    face_average,
    impulse_response,
    simulate,
    steady_state,
    step_explicit_euler,
    uniform_equilibrium,
)
from kiln.physics.grid import FullState, Grid
from kiln.physics.material import MaterialParams


PARAMS = MaterialParams(diffusivity_scale_mass=1e-7)


class TestAmbient(TestCase):
    """Test the ambient schedules."""

    def test_schedules(self):
        """Test constant, step and zero-order hold values."""
        self.assertEqual(ConstantAmbient(300.0)(1e6), 300.0)
        step = StepAmbient(298.15, 373.15, switch_time=5.0)
        self.assertEqual(step(4.9), 298.15)
        self.assertEqual(step(5.0), 373.15)
        hold = ZeroOrderHoldAmbient((300.0, 310.0, 320.0), hold=2.0)
        self.assertEqual(hold(0.0), 300.0)
        self.assertEqual(hold(3.999), 310.0)
        self.assertEqual(hold(4.0), 320.0)
        self.assertEqual(hold(100.0), 320.0)
        with self.assertRaises(ValueError):
            ZeroOrderHoldAmbient((), hold=1.0)

    def test_face_average(self):
        """Test harmonic and arithmetic face means."""
        a, b = np.array([1.0, 0.0]), np.array([3.0, 0.0])
        np.testing.assert_allclose(face_average(a, b), [1.5, 0.0])
        np.testing.assert_allclose(face_average(a, b, "arithmetic"), [2.0, 0.0])


class TestFomSystem(TestCase):
    """Test FomSystem."""

    def setUp(self) -> None:
        """Set up a small chip."""
        self.grid = Grid(nx=3, ny=2, nz=2)
        self.system = FomSystem(self.grid, PARAMS)
        self.rng = np.random.default_rng(0)

    def random_state(self) -> np.ndarray:
        """Random admissible state."""
        n = self.grid.n_cells
        return np.concatenate(
            [self.rng.uniform(0.05, 0.6, n), self.rng.uniform(300.0, 360.0, n)]
        )

    def test_invalid_face_mean(self):
        """Test rejection of an unknown face mean."""
        with self.assertRaises(ConfigError):
            FomSystem(self.grid, PARAMS, face_mean="geometric")

    def test_equilibrium_is_steady(self):
        """Test that the uniform equilibrium does not move."""
        z = uniform_equilibrium(self.grid, PARAMS, 330.0).z
        self.assertLess(np.max(np.abs(self.system.rhs(z, 330.0))), 1e-10)

    def test_input_vector(self):
        """Test that only surface temperatures see the ambient."""
        z = self.random_state()
        f, g = self.system.drift_and_input(z)
        n = self.grid.n_cells
        np.testing.assert_array_equal(g[:n], 0.0)
        self.assertTrue(np.all(g[n:] > 0.0))
        s = material.heat_capacity_volumetric(z[:n], PARAMS)
        expected = (
            PARAMS.alpha * self.grid.face_area * self.grid.boundary_face_count
            / (s * self.grid.cell_volume)
        )
        np.testing.assert_allclose(g[n:], expected)
        np.testing.assert_allclose(self.system.rhs(z, 310.0), f + 310.0 * g)

    def test_interior_conservation(self):
        """Test that a sealed chip conserves water and heat."""
        sealed = FomSystem(self.grid, PARAMS.replace(alpha=0.0, beta=0.0))
        z = self.random_state()
        n = self.grid.n_cells
        f, g = sealed.drift_and_input(z)
        np.testing.assert_array_equal(g, 0.0)
        scale = np.max(np.abs(f[:n]))
        self.assertLess(abs(f[:n].sum()), 1e-12 * n * scale)
        s = material.heat_capacity_volumetric(z[:n], PARAMS)
        energy = s * f[n:]
        self.assertLess(abs(energy.sum()), 1e-10 * n * np.max(np.abs(energy)))

    def test_stable_dt_without_transfer(self):
        """Test the pure diffusion bound."""
        sealed = FomSystem(self.grid, PARAMS.replace(alpha=0.0, beta=0.0))
        z = self.random_state()
        n = self.grid.n_cells
        delta = material.mass_diffusivity(z[n:], PARAMS)
        lam = material.heat_conductivity(z[:n], PARAMS)
        s = material.heat_capacity_volumetric(z[:n], PARAMS)
        d_max = max(delta.max(), (lam / s[:, None]).max())
        self.assertAlmostEqual(
            sealed.stable_dt(z, safety=0.9), 0.9 * self.grid.h**2 / (6 * d_max)
        )
        self.assertLessEqual(self.system.stable_dt(z), sealed.stable_dt(z))

    def test_domain_errors(self):
        """Test that a state outside the window names its cell."""
        z = self.random_state()
        z[self.grid.n_cells + 4] = 600.0
        with self.assertRaisesRegex(MaterialDomainError, "cell 4"):
            self.system.rhs(z, 300.0)
        z = self.random_state()
        z[0] = -0.1
        with self.assertRaises(MaterialDomainError):
            self.system.drift(z)
        with self.assertRaises(ValueError):
            self.system.rhs(np.zeros(3), 300.0)

    def test_step_abort(self):
        """Test the abort policy of a single step."""
        z = self.random_state()
        bound = self.system.stable_dt(z)
        with self.assertRaises(NumericalError):
            step_explicit_euler(self.system, z, 300.0, 10 * bound, policy="abort")
        z1 = step_explicit_euler(self.system, z, 300.0, 0.5 * bound)
        np.testing.assert_allclose(z1, z + 0.5 * bound * self.system.rhs(z, 300.0))
        np.testing.assert_array_equal(
            step_explicit_euler(self.system, z, 300.0, 0.0), z
        )


class TestSimulate(TestCase):
    """Test time integration."""

    def setUp(self) -> None:
        """Set up a small chip starting wet and cold."""
        self.grid = Grid(nx=3, ny=2, nz=2)
        self.system = FomSystem(self.grid, PARAMS)
        self.z0 = FullState.uniform(self.grid, 0.8, 298.15).z

    def test_drying(self):
        """Test that the chip dries and warms toward the ambient."""
        snaps = simulate(self.system, self.z0, ConstantAmbient(373.15), 300.0, 31)
        self.assertEqual(snaps.n_snapshots, 31)
        np.testing.assert_allclose(snaps.times[[0, -1]], [0.0, 300.0])
        np.testing.assert_array_equal(snaps.states[0], self.z0)
        self.assertTrue(np.all(np.diff(snaps.total_moisture[:11]) <= 1e-12))
        self.assertLess(snaps.total_moisture[-1], snaps.total_moisture[0])
        self.assertTrue(np.all(snaps.temperature[-1] > 298.15))

    def test_mirror_symmetry(self):
        """Test that the solution inherits the mirror symmetry of the chip."""
        snaps = simulate(self.system, self.z0, ConstantAmbient(373.15), 60.0, 2)
        x = self.grid.to_field(snaps.moisture[-1])
        T = self.grid.to_field(snaps.temperature[-1])
        np.testing.assert_allclose(x, x[::-1, :, :], rtol=1e-12)
        np.testing.assert_allclose(T, T[:, ::-1, ::-1], rtol=1e-12)

    def test_stability_policies(self):
        """Test abort versus adapt for a nominal step above the bound."""
        with self.assertRaises(NumericalError):
            simulate(
                self.system, self.z0, ConstantAmbient(373.15), 60.0, 2,
                dt=30.0, stability="abort",
            )
        adapted = simulate(
            self.system, self.z0, ConstantAmbient(373.15), 60.0, 2,
            dt=30.0, stability="adapt",
        )
        reference = simulate(self.system, self.z0, ConstantAmbient(373.15), 60.0, 2)
        np.testing.assert_allclose(
            adapted.total_moisture, reference.total_moisture, rtol=1e-2
        )
        with self.assertRaises(ConfigError):
            simulate(self.system, self.z0, ConstantAmbient(373.15), 60.0, stability="x")

    def test_snapshot_set(self):
        """Test SnapshotSet validation."""
        with self.assertRaises(ValueError):
            SnapshotSet(np.array([0.0, 0.0]), np.zeros((2, 4)), np.zeros(2))
        with self.assertRaises(ValueError):
            SnapshotSet(np.array([0.0, 1.0]), np.zeros((1, 4)), np.zeros(2))
        snaps = SnapshotSet.from_states([0.0, 1.0], np.ones((2, 4)))
        np.testing.assert_array_equal(snaps.total_moisture, [1.0, 1.0])
        self.assertEqual(snaps.n_cells, 2)

    def test_impulse_jump(self):
        """Test that a jump impulse starts from z_ss + g h_d and relaxes."""
        z_ss = uniform_equilibrium(self.grid, PARAMS, 330.0).z
        response = impulse_response(self.system, z_ss, 330.0, 1.0, 400.0, stride=50)
        np.testing.assert_allclose(
            response.states[0], z_ss + self.system.input_vector(z_ss)
        )
        first = np.abs(response.states[0] - z_ss).max()
        last = np.abs(response.final - z_ss).max()
        self.assertLess(last, first)
        with self.assertRaises(ConfigError):
            impulse_response(self.system, z_ss, 330.0, 1.0, 10.0, method="kick")

    @pytest.mark.slow
    def test_steady_state(self):
        """Test steady-state marching from a perturbed start."""
        z_eq = uniform_equilibrium(self.grid, PARAMS, 330.0).z
        np.testing.assert_array_equal(steady_state(self.system, 330.0), z_eq)
        z = z_eq.copy()
        z[self.grid.n_cells :] += 1.0
        z_ss = steady_state(self.system, 330.0, z_init=z, tol=1e-8)
        np.testing.assert_allclose(z_ss[self.grid.n_cells :], 330.0, atol=1e-3)
        with self.assertRaises(NumericalError):
            steady_state(self.system, 330.0, z_init=z, max_steps=3)

    @pytest.mark.slow
    def test_calibrate_mass_scale(self):
        """Test the diffusivity calibration bracket search."""
        grid = Grid(nx=2, ny=2, nz=2)
        scale, history = calibrate_mass_scale(
            grid, MaterialParams(), 0.8, 298.15, 373.15, 1100.0,
            bounds=(1e-8, 1e-6), rel_tol=0.1,
        )
        self.assertTrue(1e-8 <= scale <= 1e-6)
        self.assertTrue(any(entry["settled"] for entry in history))
        self.assertAlmostEqual(history[0]["scale"] / 1e-6, 1.0)


class TestTwoCellChip(TestCase):
    """Test a sealed two-cell chip against hand-computed fluxes."""

    def setUp(self) -> None:
        """Set up two cells along x with constant coefficients."""
        self.grid = Grid(nx=2, ny=1, nz=1, h=1e-3)
        self.params = PARAMS.replace(alpha=0.0, beta=0.0)
        self.system = FomSystem(self.grid, self.params)
        self.z = np.array([0.2, 0.4, 293.15, 293.15])

    def test_two_point_flux(self):
        """Test the moisture exchange through the shared face."""
        rate = 0.24 * 1e-7 * (0.4 - 0.2) / self.grid.h**2
        np.testing.assert_allclose(
            self.system.rhs(self.z, 300.0), [rate, -rate, 0.0, 0.0], atol=1e-15
        )
        z1 = step_explicit_euler(self.system, self.z, 300.0, 1.0)
        np.testing.assert_allclose(z1, [0.2 + rate, 0.4 - rate, 293.15, 293.15])

    def test_stable_dt_scaling(self):
        """Test dt_max against h and the diffusivity."""
        coarse = FomSystem(Grid(nx=2, ny=1, nz=1, h=2e-3), self.params)
        self.assertAlmostEqual(
            coarse.stable_dt(self.z) / self.system.stable_dt(self.z), 4.0
        )
        fast = FomSystem(
            self.grid,
            self.params.replace(diffusivity_scale_mass=1e-3, diffusivity_scale_heat=2.0),
        )
        slow = FomSystem(
            self.grid,
            self.params.replace(diffusivity_scale_mass=5e-4, diffusivity_scale_heat=1.0),
        )
        self.assertAlmostEqual(slow.stable_dt(self.z) / fast.stable_dt(self.z), 2.0)


class TestDryingCases(TestCase):
    """Test the drying scenarios and impulse responses."""

    def setUp(self) -> None:
        """Set up a small chip."""
        self.grid = Grid(nx=2, ny=2, nz=2)
        self.system = FomSystem(self.grid, PARAMS)
        self.z0 = FullState.uniform(self.grid, 0.8, 298.15).z

    def test_case_b_dries_slower(self):
        """Test that the cooler case leaves more moisture at every time."""
        case_a = simulate(self.system, self.z0, StepAmbient(298.15, 373.15), 120.0, 13)
        case_b = simulate(self.system, self.z0, StepAmbient(298.15, 335.65), 120.0, 13)
        self.assertTrue(
            np.all(case_b.total_moisture[1:] > case_a.total_moisture[1:])
        )

    def test_equilibrium_ambient(self):
        """Test that the equilibrium ambient keeps X constant."""
        z_eq = uniform_equilibrium(self.grid, PARAMS, 298.15).z
        snaps = simulate(self.system, z_eq, ConstantAmbient(298.15), 100.0, 5)
        np.testing.assert_allclose(
            snaps.total_moisture, snaps.total_moisture[0], rtol=1e-9
        )

    def test_impulse_linearity(self):
        """Test zero and doubled impulse weights."""
        z_ss = uniform_equilibrium(self.grid, PARAMS, 330.0).z
        still = impulse_response(
            self.system, z_ss, 330.0, 0.0, 20.0, stop_on_steady=False
        )
        np.testing.assert_allclose(
            still.states, np.broadcast_to(z_ss, still.states.shape), atol=1e-9
        )
        one = impulse_response(self.system, z_ss, 330.0, 1.0, 20.0)
        two = impulse_response(self.system, z_ss, 330.0, 2.0, 20.0)
        jump_one = one.states[0] - z_ss
        jump_two = two.states[0] - z_ss
        np.testing.assert_allclose(jump_two, 2.0 * jump_one, rtol=1e-12)
        n = self.grid.n_cells
        np.testing.assert_array_equal(jump_one[:n], 0.0)


def cosine_bar(n_cells: int, length: float, T0: float) -> np.ndarray:
    """Sealed bar state with moisture 0.4 + 0.1 cos(pi s / L) at the cell centers."""
    centers = (np.arange(n_cells) + 0.5) * length / n_cells
    x = 0.4 + 0.1 * np.cos(np.pi * centers / length)
    return np.concatenate([x, np.full(n_cells, T0)])


class TestLongRun(TestCase):
    """Test long integrations against exact properties of the sealed chip."""

    def setUp(self) -> None:
        """Set up sealed material constants."""
        self.params = PARAMS.replace(alpha=0.0, beta=0.0)

    def test_water_conserved(self):
        """Test that 10^4 steps of a sealed chip keep the total moisture."""
        grid = Grid(nx=5, ny=5, nz=5)
        system = FomSystem(grid, self.params)
        rng = np.random.default_rng(11)
        n = grid.n_cells
        z0 = np.concatenate([rng.uniform(0.1, 0.6, n), rng.uniform(300.0, 350.0, n)])
        dt = system.stable_dt(z0, safety=0.5)
        snaps = simulate(
            system, z0, ConstantAmbient(330.0), 1e4 * dt, 11, dt=dt, stability="warn"
        )
        self.assertEqual(snaps.meta["n_steps"], 10_000)
        drift = np.abs(snaps.total_moisture - snaps.total_moisture[0]).max()
        self.assertLess(drift, 1e-12)
        # The moisture field itself has moved.
        self.assertGreater(np.abs(snaps.moisture[-1] - snaps.moisture[0]).max(), 1e-2)

    def test_grid_refinement(self):
        """Test second order convergence to the decaying cosine mode of a bar."""
        length, T0 = 8e-3, 320.0
        D = float(material.mass_diffusivity(T0, self.params)[0])
        horizon = 0.5 * length**2 / (np.pi**2 * D)
        errors = []
        for n_cells in (8, 16, 32):
            h = length / n_cells
            system = FomSystem(Grid(nx=n_cells, ny=1, nz=1, h=h), self.params)
            z0 = cosine_bar(n_cells, length, T0)
            snaps = simulate(
                system, z0, ConstantAmbient(T0), horizon, 2,
                dt=0.02 * h**2 / D, stability="warn",
            )
            decay = np.exp(-D * np.pi**2 * horizon / length**2)
            exact = 0.4 + (z0[:n_cells] - 0.4) * decay
            np.testing.assert_allclose(snaps.temperature[-1], T0, rtol=1e-12)
            errors.append(np.abs(snaps.moisture[-1] - exact).max())
        ratios = np.array(errors[:-1]) / np.array(errors[1:])
        np.testing.assert_allclose(ratios, 4.0, rtol=0.1)

    def test_pulse_matches_jump(self):
        """Test that the pulse response is the jump response one step later."""
        grid = Grid(nx=3, ny=2, nz=2)
        system = FomSystem(grid, PARAMS)
        z_ss = uniform_equilibrium(grid, PARAMS, 330.0).z
        dt = system.stable_dt(z_ss, 330.0)
        kwargs = dict(dt=dt, stop_on_steady=False)
        jump = impulse_response(system, z_ss, 330.0, 5.0, 50 * dt, **kwargs)
        pulse = impulse_response(
            system, z_ss, 330.0, 5.0, 50 * dt, method="pulse", **kwargs
        )
        self.assertEqual(pulse.n_snapshots, 51)
        np.testing.assert_array_equal(pulse.states[0], z_ss)
        np.testing.assert_allclose(
            pulse.states[1:], jump.states[:-1], rtol=0, atol=1e-8
        )
        self.assertTrue(np.any(jump.states[0] != z_ss))
