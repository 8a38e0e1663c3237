"""Test the optimal drying schedule solver."""

from functools import lru_cache
from unittest import TestCase, mock

import numpy as np
import pytest

from kiln.control import ocp
from kiln.control.ocp import OcpSpec, SolverSettings
from kiln.errors import ConfigError, InfeasibleProblemError, NumericalError
from kiln.models import pod
from kiln.models.rom import RomSystem, simulate_rom
from kiln.physics.fom import FomSystem, SnapshotSet, StepAmbient, simulate
from kiln.physics.grid import FullState, Grid
from kiln.physics.material import MaterialParams
from kiln.utils.config import load_config


GRID = Grid(nx=5, ny=3, nz=2)
PARAMS = MaterialParams(diffusivity_scale_mass=1e-7)
Z0 = FullState.uniform(GRID, 0.8, 298.15).z


@lru_cache(maxsize=None)
def drying_snapshots() -> SnapshotSet:
    """Snapshots of a small chip drying at 373.15 K."""
    return simulate(FomSystem(GRID, PARAMS), Z0, StepAmbient(298.15, 373.15), 60.0, 31)


def make_spec(target: float = 0.1, t_f: float = 30.0) -> OcpSpec:
    """Problem on an order-4 reduced model."""
    basis = pod.build_basis(drying_snapshots(), 2, 2, GRID.cell_volume)
    rom = RomSystem(basis, GRID, PARAMS)
    return OcpSpec(rom=rom, c0=basis.coefficients(Z0), t_f=t_f, dt=1.0, target=target)


class TestCost(TestCase):
    """Test the cost and the schedule statistics."""

    def setUp(self) -> None:
        """Set up a two-period heating schedule on a 600 s grid."""
        self.times = np.arange(601, dtype=float)
        self.schedule = np.full(601, 298.15)
        self.schedule[:219] = 373.15
        self.schedule[390:591] = 373.15

    def test_evaluate_cost(self):
        """Test the heating cost."""
        self.assertEqual(ocp.evaluate_cost(np.full(601, 298.15)), 0.0)
        self.assertAlmostEqual(ocp.evaluate_cost(np.full(600, 373.15)), 45000.0, places=6)
        self.assertAlmostEqual(ocp.evaluate_cost(self.schedule), 31500.0, places=6)
        self.assertAlmostEqual(
            ocp.evaluate_cost(np.full(10, 300.0), dt=0.5, baseline=290.0), 50.0
        )

    def test_switch_points(self):
        """Test the detected heating periods."""
        self.assertEqual(
            ocp.switch_points(self.schedule, self.times, 298.15, 373.15),
            [219.0, 390.0, 591.0],
        )
        self.assertEqual(
            ocp.heating_intervals(self.schedule, self.times, 298.15, 373.15),
            [(0.0, 219.0), (390.0, 591.0)],
        )
        self.assertEqual(ocp.bound_fraction(self.schedule, 298.15, 373.15), 1.0)

    def test_hysteresis(self):
        """Test that jitter around mid-range is not a switch."""
        u = np.full(601, 373.15)
        u[100:300] = 335.65 + 0.3 * (-1.0) ** np.arange(200)
        self.assertEqual(ocp.switch_points(u, self.times, 298.15, 373.15), [])
        self.assertLess(ocp.bound_fraction(u, 298.15, 373.15), 0.7)

    def test_trailing_entry_ignored(self):
        """Test that the last grid entry does not open a period."""
        u = np.full(601, 298.15)
        u[-1] = 373.15
        self.assertEqual(ocp.heating_intervals(u, self.times, 298.15, 373.15), [])


class TestOcpSpec(TestCase):
    """Test OcpSpec validation."""

    def setUp(self) -> None:
        """Set up a problem."""
        self.spec = make_spec()

    def test_grid(self):
        """Test the control grid."""
        self.assertEqual(self.spec.n_steps, 30)
        np.testing.assert_array_equal(self.spec.times[[0, -1]], [0.0, 30.0])
        self.assertEqual(self.spec.constant(310.0).shape, (31,))

    def test_invalid(self):
        """Test rejected problem definitions."""
        rom, c0 = self.spec.rom, self.spec.c0
        with self.assertRaises(ConfigError):
            OcpSpec(rom=rom, c0=c0, t_f=10.5, dt=1.0)
        with self.assertRaises(ConfigError):
            OcpSpec(rom=rom, c0=c0, u_min=373.15, u_max=298.15)
        with self.assertRaises(ConfigError):
            OcpSpec(rom=rom, c0=c0[:-1])
        with self.assertRaises(ValueError):
            self.spec.check_schedule(np.full(31, 400.0))
        with self.assertRaises(ValueError):
            self.spec.check_schedule(np.full(30, 300.0))


class TestGradient(TestCase):
    """Test the adjoint gradient against finite differences."""

    def setUp(self) -> None:
        """Set up a problem and random schedules inside the box."""
        self.spec = make_spec()
        self.rng = np.random.default_rng(7)

    def test_constraint_gradient(self):
        """Test dX(t_f)/du against central differences on five schedules."""
        eps = 0.1
        for _ in range(5):
            u = self.rng.uniform(298.35, 372.95, self.spec.n_steps + 1)
            grad = ocp.constraint_gradient(self.spec, u)
            self.assertEqual(grad[-1], 0.0)
            fd = np.empty_like(u)
            for j in range(u.size):
                e = np.zeros_like(u)
                e[j] = eps
                fd[j] = (
                    ocp.terminal_moisture(self.spec, u + e)
                    - ocp.terminal_moisture(self.spec, u - e)
                ) / (2 * eps)
            self.assertGreater(np.abs(fd).max(), 0.0)
            self.assertLess(np.abs(grad - fd).max() / np.abs(fd).max(), 1e-4)

    def test_central_jacobians(self):
        """Test that both Jacobian schemes give the same adjoint gradient."""
        u = self.rng.uniform(298.35, 372.95, self.spec.n_steps + 1)
        forward = ocp.constraint_gradient(self.spec, u)
        central = ocp.constraint_gradient(self.spec, u, fd_scheme="central")
        self.assertLess(np.abs(forward - central).max() / np.abs(central).max(), 1e-5)
        with self.assertRaises(ConfigError):
            SolverSettings(fd_scheme="backward")

    def test_augmented_gradient(self):
        """Test the gradient of the penalized objective."""
        u = self.rng.uniform(298.35, 372.95, self.spec.n_steps + 1)
        x_f = ocp.terminal_moisture(self.spec, u)
        spec = make_spec(target=x_f - 0.01)
        value, grad, reached = ocp.augmented_objective(spec, u, 5.0, 1e3)
        self.assertAlmostEqual(reached, x_f)
        cost = ocp.evaluate_cost(u)
        self.assertAlmostEqual(value, cost + 0.5e3 * ((0.01 + 5e-3) ** 2 - 25e-6))
        eps = 0.1
        for j in (0, 15, 30):
            e = np.zeros_like(u)
            e[j] = eps
            fd = (
                ocp.augmented_objective(spec, u + e, 5.0, 1e3, with_gradient=False)[0]
                - ocp.augmented_objective(spec, u - e, 5.0, 1e3, with_gradient=False)[0]
            ) / (2 * eps)
            self.assertAlmostEqual(grad[j], fd, delta=1e-3 * abs(fd))

    def test_cost_only(self):
        """Test that without penalty the gradient is dt everywhere."""
        u = self.rng.uniform(298.35, 372.95, self.spec.n_steps + 1)
        _, grad, _ = ocp.augmented_objective(self.spec, u, 0.0, 0.0)
        np.testing.assert_array_equal(grad, self.spec.dt)
        _, none, _ = ocp.augmented_objective(self.spec, u, 0.0, 1e3, with_gradient=False)
        self.assertIsNone(none)


class TestSolve(TestCase):
    """Test the special cases and the multistart solver."""

    def setUp(self) -> None:
        """Set up the terminal moisture of the constant extremes."""
        spec = make_spec()
        self.x_idle = ocp.terminal_moisture(spec, spec.constant(spec.u_min))
        self.x_full = ocp.terminal_moisture(spec, spec.constant(spec.u_max))
        self.settings = SolverSettings(n_starts=2, max_outer=8, max_inner=60)

    def test_rollout(self):
        """Test the rollout against the reduced-model integrator."""
        spec = make_spec()
        path = ocp.rollout(spec, spec.constant(spec.u_max))
        reference = simulate_rom(spec.rom, spec.c0, spec.u_max, spec.dt, spec.t_f)
        self.assertEqual(path.coefficients.shape, (31, 4))
        np.testing.assert_allclose(
            path.coefficients, reference.coefficients, rtol=1e-13, atol=1e-15
        )
        self.assertEqual(path.terminal_moisture, path.moisture[-1])
        self.assertAlmostEqual(path.terminal_moisture, self.x_full, places=14)

    def test_heating_dries_more(self):
        """Test that full heating ends drier than idling."""
        self.assertLess(self.x_full, self.x_idle)
        spec = make_spec()
        u = spec.constant(spec.u_min)
        u[:10] = spec.u_max
        self.assertLessEqual(ocp.terminal_moisture(spec, u), self.x_idle)

    def test_inactive_bound(self):
        """Test that a loose bound keeps the input at its minimum."""
        result = ocp.solve(make_spec(target=0.95), self.settings)
        self.assertEqual(result.status, "lower-bound")
        self.assertEqual(result.cost, 0.0)
        np.testing.assert_array_equal(result.schedule, 298.15)
        self.assertEqual(result.to_dict()["start_index"], -1)

    def test_boundary_bound(self):
        """Test that the bound reached only by full heating forces it."""
        result = ocp.solve(make_spec(target=self.x_full), self.settings)
        self.assertEqual(result.status, "upper-bound")
        np.testing.assert_array_equal(result.schedule, 373.15)
        self.assertAlmostEqual(result.cost, 75.0 * 31, places=6)

    def test_infeasible(self):
        """Test the infeasibility report."""
        target = self.x_full - 0.01
        with self.assertRaises(InfeasibleProblemError) as context:
            ocp.solve(make_spec(target=target), self.settings)
        self.assertAlmostEqual(context.exception.best_terminal_moisture, self.x_full)
        with self.assertRaises(InfeasibleProblemError):
            ocp.minimal_constant_schedule(make_spec(target=target))

    def test_minimal_constant(self):
        """Test the bisection for the cheapest constant schedule."""
        target = 0.5 * (self.x_idle + self.x_full)
        spec = make_spec(target=target)
        level, cost = ocp.minimal_constant_schedule(spec, tol=1e-2)
        self.assertTrue(298.15 < level < 373.15)
        self.assertLessEqual(ocp.terminal_moisture(spec, spec.constant(level)), target)
        self.assertAlmostEqual(cost, (level - 298.15) * 31)

    @pytest.mark.slow
    def test_interior_solution(self):
        """Test the multistart solution of an active terminal bound."""
        target = 0.5 * (self.x_idle + self.x_full)
        spec = make_spec(target=target)
        settings = SolverSettings(
            n_starts=2, max_outer=15, max_inner=300, gradient_tol=1e-4
        )
        result = ocp.solve(spec, settings)
        self.assertEqual(result.status, "optimal")
        self.assertEqual(len(result.starts), 2)
        self.assertTrue(np.all(result.schedule >= spec.u_min))
        self.assertTrue(np.all(result.schedule <= spec.u_max))
        self.assertEqual(result.cost, ocp.evaluate_cost(result.schedule))
        self.assertLess(result.constraint_residual, 1e-4)
        _, constant_cost = ocp.minimal_constant_schedule(spec, tol=1e-3)
        self.assertLessEqual(result.cost, constant_cost)
        frame = result.schedule_frame()
        self.assertEqual(list(frame.columns), ["t", "u"])
        self.assertEqual(len(frame), 31)
        self.assertEqual(len(result.moisture_frame()), 31)


class TestVerification(TestCase):
    """Test verify_on_fom and order_study."""

    def test_verify_on_fom(self):
        """Test the full-order re-simulation of a schedule."""
        spec = make_spec(t_f=10.0)
        fom = FomSystem(GRID, PARAMS)
        u = spec.constant(spec.u_min)
        u[:5] = spec.u_max
        report = ocp.verify_on_fom(spec, u, fom, Z0)
        frame = report.to_frame()
        self.assertEqual(list(frame.columns), ["t", "X_rom", "X_fom"])
        self.assertEqual(len(frame), 11)
        self.assertAlmostEqual(report.fom_moisture[0], 0.8)
        self.assertGreaterEqual(report.terminal_mismatch, 0.0)
        self.assertEqual(report.fom_feasible, report.fom_moisture[-1] <= spec.target)
        self.assertIn("terminal_mismatch", report.summary())

    def test_order_study(self):
        """Test the per-order table on an inactive bound."""
        decomposition = pod.decompose(drying_snapshots(), GRID.cell_volume)
        problem = {"t_f": 10.0, "dt": 1.0, "target": 0.95}
        table, results = ocp.order_study(
            decomposition, GRID, PARAMS, Z0, [2, 4], problem
        )
        self.assertEqual(list(table["order"]), [2, 4])
        self.assertEqual(set(results), {2, 4})
        self.assertTrue(np.all(table["status"] == "lower-bound"))
        self.assertTrue(np.all(table["heating_periods"] == 0))
        self.assertTrue(np.all(table["cost"] == 0.0))

    def test_order_study_failures(self):
        """Test that failing orders get a status row instead of raising."""
        decomposition = pod.decompose(drying_snapshots(), GRID.cell_volume)
        problem = {"t_f": 10.0, "dt": 1.0, "target": 0.95}
        failures = [NumericalError("diverged"), InfeasibleProblemError("dry", 0.3)]
        with mock.patch("kiln.control.ocp.solve", side_effect=failures):
            table, results = ocp.order_study(
                decomposition, GRID, PARAMS, Z0, [2, 4], problem
            )
        self.assertEqual(list(table["status"]), ["unstable", "infeasible"])
        self.assertEqual(results, {})
        self.assertTrue(table["cost"].isna().all())


class TestDeskPreset(TestCase):
    """Test the structure of the optimal schedule on the desk preset."""

    @pytest.mark.slow
    def test_bang_bang(self):
        """Test a feasible bang-bang schedule that starts by heating."""
        config = load_config("desk")
        fom = FomSystem(config.grid, config.material, config.fom.face_mean)
        z0 = FullState.uniform(config.grid, config.fom.x0, config.fom.T0).z
        snaps = simulate(
            fom,
            z0,
            StepAmbient(config.fom.initial_ambient, config.fom.ambient),
            config.fom.horizon,
            config.fom.n_snapshots,
        )
        basis = pod.build_basis(snaps, 3, 3, config.grid.cell_volume)
        rom = RomSystem(basis, config.grid, config.material, config.fom.face_mean)
        spec = OcpSpec(rom=rom, c0=basis.coefficients(z0), **config.ocp.problem())
        section = config.ocp
        settings = SolverSettings(
            n_starts=section.n_starts,
            max_outer=section.max_outer,
            max_inner=section.max_inner,
            constraint_tol=section.constraint_tol,
            gradient_tol=section.gradient_tol,
        )
        result = ocp.solve(spec, settings)

        self.assertLess(result.constraint_residual, 1e-4)
        self.assertEqual(result.cost, ocp.evaluate_cost(result.schedule))
        self.assertGreaterEqual(
            ocp.bound_fraction(result.schedule, spec.u_min, spec.u_max), 0.95
        )
        intervals = ocp.heating_intervals(
            result.schedule, result.times, spec.u_min, spec.u_max
        )
        self.assertGreaterEqual(len(intervals), 2, intervals)
        self.assertEqual(intervals[0][0], 0.0)
        _, constant_cost = ocp.minimal_constant_schedule(spec)
        self.assertLessEqual(result.cost, constant_cost)
