"""Test validation of the reduced model against the full-order model."""

from unittest import TestCase, mock

import numpy as np
import pytest

from kiln.errors import NumericalError
from kiln.evals.validation import compare_impulse_responses, validate_against_fom
from kiln.models import pod
from kiln.models.rom import RomSystem
from kiln.physics.fom import FomSystem, StepAmbient, simulate, uniform_equilibrium
from kiln.physics.grid import FullState, Grid
from kiln.physics.material import MaterialParams
from kiln.utils.config import load_config


class TestValidation(TestCase):
    """Test validate_against_fom and compare_impulse_responses."""

    def setUp(self) -> None:
        """Set up a reduced model trained on the 373.15 K step."""
        self.grid = Grid(nx=5, ny=3, nz=2)
        self.params = MaterialParams(diffusivity_scale_mass=1e-7)
        self.fom = FomSystem(self.grid, self.params)
        self.z0 = FullState.uniform(self.grid, 0.8, 298.15).z
        snaps = simulate(self.fom, self.z0, StepAmbient(298.15, 373.15), 150.0, 31)
        decomposition = pod.decompose(snaps, self.grid.cell_volume)
        order = min(decomposition.rank_x, decomposition.rank_T, 4)
        self.basis = decomposition.basis(order, order)
        self.rom = RomSystem(self.basis, self.grid, self.params)

    def test_step_scenarios(self):
        """Test the per-step report and its plot data."""
        report = validate_against_fom(
            self.rom, self.fom, self.z0, (298.15, 373.15), 150.0, 16, rom_dt=0.1
        )
        self.assertEqual(len(report.scenarios), 2)
        idle, trained = report.scenarios
        self.assertLess(
            np.ptp(idle.fom_total_moisture), np.ptp(trained.fom_total_moisture)
        )
        self.assertTrue(np.isfinite(trained.nrmse))
        self.assertLess(trained.max_abs, 0.05)
        self.assertEqual(report.max_abs, max(idle.max_abs, trained.max_abs))
        frame = report.to_frame()
        self.assertEqual(list(frame.columns), ["ambient", "t", "X_fom", "X_rom"])
        self.assertEqual(len(frame), 32)
        summary = report.summary()
        self.assertIn(summary["worst_ambient"], (298.15, 373.15))

    def test_impulse(self):
        """Test that both impulse responses start from the same X."""
        u0 = 330.0
        z_ss = uniform_equilibrium(self.grid, self.params, u0).z
        basis = self.basis
        c_ss = basis.coefficients(z_ss)
        rom = RomSystem(basis, self.grid, self.params, clamp=True)
        result = compare_impulse_responses(
            rom, self.fom, z_ss, c_ss, u0, 1.0, 4.0, 0.1
        )
        self.assertEqual(result.times.size, 41)
        self.assertEqual(
            result.rom_total_moisture.shape, result.fom_total_moisture.shape
        )
        self.assertAlmostEqual(
            result.rom_total_moisture[0],
            float(basis.total_moisture(c_ss)),
            places=12,
        )

    def test_unstable_model(self):
        """Test that a diverging reduced model is reported, not raised."""
        with mock.patch(
            "kiln.evals.validation.simulate_rom",
            side_effect=NumericalError("reduced state diverged"),
        ), self.assertLogs("kiln.evals.validation", level="WARNING"):
            report = validate_against_fom(
                self.rom, self.fom, self.z0, (373.15,), 20.0, 5, rom_dt=0.1
            )
        (scenario,) = report.scenarios
        self.assertFalse(scenario.stable)
        self.assertTrue(np.all(np.isnan(scenario.rom_total_moisture)))
        self.assertEqual(report.max_abs, float("inf"))
        self.assertFalse(report.summary()["scenarios"][0]["stable"])


class TestPaperPreset(TestCase):
    """Test the fidelity of the order-6 model on the full-scale chip."""

    @pytest.mark.slow
    def test_case_a_nrmse(self):
        """Test that X(t) of the reduced model stays within 5% NRMSE for case A."""
        config = load_config("paper")
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
        report = validate_against_fom(
            rom,
            fom,
            z0,
            (config.fom.ambient,),
            config.fom.horizon,
            config.fom.n_snapshots,
            config.fom.initial_ambient,
        )
        (scenario,) = report.scenarios
        self.assertTrue(scenario.stable)
        self.assertLessEqual(scenario.nrmse, 0.05)
