"""Command line front-end of the drying pipeline.

Each command reads its upstream artifacts, checks them against the resolved
configuration and writes its own artifact directory under ``--out``:

    kiln simulate --case A
    kiln reduce
    kiln validate
    kiln gramian
    kiln ocp
    kiln order-study
    kiln calibrate
"""

import argparse
import logging
import os
import sys
from typing import Any, Callable, Dict, Optional, Sequence

import numpy as np
import numpy.typing as npt
import pandas as pd

from kiln.analysis.gramian import (
    GramianConfig,
    controllability_report,
    eigenvalue_order_sweep,
    eigenvector_fields,
    empirical_gramian,
    horizon_convergence,
)
from kiln.control.ocp import (
    OcpSpec,
    SolverSettings,
    bound_fraction,
    heating_intervals,
    minimal_constant_schedule,
    order_study,
    solve,
    verify_on_fom,
)
from kiln.data.artifacts import (
    ArtifactWriter,
    load_basis,
    load_snapshots,
    manifest_digest,
    save_basis,
    save_snapshots,
    write_frame,
)
from kiln.errors import (
    ConfigError,
    InfeasibleProblemError,
    MaterialDomainError,
    NumericalError,
    ProvenanceError,
    RankError,
)
from kiln.evals.validation import compare_impulse_responses, validate_against_fom
from kiln.models.pod import (
    PodBasis,
    PodDecomposition,
    decompose,
    field_error_maps,
    reconstruction_nrmse_sweep,
)
from kiln.models.rom import RomSystem, compare_coefficients, rom_steady_state, simulate_rom
from kiln.physics.fom import (
    FomSystem,
    SnapshotSet,
    StepAmbient,
    calibrate_mass_scale,
    simulate,
    steady_state,
)
from kiln.physics.grid import FullState
from kiln.utils.config import PRESETS, RunConfig, load_config
from kiln.utils.log import attach_file_handler, setup_logging
from kiln.utils.utils import canonical_json, seed_everything


# Logging.
LOGGER = logging.getLogger(__name__)
setup_logging(print_level="INFO", logger=LOGGER)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INFEASIBLE = 4


def _fom(config: RunConfig) -> FomSystem:
    return FomSystem(config.grid, config.material, config.fom.face_mean)


def _initial_state(config: RunConfig) -> npt.NDArray[np.float64]:
    return FullState.uniform(config.grid, config.fom.x0, config.fom.T0).z


def _snapshot_config(config: RunConfig, case: str) -> Dict[str, Any]:
    sections = config.sections("material", "grid", "fom")
    sections["fom"] = {k: v for k, v in sections["fom"].items() if k != "case"}
    sections["case"] = case
    return sections


def _basis_config(config: RunConfig) -> Dict[str, Any]:
    sections = _snapshot_config(config, config.pod.case)
    sections["pod"] = config.pod.to_dict()
    return sections


def _snapshot_dir(out: str, case: str) -> str:
    return os.path.join(out, f"snapshots_{case}")


def _load_case(config: RunConfig, out: str, case: str) -> SnapshotSet:
    return load_snapshots(
        _snapshot_dir(out, case), config.grid, _snapshot_config(config, case)
    )


def _load_basis(config: RunConfig, out: str) -> PodBasis:
    return load_basis(os.path.join(out, "basis"), config.grid, _basis_config(config))


def _decomposition(config: RunConfig, out: str) -> PodDecomposition:
    snaps = _load_case(config, out, config.pod.case)
    return decompose(snaps, config.grid.cell_volume, config.pod.rank_tol)


def _rom(config: RunConfig, basis: PodBasis) -> RomSystem:
    return RomSystem(basis, config.grid, config.material, config.fom.face_mean)


def _rom_on_snapshot_times(
    rom: RomSystem,
    c0: npt.NDArray[np.float64],
    ambient: StepAmbient,
    snaps: SnapshotSet,
    rom_dt: Optional[float],
) -> Any:
    interval = float(snaps.times[1] - snaps.times[0])
    dt = rom_dt if rom_dt else rom.stable_dt(c0, max(ambient.before, ambient.after))
    substeps = max(1, int(np.ceil(interval / dt - 1e-9)))
    return simulate_rom(
        rom, c0, ambient, interval / substeps, float(snaps.times[-1]), substeps
    )


def _matrix_frame(matrix: npt.NDArray[np.float64], prefix: str) -> pd.DataFrame:
    return pd.DataFrame(
        matrix, columns=[f"{prefix}_{k + 1}" for k in range(matrix.shape[1])]
    )


def cmd_simulate(config: RunConfig, out: str) -> None:
    """Simulate the selected drying case and store its snapshots."""
    case = config.fom.case
    fom = _fom(config)
    ambient = StepAmbient(config.fom.initial_ambient, config.fom.ambient)
    LOGGER.info(f"Case {case}: step from {ambient.before:g} K to {ambient.after:g} K")
    snaps = simulate(
        fom,
        _initial_state(config),
        ambient,
        config.fom.horizon,
        n_snapshots=config.fom.n_snapshots,
        dt=config.fom.dt,
        stability=config.fom.stability,
        safety=config.fom.safety,
        progress=config.io.progress,
    )
    save_snapshots(
        _snapshot_dir(out, case), snaps, config.grid, _snapshot_config(config, case)
    )


def cmd_reduce(config: RunConfig, out: str) -> None:
    """Build the POD basis from the snapshots of ``pod.case``."""
    snaps = _load_case(config, out, config.pod.case)
    decomposition = decompose(snaps, config.grid.cell_volume, config.pod.rank_tol)
    basis = decomposition.basis(config.pod.n_x, config.pod.n_T)
    sweep = reconstruction_nrmse_sweep(decomposition, snaps)
    errors = field_error_maps(basis, snaps)
    save_basis(
        os.path.join(out, "basis"),
        basis,
        config.grid,
        _basis_config(config),
        upstream={
            f"snapshots_{config.pod.case}": manifest_digest(
                _snapshot_dir(out, config.pod.case)
            )
        },
        extras={"nrmse_sweep.csv": sweep},
        meta={"projection_errors": errors.summary()},
    )


def cmd_validate(config: RunConfig, out: str) -> None:
    """Compare the reduced model with full-order simulations."""
    basis = _load_basis(config, out)
    rom, fom = _rom(config, basis), _fom(config)
    z0 = _initial_state(config)
    section = config.validation
    report = validate_against_fom(
        rom,
        fom,
        z0,
        section.temperatures,
        section.horizon,
        section.n_points,
        config.fom.initial_ambient,
        section.rom_dt,
    )
    upstream = {"basis": manifest_digest(os.path.join(out, "basis"))}
    writer = ArtifactWriter(
        os.path.join(out, "validation"),
        "validation",
        {**_basis_config(config), "validation": section.to_dict()},
        upstream,
    )
    writer.frame("total_moisture.csv", report.to_frame())

    c0 = basis.coefficients(z0)
    for case, value in sorted(config.fom.cases.items()):
        directory = _snapshot_dir(out, case)
        if not os.path.exists(directory):
            LOGGER.info(f"No snapshots for case {case}; skipping coefficient curves")
            continue
        snaps = _load_case(config, out, case)
        upstream[f"snapshots_{case}"] = manifest_digest(directory)
        ambient = StepAmbient(config.fom.initial_ambient, value)
        trajectory = _rom_on_snapshot_times(rom, c0, ambient, snaps, section.rom_dt)
        writer.frame(
            f"coefficients_{case}.csv", compare_coefficients(basis, trajectory, snaps)
        )
        errors = field_error_maps(basis, snaps, basis.lift(trajectory.coefficients))
        report.extras[f"field_errors_{case}"] = errors.summary()
    writer.upstream = upstream

    u0 = config.gramian.u0
    z_ss = steady_state(fom, u0)
    c_ss = rom_steady_state(rom, u0, basis.coefficients(z_ss))
    impulse = compare_impulse_responses(
        rom,
        fom,
        z_ss,
        c_ss,
        u0,
        section.impulse_magnitude,
        section.impulse_horizon,
        fom.stable_dt(z_ss, u0),
    )
    writer.frame(
        "impulse.csv",
        pd.DataFrame(
            {
                "t": impulse.times,
                "X_fom": impulse.fom_total_moisture,
                "X_rom": impulse.rom_total_moisture,
            }
        ),
    )
    report.extras["impulse"] = {"nrmse": impulse.nrmse, "max_abs": impulse.max_abs}
    writer.json("summary.json", report.summary())
    writer.close()


def cmd_gramian(config: RunConfig, out: str) -> None:
    """Empirical Gramian of the reduced model around the steady state."""
    basis = _load_basis(config, out)
    rom, fom = _rom(config, basis), _fom(config)
    section = config.gramian
    gramian_config = GramianConfig(
        magnitudes=section.magnitudes,
        u0=section.u0,
        dt=section.dt,
        n_steps=section.n_steps,
        settle_tol=section.settle_tol,
        workers=section.workers,
    )
    z_ss = steady_state(fom, section.u0)
    c_ss = rom_steady_state(rom, section.u0, basis.coefficients(z_ss))
    result = empirical_gramian(
        rom, c_ss, gramian_config, basis, progress=config.io.progress
    )
    report = controllability_report(result)
    LOGGER.info(report.verdict)

    writer = ArtifactWriter(
        os.path.join(out, "gramian"),
        "gramian",
        {**_basis_config(config), "gramian": section.to_dict()},
        {"basis": manifest_digest(os.path.join(out, "basis"))},
    )
    writer.frame("gramian.csv", _matrix_frame(result.gramian, "c"))
    writer.frame("eigenvalues.csv", report.to_frame())
    writer.frame("eigenvectors.csv", _matrix_frame(result.eigenvectors, "w"))
    assert result.lifted is not None
    for k in range(result.lifted.shape[1]):
        writer.frame(
            f"eigenvector_{k + 1:02d}.csv",
            eigenvector_fields(config.grid, result.lifted[:, k]),
        )
    writer.frame(
        "diagnostics.csv",
        pd.DataFrame([vars(d) for d in result.diagnostics]),
    )
    summary = report.summary()
    if section.orders:
        sweep = eigenvalue_order_sweep(
            _decomposition(config, out),
            config.grid,
            config.material,
            z_ss,
            section.orders,
            gramian_config,
            config.fom.face_mean,
        )
        writer.frame("eigenvalues_by_order.csv", sweep)
    if section.convergence_factor:
        summary["horizon_change"] = horizon_convergence(
            rom, c_ss, gramian_config, section.convergence_factor
        )
    writer.json("summary.json", summary)
    writer.close()


def _solver_settings(config: RunConfig) -> SolverSettings:
    section = config.ocp
    return SolverSettings(
        n_starts=section.n_starts,
        max_outer=section.max_outer,
        max_inner=section.max_inner,
        mu0=section.mu0,
        mu_growth=section.mu_growth,
        mu_max=section.mu_max,
        constraint_tol=section.constraint_tol,
        gradient_tol=section.gradient_tol,
        fd_step=section.fd_step,
        fd_scheme=section.fd_scheme,
        workers=section.workers,
    )


def cmd_ocp(config: RunConfig, out: str) -> None:
    """Solve the energy-optimal drying problem on the reduced model."""
    basis = _load_basis(config, out)
    rom = _rom(config, basis)
    z0 = _initial_state(config)
    spec = OcpSpec(rom=rom, c0=basis.coefficients(z0), **config.ocp.problem())
    result = solve(spec, _solver_settings(config), progress=config.io.progress)

    writer = ArtifactWriter(
        os.path.join(out, "ocp"),
        "ocp",
        {**_basis_config(config), "ocp": config.ocp.to_dict()},
        {"basis": manifest_digest(os.path.join(out, "basis"))},
    )
    writer.frame("schedule.csv", result.schedule_frame())
    writer.frame("X_rom.csv", result.moisture_frame())
    summary = result.to_dict()
    summary["heating_intervals"] = heating_intervals(
        result.schedule, result.times, spec.u_min, spec.u_max
    )
    summary["bound_fraction"] = bound_fraction(result.schedule, spec.u_min, spec.u_max)
    level, cost = minimal_constant_schedule(spec)
    summary["constant_reference"] = {"level": level, "cost": cost}
    if config.ocp.verify:
        verification = verify_on_fom(
            spec, result.schedule, _fom(config), z0, config.fom.stability
        )
        writer.frame("X_fom.csv", verification.to_frame())
        summary["fom"] = verification.summary()
    writer.json("result.json", summary)
    writer.close()


def cmd_order_study(config: RunConfig, out: str) -> None:
    """Solve the control problem for each order in ``ocp.orders``."""
    table, results = order_study(
        _decomposition(config, out),
        config.grid,
        config.material,
        _initial_state(config),
        config.ocp.orders,
        config.ocp.problem(),
        _solver_settings(config),
        config.fom.face_mean,
    )
    directory = os.path.join(out, "order_study")
    writer = ArtifactWriter(
        directory,
        "order_study",
        {**_snapshot_config(config, config.pod.case), "ocp": config.ocp.to_dict()},
        {
            f"snapshots_{config.pod.case}": manifest_digest(
                _snapshot_dir(out, config.pod.case)
            )
        },
    )
    writer.frame("costs.csv", table.drop(columns=["seconds"]))
    for order, result in sorted(results.items()):
        writer.frame(f"schedule_n{order:02d}.csv", result.schedule_frame())
    writer.close()
    # Wall-clock times vary between runs and stay out of the manifest.
    write_frame(table[["order", "seconds"]], os.path.join(directory, "timings.csv"))


def cmd_calibrate(config: RunConfig, out: str) -> None:
    """Search the mass diffusivity multiplier matching the drying horizon."""
    section = config.calibration
    scale, history = calibrate_mass_scale(
        config.grid,
        config.material,
        config.fom.x0,
        config.fom.T0,
        config.fom.ambient,
        config.fom.horizon,
        section.target_fraction,
        (section.lower, section.upper),
        section.rel_tol,
        config.fom.face_mean,
    )
    writer = ArtifactWriter(
        os.path.join(out, "calibration"),
        "calibration",
        {
            **_snapshot_config(config, config.fom.case),
            "calibration": section.to_dict(),
        },
    )
    writer.frame("history.csv", pd.DataFrame(history))
    writer.json("result.json", {"diffusivity_scale_mass": scale})
    writer.close()
    LOGGER.info(f"Set material.diffusivity_scale_mass: {scale:.6g} in the preset")


COMMANDS: Dict[str, Callable[[RunConfig, str], None]] = {
    "simulate": cmd_simulate,
    "reduce": cmd_reduce,
    "validate": cmd_validate,
    "gramian": cmd_gramian,
    "ocp": cmd_ocp,
    "order-study": cmd_order_study,
    "calibrate": cmd_calibrate,
}


def build_parser() -> argparse.ArgumentParser:
    """Parser with one subcommand per pipeline stage and shared flags."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        type=str,
        default=None,
        help="YAML file merged over the preset",
    )
    common.add_argument(
        "--out",
        type=str,
        default=None,
        help="Artifact root directory (default: io.out_dir)",
    )
    common.add_argument("--seed", type=int, default=None, help="Random seed")
    common.add_argument(
        "--case",
        type=str,
        choices=["A", "B"],
        default=None,
        help="Drying case of the simulation",
    )
    common.add_argument(
        "--preset",
        type=str,
        choices=list(PRESETS),
        default="paper",
        help="Configuration preset",
    )
    common.add_argument(
        "--dry-run",
        action="store_true",
        help="Print the resolved configuration and exit",
    )

    parser = argparse.ArgumentParser(
        prog="kiln",
        description="Wood chip drying: simulation, reduction, Gramians and control",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, command in COMMANDS.items():
        subparsers.add_parser(name, parents=[common], help=command.__doc__)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.case is not None:
        overrides["fom"] = {"case": args.case}
    if args.out is not None:
        overrides["io"] = {"out_dir": args.out}
    return overrides


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and map failures onto exit codes.

    Returns
    -------
    int
        0 on success, 2 for configuration, rank and provenance errors, 3 for
        numerical failures and 4 for an infeasible control problem.

    """
    args = build_parser().parse_args(argv)
    handler: Optional[logging.Handler] = None
    try:
        config = load_config(args.preset, args.config, _overrides(args))
        if args.dry_run:
            sys.stdout.write(canonical_json(config.to_dict()))
            return EXIT_OK
        seed_everything(config.seed)
        out = config.io.out_dir
        os.makedirs(out, exist_ok=True)
        handler = attach_file_handler(os.path.join(out, "kiln.log"))
        LOGGER.info(f"Running {args.command} with preset {config.preset} into {out}")
        COMMANDS[args.command](config, out)
    except (ConfigError, RankError, ProvenanceError) as err:
        LOGGER.error(f"{type(err).__name__}: {err}")
        return EXIT_CONFIG
    except (NumericalError, MaterialDomainError) as err:
        LOGGER.error(f"{type(err).__name__}: {err}")
        return EXIT_NUMERICAL
    except InfeasibleProblemError as err:
        LOGGER.error(
            f"Infeasible: {err} (best X(t_f) = {err.best_terminal_moisture})"
        )
        return EXIT_INFEASIBLE
    finally:
        if handler is not None:
            logging.getLogger("kiln").removeHandler(handler)
            handler.close()
    return EXIT_OK
