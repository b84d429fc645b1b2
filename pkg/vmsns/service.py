"""
Service entrypoints wiring a RunConfig to meshes, solvers and outputs.

Provides factory functions for the pieces of a run and the drivers behind
the command-line commands (single runs, Taylor-Green convergence studies and
reference projections).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

from .assembly import (
    DiscreteField,
    FieldDifference,
    OperatorSet,
    assemble_operators,
    discrete_vorticity,
    plotting_points,
    quadrature_points,
)
from .cases import (
    AnalyticCase,
    AnalyticReference,
    ReferenceProjection,
    RollupCase,
    Snapshot,
    TGVCase,
    project_reference,
    read_snapshot,
    write_snapshot,
)
from .config import RunConfig, config_hash
from .diagnostics import (
    DiagnosticsRecord,
    DiagnosticsRecorder,
    ErrorNorms,
    error_norms,
    local_orders,
    observed_orders,
)
from .exceptions import ConfigurationError, VmsnsError
from .mesh import Mesh, build_mesh
from .output import (
    SWEEP_HEADER,
    field_filename,
    mark_partial,
    write_csv,
    write_diagnostics,
    write_field_dump,
    write_metadata,
)
from .stokes import ProjectionResult, ProjectorParams, apply_projector
from .timestepper import (
    CrankNicolsonStepper,
    FlowState,
    Observer,
    StepControls,
    Trajectory,
    run,
)
from .vms import ScalePair, SplitState, VmsStepper, build_scale_pair, extract_unresolved

logger = logging.getLogger(__name__)

State = Union[FlowState, SplitState]


def create_case(config: RunConfig) -> AnalyticCase:
    """Benchmark case named by the config."""
    if config.case == "tgv":
        return TGVCase(reynolds=config.Re)
    return RollupCase()


def create_mesh(config: RunConfig, N: Optional[int] = None, p: Optional[int] = None) -> Mesh:
    return build_mesh(config.mesh_spec(N, p))


def create_controls(config: RunConfig) -> StepControls:
    return StepControls(
        dt=config.dt,
        reynolds=config.Re,
        picard_tol=config.picard_tol,
        picard_max=config.picard_max,
    )


def create_projector_params(config: RunConfig) -> ProjectorParams:
    """Explicit projector weights if configured, else the step weights (1/(2 Re), 1/dt)."""
    if config.projector_a_curl is not None or config.projector_a_mass is not None:
        return ProjectorParams(config.projector_a_curl or 0.0, config.projector_a_mass or 0.0)
    return ProjectorParams.navier_stokes(config.Re, config.dt)


def initial_state(
    case: AnalyticCase, mesh: Mesh, ops: OperatorSet, config: RunConfig, t: float = 0.0
) -> FlowState:
    """
    Discrete initial condition.

    The velocity is the optimal projection of the analytic field (weights of
    the step for initial_projection = ns, pure L2 for l2); the vorticity is
    recomputed as the discrete curl of that velocity with the solver operators.
    """
    if config.initial_projection == "l2":
        params = ProjectorParams(0.0, 1.0)
    else:
        params = ProjectorParams.navier_stokes(config.Re, config.dt)
    points = quadrature_points(mesh.spec, config.error_quadrature)
    projection = apply_projector(params, mesh, AnalyticReference(case, t), points)
    omega = discrete_vorticity(ops, projection.u)
    return FlowState(omega, projection.u, projection.P, t)


def initial_split_state(
    case: AnalyticCase, pair: ScalePair, stepper: VmsStepper, config: RunConfig
) -> SplitState:
    """Fine-space initial condition split into resolved and unresolved parts."""
    fine = initial_state(case, pair.fine, pair.fine_ops, config)
    return stepper.split(fine)


@dataclass
class Simulation:
    """Everything needed to advance one configuration."""

    config: RunConfig
    case: AnalyticCase
    controls: StepControls
    mesh: Mesh
    ops: OperatorSet
    stepper: Union[CrankNicolsonStepper, VmsStepper]
    initial: State
    pair: Optional[ScalePair] = None

    @property
    def is_vms(self) -> bool:
        return self.pair is not None

    def resolved_field(self, state: State) -> DiscreteField:
        """Coarse (resolved) field of a state, static pressure from the step midpoint."""
        flow = state.coarse if isinstance(state, SplitState) else state
        return DiscreteField(self.mesh, flow.omega, flow.u, flow.P, flow.u_mid)

    def unresolved_field(self, state: State) -> Optional[DiscreteField]:
        if self.pair is None or not isinstance(state, SplitState):
            return None
        return extract_unresolved(state, self.pair).field

    def snapshot(self, state: State) -> Snapshot:
        """Galerkin states as they are; split states as total fine-space fields."""
        if self.pair is not None and isinstance(state, SplitState):
            return Snapshot(self.pair.fine.spec, state.total(self.pair), config_hash(self.config))
        assert isinstance(state, FlowState)
        return Snapshot(self.mesh.spec, state, config_hash(self.config))


def create_simulation(
    config: RunConfig, N: Optional[int] = None, k: Optional[int] = None, mode: Optional[str] = None
) -> Simulation:
    """
    Build mesh, operators, stepper and initial state for a Galerkin or VMS run.

    Raises:
        ConfigurationError: If the mode cannot be time-stepped
    """
    mode = mode or config.mode
    if mode not in ("galerkin", "vms"):
        raise ConfigurationError(f"Mode {mode!r} does not time-step", key="mode")
    case = create_case(config)
    controls = create_controls(config)
    spec = config.mesh_spec(N)
    if mode == "vms":
        pair = build_scale_pair(spec, config.k if k is None else k, config.quadrature_degree)
        stepper = VmsStepper(pair, controls)
        initial: State = initial_split_state(case, pair, stepper, config)
        return Simulation(
            config, case, controls, pair.coarse, pair.coarse_ops, stepper, initial, pair
        )
    mesh = build_mesh(spec)
    ops = assemble_operators(mesh, config.quadrature_degree)
    galerkin = CrankNicolsonStepper(mesh, ops, controls)
    return Simulation(
        config, case, controls, mesh, ops, galerkin, initial_state(case, mesh, ops, config)
    )


def _matches(t: float, targets: Sequence[float]) -> bool:
    return any(abs(t - target) <= 1e-9 * max(1.0, abs(target)) for target in targets)


@dataclass
class StateWriter:
    """Run observer writing field dumps and snapshots at requested times."""

    simulation: Simulation
    output_dir: Path
    written: list[Path] = field(default_factory=list)

    def write(self, state: State) -> None:
        config = self.simulation.config
        if _matches(state.t, config.dump_times):
            points = plotting_points(self.simulation.mesh.spec, config.dump_density)
            resolved = self.simulation.resolved_field(state)
            path = self.output_dir / field_filename("fields", state.t)
            self.written.append(write_field_dump(path, resolved, points))
            unresolved = self.simulation.unresolved_field(state)
            if unresolved is not None:
                path = self.output_dir / field_filename("fields_fine", state.t)
                self.written.append(write_field_dump(path, unresolved, points))
        if _matches(state.t, config.snapshot_times):
            path = self.output_dir / f"snapshot_t{state.t:g}.vmsnap"
            self.written.append(write_snapshot(path, self.simulation.snapshot(state)))

    def __call__(self, step: int, previous: State, current: State, iterations: int) -> None:
        self.write(current)


@dataclass
class SimulationResult:
    trajectory: Trajectory
    records: list[DiagnosticsRecord]


def run_simulation(
    simulation: Simulation, output_dir: Optional[Union[str, Path]] = None, audit: bool = True
) -> SimulationResult:
    """
    Advance a simulation to t_final, recording diagnostics every step.

    With an output directory, writes diag.csv, conservation.csv,
    metadata.json and the requested field dumps and snapshots.
    """
    config = simulation.config
    space: Union[Mesh, ScalePair] = simulation.pair or simulation.mesh
    ops = None if simulation.pair is not None else simulation.ops
    recorder = DiagnosticsRecorder(space, simulation.controls, ops, audit=audit)
    recorder.start(simulation.initial)
    observers: list[Observer] = [recorder]
    writer = None
    if output_dir is not None:
        writer = StateWriter(simulation, Path(output_dir))
        writer.write(simulation.initial)
        observers.append(writer)

    try:
        trajectory = run(
            simulation.initial,
            simulation.controls,
            simulation.mesh,
            simulation.ops,
            config.t_final,
            observers=observers,
            stepper=simulation.stepper,
        )
    except VmsnsError as err:
        if output_dir is not None:
            write_diagnostics(output_dir, recorder.records)
            mark_partial(output_dir, str(err).splitlines()[0])
        raise
    if output_dir is not None:
        write_diagnostics(output_dir, recorder.records)
        write_metadata(
            output_dir,
            config,
            {"initial_condition": f"projection ({config.initial_projection}) + discrete curl"},
        )
    return SimulationResult(trajectory, recorder.records)


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    p: int
    k: int
    mode: str
    errors: ErrorNorms
    order_local: Optional[float] = None

    def row(self) -> tuple[object, ...]:
        return (self.N, self.p, self.k, self.mode, *self.errors, self.order_local)


@dataclass
class ConvergenceReport:
    """Error table of a sweep with least-squares observed orders per series."""

    study: str
    rows: list[ConvergenceRow] = field(default_factory=list)

    def series(self) -> dict[tuple[str, int], list[ConvergenceRow]]:
        grouped: dict[tuple[str, int], list[ConvergenceRow]] = {}
        for row in self.rows:
            grouped.setdefault((row.mode, row.k), []).append(row)
        return grouped

    def with_local_orders(self) -> ConvergenceReport:
        """Copy with order_local filled in from the vorticity errors of each series."""
        filled: list[ConvergenceRow] = []
        for rows in self.series().values():
            errors = [r.errors.omega for r in rows]
            if self.study == "h":
                h = [2.0 / r.N for r in rows]
                orders = local_orders(h, errors)
            else:
                orders = [None] + [
                    math.log(errors[i - 1] / errors[i]) / (rows[i].k - rows[i - 1].k)
                    if errors[i] > 0.0 and errors[i - 1] > 0.0 and rows[i].k != rows[i - 1].k
                    else None
                    for i in range(1, len(rows))
                ]
            filled.extend(
                ConvergenceRow(r.N, r.p, r.k, r.mode, r.errors, o) for r, o in zip(rows, orders)
            )
        return ConvergenceReport(self.study, filled)

    def observed_orders(self) -> dict[tuple[str, int], Optional[tuple[float, float, float]]]:
        """Least-squares orders (omega, u, p) per (mode, k) series; None below 3 points."""
        result: dict[tuple[str, int], Optional[tuple[float, float, float]]] = {}
        for key, rows in self.series().items():
            h = [2.0 / r.N for r in rows]
            orders = [
                observed_orders(h, [getattr(r.errors, name) for r in rows])
                for name in ErrorNorms._fields
            ]
            result[key] = None if orders[0] is None else tuple(orders)  # type: ignore[assignment]
        return result

    def write(self, path: Union[str, Path]) -> Path:
        return write_csv(path, SWEEP_HEADER, (r.row() for r in self.with_local_orders().rows))


def _pressure_time(config: RunConfig, t: float) -> float:
    return t - 0.5 * config.dt if t > 0.0 else t


def exact_projection(
    config: RunConfig, case: AnalyticCase, mesh: Mesh, t: float
) -> ProjectionResult:
    """Optimal projection of the analytic solution at t (pressure at the step midpoint)."""
    points = quadrature_points(mesh.spec, config.error_quadrature)
    reference = AnalyticReference(case, t, _pressure_time(config, t))
    return apply_projector(create_projector_params(config), mesh, reference, points)


@dataclass(frozen=True)
class TGVErrors:
    """Errors of one Taylor-Green run at t_final."""

    exact: ErrorNorms
    projection: Optional[ErrorNorms] = None
    unresolved: Optional[ErrorNorms] = None


def evaluate_tgv(
    simulation: Simulation, state: State, projection: Optional[ProjectionResult] = None
) -> TGVErrors:
    """
    Errors against the exact solution (static pressure) and, when a projection
    is given, against the projection and the exact unresolved scales
    (Bernoulli pressure at the step midpoint).
    """
    config = simulation.config
    mesh = simulation.mesh
    points = quadrature_points(mesh.spec, config.error_quadrature)
    exact = AnalyticReference(simulation.case, state.t, _pressure_time(config, state.t))
    resolved = simulation.resolved_field(state)
    vs_exact = error_norms(resolved, exact, mesh, points, pressure="static")
    if projection is None:
        return TGVErrors(vs_exact)

    target = DiscreteField(mesh, projection.omega, projection.u, projection.P)
    vs_projection = error_norms(resolved, target, mesh, points, pressure="total")
    unresolved_errors = None
    unresolved = simulation.unresolved_field(state)
    if unresolved is not None:
        exact_unresolved = FieldDifference(exact, target)
        unresolved_errors = error_norms(
            unresolved, exact_unresolved, mesh, points, pressure="total"
        )
    return TGVErrors(vs_exact, vs_projection, unresolved_errors)


def _projection_errors(config: RunConfig, case: AnalyticCase, mesh: Mesh) -> ErrorNorms:
    projection = exact_projection(config, case, mesh, config.t_final)
    points = quadrature_points(mesh.spec, config.error_quadrature)
    exact = AnalyticReference(case, config.t_final, _pressure_time(config, config.t_final))
    field_ = DiscreteField(mesh, projection.omega, projection.u, projection.P)
    return error_norms(field_, exact, mesh, points, pressure="static")


def run_tgv_study(
    config: RunConfig, output_dir: Optional[Union[str, Path]] = None
) -> dict[str, ConvergenceReport]:
    """
    Taylor-Green h-study (N_list x modes) or k-study (k_list at fixed N).

    Returns reports keyed by CSV stem: tgv_h, or tgv_k / tgv_k_proj /
    tgv_k_prime. On failure the rows gathered so far are written and the
    directory is flagged partial before the error propagates.

    Raises:
        ConfigurationError: If the case is not the Taylor-Green vortex
    """
    if config.case != "tgv":
        raise ConfigurationError("Convergence studies need case = tgv", key="case")
    reports: dict[str, ConvergenceReport]
    if config.study == "h":
        reports = {"tgv_h": ConvergenceReport("h")}
    else:
        reports = {stem: ConvergenceReport("k") for stem in ("tgv_k", "tgv_k_proj", "tgv_k_prime")}

    try:
        if config.study == "h":
            _h_study(config, reports["tgv_h"])
        else:
            _k_study(config, reports)
    except VmsnsError as err:
        if output_dir is not None:
            _write_reports(reports, output_dir)
            mark_partial(output_dir, str(err).splitlines()[0])
        raise
    if output_dir is not None:
        _write_reports(reports, output_dir)
        write_metadata(output_dir, config)
    for stem, report in reports.items():
        for key, orders in report.observed_orders().items():
            if orders is not None:
                logger.info("%s %s k=%d: observed orders %s", stem, key[0], key[1], orders)
    return reports


def _write_reports(reports: dict[str, ConvergenceReport], output_dir: Union[str, Path]) -> None:
    for stem, report in reports.items():
        report.write(Path(output_dir) / f"{stem}.csv")


def _h_study(config: RunConfig, report: ConvergenceReport) -> None:
    case = create_case(config)
    for n in config.N_list:
        for mode in config.modes:
            if mode == "projection":
                mesh = create_mesh(config, N=n)
                errors = _projection_errors(config, case, mesh)
                report.rows.append(ConvergenceRow(n, config.p, 0, mode, errors))
                continue
            ks = config.k_list if mode == "vms" else (0,)
            for k in ks:
                simulation = create_simulation(config, N=n, k=k, mode=mode)
                final = run_simulation(simulation, audit=False).trajectory.final
                errors = evaluate_tgv(simulation, final).exact
                report.rows.append(ConvergenceRow(n, config.p, k, mode, errors))
                logger.info("h-study N=%d %s k=%d: %s", n, mode, k, errors)


def _k_study(config: RunConfig, reports: dict[str, ConvergenceReport]) -> None:
    mesh = create_mesh(config)
    projection = exact_projection(config, create_case(config), mesh, config.t_final)
    for k in config.k_list:
        simulation = create_simulation(config, k=k, mode="vms")
        final = run_simulation(simulation, audit=False).trajectory.final
        errors = evaluate_tgv(simulation, final, projection)
        reports["tgv_k"].rows.append(ConvergenceRow(config.N, config.p, k, "vms", errors.exact))
        if errors.projection is not None:
            reports["tgv_k_proj"].rows.append(
                ConvergenceRow(config.N, config.p, k, "vms", errors.projection)
            )
        if errors.unresolved is not None:
            reports["tgv_k_prime"].rows.append(
                ConvergenceRow(config.N, config.p, k, "vms", errors.unresolved)
            )
        logger.info("k-study k=%d: vs projection %s", k, errors.projection)


def run_projection(
    config: RunConfig, output_dir: Optional[Union[str, Path]] = None
) -> ReferenceProjection:
    """
    Project a reference snapshot (config.reference) onto the configured mesh.

    Writes fields_t<t>.csv (projection) and unresolved_t<t>.csv.

    Raises:
        ConfigurationError: If no reference snapshot is configured
        NestingError: If the meshes are not nested
        SnapshotError: If the snapshot cannot be read
    """
    if config.reference is None:
        raise ConfigurationError(
            "The project command needs reference = <snapshot>", key="reference"
        )
    snapshot = read_snapshot(config.reference)
    projected = project_reference(snapshot, config.mesh_spec(), create_projector_params(config))
    if output_dir is not None:
        out = Path(output_dir)
        points = plotting_points(projected.reference_mesh.spec, config.dump_density)
        write_field_dump(
            out / field_filename("fields", snapshot.t), projected.projection_field(), points
        )
        write_field_dump(
            out / field_filename("unresolved", snapshot.t), projected.unresolved_field(), points
        )
        write_metadata(
            out,
            config,
            {"reference": str(config.reference), "reference_hash": snapshot.config_hash},
        )
    return projected


def run_project_only(
    config: RunConfig, output_dir: Optional[Union[str, Path]] = None
) -> FlowState:
    """Projection of the case's analytic field at t_final (roll-up: the initial condition)."""
    case = create_case(config)
    mesh = create_mesh(config)
    t = config.t_final if config.case == "tgv" else 0.0
    projection = exact_projection(config, case, mesh, t)
    state = FlowState(projection.omega, projection.u, projection.P, t)
    if output_dir is not None:
        points = plotting_points(mesh.spec, config.dump_density)
        field_ = DiscreteField(mesh, state.omega, state.u, state.P)
        write_field_dump(Path(output_dir) / field_filename("fields", t), field_, points)
        write_metadata(output_dir, config)
    return state
