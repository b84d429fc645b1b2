"""
vmsns - structure-preserving 2D incompressible Navier-Stokes.

Mimetic spectral element discretization of the (omega, u, P) system on a
periodic de Rham complex, with a Crank-Nicolson Galerkin stepper, optimal
projections and a variational multiscale stepper that tracks them.
"""

from .assembly import DiscreteField, OperatorSet, assemble_operators, quadrature_points
from .basis import edge_basis, eval_edge, eval_nodal, gll_rule, nodal_basis
from .cases import (
    AnalyticReference,
    ReferenceRun,
    RollupCase,
    Snapshot,
    TGVCase,
    project_reference,
    read_snapshot,
    rollup_ic,
    tgv_exact,
    write_snapshot,
)
from .config import RunConfig, config_hash, parse_config
from .diagnostics import (
    DiagnosticsRecord,
    DiagnosticsRecorder,
    conserved_quantities,
    energy_balance_audit,
    error_norms,
)
from .exceptions import (
    ConfigurationError,
    DegenerateMeshError,
    DimensionMismatchError,
    InconsistentLoadError,
    InvalidDegreeError,
    InvalidParamsError,
    InvalidQuadratureError,
    LinearSolveError,
    NestingError,
    NonConvergenceError,
    OutOfRangeError,
    OutputError,
    SnapshotError,
    SnapshotFormatError,
    SolverError,
    VmsnsError,
)
from .mesh import Mesh, MeshSpec, build_mesh, incidence
from .service import create_simulation, run_simulation, run_tgv_study
from .stokes import (
    ProjectorParams,
    apply_projector,
    check_norm_optimality,
    inf_sup_estimate,
    solve_stokes,
)
from .timestepper import FlowState, StepControls, run, step_galerkin
from .vms import (
    ScalePair,
    SplitState,
    VmsStepper,
    build_scale_pair,
    extract_unresolved,
    fine_scale_solve,
    step_vms,
)

__all__ = [
    "DiscreteField",
    "OperatorSet",
    "assemble_operators",
    "quadrature_points",
    "edge_basis",
    "eval_edge",
    "eval_nodal",
    "gll_rule",
    "nodal_basis",
    "AnalyticReference",
    "ReferenceRun",
    "RollupCase",
    "Snapshot",
    "TGVCase",
    "project_reference",
    "read_snapshot",
    "rollup_ic",
    "tgv_exact",
    "write_snapshot",
    "RunConfig",
    "config_hash",
    "parse_config",
    "DiagnosticsRecord",
    "DiagnosticsRecorder",
    "conserved_quantities",
    "energy_balance_audit",
    "error_norms",
    "ConfigurationError",
    "DegenerateMeshError",
    "DimensionMismatchError",
    "InconsistentLoadError",
    "InvalidDegreeError",
    "InvalidParamsError",
    "InvalidQuadratureError",
    "LinearSolveError",
    "NestingError",
    "NonConvergenceError",
    "OutOfRangeError",
    "OutputError",
    "SnapshotError",
    "SnapshotFormatError",
    "SolverError",
    "VmsnsError",
    "Mesh",
    "MeshSpec",
    "build_mesh",
    "incidence",
    "create_simulation",
    "run_simulation",
    "run_tgv_study",
    "ProjectorParams",
    "apply_projector",
    "check_norm_optimality",
    "inf_sup_estimate",
    "solve_stokes",
    "FlowState",
    "StepControls",
    "run",
    "step_galerkin",
    "ScalePair",
    "SplitState",
    "VmsStepper",
    "build_scale_pair",
    "extract_unresolved",
    "fine_scale_solve",
    "step_vms",
]

__version__ = "0.1.0"
