"""
Mixed (omega, u, P) saddle systems: the steady Stokes solve, the optimal
projector, the discrete inf-sup estimator and the norm-optimality check.

The block system for weights (a, m) = (a_curl, a_mass) is

    [ s M0        -s Wcurl    0     ] [omega]   [r_eps]
    [ -a Wcurl^T  -m M1       Wdiv  ] [u    ] = [r_v  ]
    [ 0           Wdiv^T      0     ] [P    ]   [r_eta]

with s = a when a > 0 and s = 1 otherwise, bordered by a zero-mean pressure
multiplier and, when m = 0, by two multipliers fixing the harmonic velocity
content of the periodic domain.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import numpy.typing as npt
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import (
    Array,
    FieldSource,
    OperatorSet,
    PointSet,
    assemble_on_points,
    quadrature_points,
    sample_spaces,
)
from .exceptions import InconsistentLoadError, LinearSolveError
from .mesh import Mesh
from .validation import ERROR_QUADRATURE_DEGREE, SOLVER_RTOL, check_projector_params

logger = logging.getLogger(__name__)

VectorFunction = Callable[[Array, Array], Array]

# Relative residual above which a refined solve is rejected
REJECT_RTOL = 1e-8
REFINEMENT_STEPS = 3
# Harmonic multipliers below this (relative to the load) count as zero
HARMONIC_TOL = 1e-10


@dataclass(frozen=True)
class ProjectorParams:
    """Weights (a_curl, a_mass) of the optimal projector."""

    a_curl: float
    a_mass: float

    def __post_init__(self) -> None:
        check_projector_params(self.a_curl, self.a_mass)

    @classmethod
    def stokes(cls) -> ProjectorParams:
        return cls(1.0, 0.0)

    @classmethod
    def navier_stokes(cls, reynolds: float, dt: float) -> ProjectorParams:
        """Weights (1/(2 Re), 1/dt); the curl weight vanishes for Re = inf."""
        a_curl = 0.0 if math.isinf(reynolds) else 1.0 / (2.0 * reynolds)
        return cls(a_curl, 1.0 / dt)

    @property
    def curl_row_scale(self) -> float:
        return self.a_curl if self.a_curl > 0.0 else 1.0


@dataclass(frozen=True)
class BlockLayout:
    """Offsets of the unknown blocks in a saddle vector."""

    dim0: int
    dim1: int
    dim2: int
    n_harmonic: int = 0

    @property
    def size(self) -> int:
        return self.dim0 + self.dim1 + self.dim2 + 1 + self.n_harmonic

    @property
    def omega(self) -> slice:
        return slice(0, self.dim0)

    @property
    def u(self) -> slice:
        return slice(self.dim0, self.dim0 + self.dim1)

    @property
    def P(self) -> slice:
        start = self.dim0 + self.dim1
        return slice(start, start + self.dim2)

    @property
    def mean(self) -> int:
        return self.dim0 + self.dim1 + self.dim2

    @property
    def harmonic(self) -> slice:
        return slice(self.mean + 1, self.size)

    def pack(
        self,
        omega: Optional[Array] = None,
        u: Optional[Array] = None,
        P: Optional[Array] = None,
        harmonic: Optional[Array] = None,
    ) -> Array:
        vector = np.zeros(self.size)
        if omega is not None:
            vector[self.omega] = omega
        if u is not None:
            vector[self.u] = u
        if P is not None:
            vector[self.P] = P
        if harmonic is not None:
            vector[self.harmonic] = harmonic
        return vector

    def unpack(self, vector: Array) -> tuple[Array, Array, Array]:
        return vector[self.omega].copy(), vector[self.u].copy(), vector[self.P].copy()


@dataclass(frozen=True)
class SaddleSystem:
    """Assembled block matrix with its layout and (optional) right-hand side."""

    matrix: sp.csc_matrix
    layout: BlockLayout
    params: ProjectorParams
    harmonic: Optional[Array] = field(default=None, repr=False)
    rhs: Optional[Array] = field(default=None, repr=False)


def harmonic_velocities(ops: OperatorSet) -> Array:
    """
    Basis of the discrete harmonic velocities on the periodic domain.

    Starting from the uniform x- and y-edge fluxes g, h = g - E_curl psi with
    psi the M1-orthogonal curl component, so h is divergence free and
    orthogonal to every discrete curl.

    Returns:
        Array of shape (2, dim1)
    """
    mesh = ops.mesh
    # each element stores p^2 x-flux DOFs followed by p^2 y-flux DOFs
    x_flux = (np.arange(mesh.dim1) // mesh.p**2) % 2 == 0
    seeds = np.stack([x_flux, ~x_flux]).astype(np.float64)

    stiffness = (ops.E_curl.T @ ops.M1 @ ops.E_curl).tocsc()
    ones = np.ones((mesh.dim0, 1))
    bordered = sp.bmat([[stiffness, sp.csc_matrix(ones)], [sp.csc_matrix(ones.T), None]]).tocsc()
    solver = SaddleSolver(bordered)
    basis = np.empty_like(seeds)
    for i, seed in enumerate(seeds):
        rhs = np.concatenate([ops.Wcurl @ seed, [0.0]])
        psi = solver.solve(rhs)[: mesh.dim0]
        basis[i] = seed - ops.E_curl @ psi
    return basis


def build_saddle_matrix(
    ops: OperatorSet, params: ProjectorParams, harmonic: Optional[Array] = None
) -> SaddleSystem:
    """
    Assemble the bordered block matrix for the given projector weights.

    Args:
        ops: Operator set providing M0, M1, Wcurl, Wdiv
        params: Projector weights
        harmonic: Harmonic velocity basis; computed when a_mass = 0 and not given

    Returns:
        SaddleSystem without right-hand side
    """
    mesh = ops.mesh
    a, m, s = params.a_curl, params.a_mass, params.curl_row_scale
    if params.a_mass == 0.0 and harmonic is None:
        harmonic = harmonic_velocities(ops)
    n_h = 0 if params.a_mass > 0.0 else 2

    coupling = -a * ops.Wcurl.T if a > 0.0 else sp.csc_matrix((mesh.dim1, mesh.dim0))
    mean_col = sp.csc_matrix(np.ones((mesh.dim2, 1)))
    blocks: list[list[Optional[sp.spmatrix]]] = [
        [s * ops.M0, -s * ops.Wcurl, None, None],
        [coupling, -m * ops.M1, ops.Wdiv, None],
        [None, ops.Wdiv.T, None, mean_col],
        [None, None, mean_col.T, None],
    ]
    if n_h:
        assert harmonic is not None
        constraint = sp.csc_matrix(ops.M1 @ harmonic.T)
        for row in blocks:
            row.append(None)
        blocks[1][4] = constraint
        blocks.append([None, constraint.T, None, None, None])
    matrix = sp.bmat(blocks, format="csc")
    layout = BlockLayout(mesh.dim0, mesh.dim1, mesh.dim2, n_harmonic=n_h)
    return SaddleSystem(
        matrix=matrix, layout=layout, params=params, harmonic=harmonic if n_h else None
    )


class SaddleSolver:
    """
    Sparse LU factorization of a saddle matrix with iterative refinement.

    Solves are accepted at relative residual SOLVER_RTOL, accepted with a
    warning up to REJECT_RTOL and rejected above it.
    """

    def __init__(self, matrix: sp.spmatrix):
        """
        Factorize a square sparse matrix.

        Raises:
            LinearSolveError: If the factorization breaks down
        """
        self.matrix = sp.csc_matrix(matrix)
        try:
            self._lu = splu(self.matrix)
        except RuntimeError as err:
            raise LinearSolveError(f"Saddle factorization failed: {err}") from err

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def _relative_residual(self, rhs: Array, solution: Array, rhs_norm: float) -> float:
        return float(np.linalg.norm(rhs - self.matrix @ solution)) / rhs_norm

    def solve(self, rhs: Array) -> Array:
        """
        Solve with up to REFINEMENT_STEPS refinement sweeps.

        Raises:
            LinearSolveError: If the relative residual stays above REJECT_RTOL
        """
        solution = self._lu.solve(rhs)
        rhs_norm = float(np.linalg.norm(rhs))
        if rhs_norm == 0.0:
            return solution
        relative = self._relative_residual(rhs, solution, rhs_norm)
        for _ in range(REFINEMENT_STEPS):
            if relative < SOLVER_RTOL:
                break
            solution = solution + self._lu.solve(rhs - self.matrix @ solution)
            relative = self._relative_residual(rhs, solution, rhs_norm)

        logger.debug("Saddle solve relative residual %.3e", relative)
        if not math.isfinite(relative) or relative > REJECT_RTOL:
            raise LinearSolveError("Saddle solve missed its residual target", residual=relative)
        if relative >= SOLVER_RTOL:
            logger.warning("Saddle solve accepted at relative residual %.3e", relative)
        return solution


@dataclass(frozen=True)
class StokesSolution:
    omega: Array
    u: Array
    P: Array
    residual: float


def solve_stokes(
    mesh: Mesh,
    ops: OperatorSet,
    load: VectorFunction | Array,
    points: Optional[PointSet] = None,
) -> StokesSolution:
    """
    Steady periodic Stokes solve: curl omega + grad p = f, div u = 0.

    Args:
        mesh: Mesh of the operator set
        ops: Solver operators
        load: Body force f(x, y) returning (..., 2) values, or a ready vector of
            the integrals of f against the velocity basis
        points: Points for the load integrals (GLL of degree 25 by default)

    Returns:
        StokesSolution with zero-mean pressure

    Raises:
        InconsistentLoadError: If the load has harmonic content
        LinearSolveError: If the solve fails
    """
    system = build_saddle_matrix(ops, ProjectorParams.stokes())
    layout = system.layout
    if callable(load):
        if points is None:
            points = quadrature_points(mesh.spec, ERROR_QUADRATURE_DEGREE)
        sample = sample_spaces(mesh, points, forms=(1,))
        load_vector = sample.load1(np.asarray(load(sample.x, sample.y)))
    else:
        load_vector = np.asarray(load, dtype=np.float64)

    rhs = layout.pack(u=-load_vector)
    solution = SaddleSolver(system.matrix).solve(rhs)
    multipliers = solution[layout.harmonic]
    assert system.harmonic is not None
    absorbed = float(np.linalg.norm(ops.M1 @ (system.harmonic.T @ multipliers)))
    if absorbed > HARMONIC_TOL * max(1.0, float(np.linalg.norm(load_vector))):
        raise InconsistentLoadError(multipliers.tolist())

    rhs_norm = float(np.linalg.norm(rhs))
    residual = float(np.linalg.norm(rhs - system.matrix @ solution))
    omega, u, P = layout.unpack(solution)
    logger.info("Stokes solve on N=%d p=%d done", mesh.N, mesh.p)
    return StokesSolution(omega, u, P, residual / rhs_norm if rhs_norm else residual)


@dataclass(frozen=True)
class ProjectionResult:
    """
    Projected triple.

    P is the L2 projection of the reference pressure (zero without one);
    solution keeps the raw saddle vector, multipliers included.
    """

    omega: Array
    u: Array
    P: Array
    solution: Array = field(repr=False)


class OptimalProjector:
    """
    Optimal projector of a mesh for fixed weights and a fixed point set.

    Matrix and right-hand side use the same points, so fields already in the
    discrete spaces are reproduced to round-off.
    """

    def __init__(self, mesh: Mesh, params: ProjectorParams, points: Optional[PointSet] = None):
        """
        Assemble and factorize the projector.

        Args:
            mesh: Target (coarse) mesh
            params: Projector weights
            points: Points for all inner products; GLL(25) on the mesh by default
        """
        self.mesh = mesh
        self.params = params
        self.points = points or quadrature_points(mesh.spec, ERROR_QUADRATURE_DEGREE)
        self.ops = assemble_on_points(mesh, self.points)
        self.system = build_saddle_matrix(self.ops, params)
        self.solver = SaddleSolver(self.system.matrix)
        self._mass2 = splu(sp.csc_matrix(self.ops.M2))

    def rhs(self, reference: FieldSource) -> tuple[Array, Optional[Array]]:
        """Right-hand side of the projection and the load of the reference pressure."""
        sample = self.ops.sample
        values = reference.sample(self.points)
        a, m, s = self.params.a_curl, self.params.a_mass, self.params.curl_row_scale
        u_load = sample.load1(values.u)
        r_eps = s * (sample.load0(values.omega) - self.mesh.E_curl.T @ u_load)
        r_v = -m * u_load
        if a > 0.0:
            r_v = r_v - a * sample.load1(values.curl_omega)
        r_eta = sample.load2(values.div_u)
        harmonic = None
        if self.system.harmonic is not None:
            harmonic = self.system.harmonic @ u_load
        rhs = self.system.layout.pack(omega=r_eps, u=r_v, P=r_eta, harmonic=harmonic)
        pressure = None if values.pressure is None else sample.load2(values.pressure)
        return rhs, pressure

    def project(self, reference: FieldSource) -> ProjectionResult:
        rhs, pressure_load = self.rhs(reference)
        solution = self.solver.solve(rhs)
        omega, u, _ = self.system.layout.unpack(solution)
        if pressure_load is None:
            P = np.zeros(self.mesh.dim2)
        else:
            P = self._mass2.solve(pressure_load)
        return ProjectionResult(omega=omega, u=u, P=P, solution=solution)

    def residuals(
        self, reference: FieldSource, result: ProjectionResult
    ) -> tuple[float, float, float]:
        """Largest residual of the vorticity, momentum and divergence equations."""
        rhs, _ = self.rhs(reference)
        layout = self.system.layout
        residual = self.system.matrix @ result.solution - rhs
        return (
            float(np.max(np.abs(residual[layout.omega]))),
            float(np.max(np.abs(residual[layout.u]))),
            float(np.max(np.abs(residual[layout.P]))),
        )


def apply_projector(
    params: ProjectorParams,
    mesh: Mesh,
    reference: FieldSource,
    points: Optional[PointSet] = None,
) -> ProjectionResult:
    """
    Project a reference field onto the discrete spaces of a mesh.

    Args:
        params: Projector weights
        mesh: Target mesh
        reference: Analytic or discrete field source
        points: Points for the inner products (GLL(25) on the mesh by default;
            pass the reference mesh's composite points for discrete references)

    Returns:
        ProjectionResult; the saddle pressure is discarded in favour of the
        L2 projection of the reference pressure
    """
    return OptimalProjector(mesh, params, points).project(reference)


@dataclass(frozen=True)
class InfSupEstimate:
    beta_omega: float
    beta_u: float
    vorticity_nullity: int
    pressure_nullity: int


def _nonzero_floor(eigenvalues: Array, tol: float) -> tuple[float, int]:
    scale = max(float(np.max(np.abs(eigenvalues))), 1.0)
    null = eigenvalues <= tol * scale
    nullity = int(np.count_nonzero(null))
    remaining = eigenvalues[~null]
    return (float(np.min(remaining)) if remaining.size else 0.0), nullity


def inf_sup_estimate(
    mesh: Mesh, ops: OperatorSet, include_constant_mode: bool = False, tol: float = 1e-10
) -> InfSupEstimate:
    """
    Dense estimate of the discrete inf-sup constants.

    beta_omega^2 is the smallest non-zero eigenvalue of
    K eps = beta^2 (M0 + K) eps with K = E_curl^T M1 E_curl; beta_u^2 the
    smallest non-zero eigenvalue of Wdiv^T H^-1 Wdiv P = beta^2 M2 P with
    H = M1 + E_div^T M2 E_div. Near-zero eigenvalues are counted as nullity;
    with include_constant_mode the pressure nullspace is kept, so beta_u is
    the smallest eigenvalue over all pressures (zero up to round-off).
    """
    m0 = ops.M0.toarray()
    m1 = ops.M1.toarray()
    m2 = ops.M2.toarray()
    e_curl = mesh.E_curl.toarray().astype(np.float64)
    e_div = mesh.E_div.toarray().astype(np.float64)

    stiffness = e_curl.T @ m1 @ e_curl
    stiffness = 0.5 * (stiffness + stiffness.T)
    curl_values = scipy.linalg.eigh(stiffness, m0 + stiffness, eigvals_only=True)
    beta_omega_sq, curl_nullity = _nonzero_floor(curl_values, tol)

    h_div = m1 + e_div.T @ m2 @ e_div
    w_div = e_div.T @ m2
    schur = w_div.T @ scipy.linalg.cho_solve(scipy.linalg.cho_factor(h_div), w_div)
    schur = 0.5 * (schur + schur.T)
    div_values = scipy.linalg.eigh(schur, m2, eigvals_only=True)
    beta_u_sq, pressure_nullity = _nonzero_floor(div_values, tol)
    if include_constant_mode:
        beta_u_sq = max(float(np.min(div_values)), 0.0)

    logger.info(
        "Inf-sup N=%d p=%d: beta_omega=%.4f beta_u=%.4f (nullity %d/%d)",
        mesh.N,
        mesh.p,
        math.sqrt(beta_omega_sq),
        math.sqrt(beta_u_sq),
        curl_nullity,
        pressure_nullity,
    )
    return InfSupEstimate(
        beta_omega=math.sqrt(beta_omega_sq),
        beta_u=math.sqrt(beta_u_sq),
        vorticity_nullity=curl_nullity,
        pressure_nullity=pressure_nullity,
    )


@dataclass(frozen=True)
class OptimalityReport:
    passed: bool
    orthogonality_residual: float
    worst_margin: float
    trials: int
    margins: npt.NDArray[np.float64] = field(repr=False)
    family_residuals: Optional[tuple[float, float, float]] = None


def check_norm_optimality(
    mesh: Mesh,
    omega_bar: Array,
    reference: FieldSource,
    trials: int = 100,
    points: Optional[PointSet] = None,
    seed: int = 0,
    tol: float = 1e-11,
    result: Optional[ProjectionResult] = None,
    params: Optional[ProjectorParams] = None,
) -> OptimalityReport:
    """
    Check that omega_bar minimises the curl error ||curl(omega_bar) - curl(omega)||.

    Verifies Galerkin orthogonality of the curl error against every discrete
    curl and that random perturbations never decrease the error. When the
    full projection result is given, the vorticity, momentum and divergence
    residuals of the projector equations are checked as well.

    Args:
        mesh: Mesh of omega_bar
        omega_bar: Projected vorticity coefficients
        reference: Source of the reference curl
        trials: Number of random perturbations
        points: Points of the error integral (GLL(25) on the mesh by default)
        seed: Seed of the perturbation generator
        tol: Acceptance tolerance for residuals and margins
        result: Projected triple whose residual families are checked
        params: Weights result was projected with (Stokes by default)

    Returns:
        OptimalityReport
    """
    if points is None:
        points = quadrature_points(mesh.spec, ERROR_QUADRATURE_DEGREE)
    sample = sample_spaces(mesh, points, forms=(1,))
    assert sample.weights is not None
    target = reference.sample(points).curl_omega
    weights = sample.weights

    def curl_error(omega: Array) -> float:
        diff = sample.values1(mesh.E_curl @ omega) - target
        return math.sqrt(float(np.sum(weights * np.sum(diff**2, axis=-1))))

    diff = sample.values1(mesh.E_curl @ omega_bar) - target
    residual = float(np.max(np.abs(mesh.E_curl.T @ sample.load1(diff))))

    base = curl_error(omega_bar)
    rng = np.random.default_rng(seed)
    scale = max(float(np.max(np.abs(omega_bar))), 1.0) * 1e-3
    margins = np.empty(trials)
    for i in range(trials):
        delta = scale * rng.standard_normal(mesh.dim0)
        margins[i] = curl_error(omega_bar + delta) - base
    worst = float(np.min(margins)) if trials else 0.0
    passed = residual < tol and worst >= -tol

    families = None
    if result is not None:
        projector = OptimalProjector(mesh, params or ProjectorParams.stokes(), points)
        families = projector.residuals(reference, result)
        passed = passed and max(families) < tol
    return OptimalityReport(
        passed=passed,
        orthogonality_residual=residual,
        worst_margin=worst,
        trials=trials,
        margins=margins,
        family_residuals=families,
    )
