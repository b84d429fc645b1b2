"""
Sampling of the discrete spaces and assembly of the solver operators.

Every bilinear form is evaluated on a PointSet: tensor GLL points on the
elements of a host mesh. The host is either the mesh itself (solver tier,
equal-order rule), the mesh with a high-order rule (error tier) or a finer
nested mesh (composite rule for discrete reference fields). Mass matrices are
built by batched local products scattered through the DOF tables; vectors are
scattered with np.bincount in element-major order so assembly is
bit-reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Sequence

import numpy as np
import numpy.typing as npt
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .basis import edge_values, gll_rule, nodal_values, reference_tables
from .exceptions import DimensionMismatchError, LinearSolveError
from .mesh import Mesh, MeshSpec, canonical_map, nesting_ratio
from .validation import ERROR_QUADRATURE_DEGREE, check_degree, check_quadrature_degree

logger = logging.getLogger(__name__)

Array = npt.NDArray[np.float64]
ScalarFunction = Callable[[Array, Array], Array]


@dataclass(frozen=True)
class PointSet:
    """
    Tensor-product points on every element of a host mesh.

    Point index within an element is l * n + k for xi[k], eta = xi[l].
    Weights are the 1D reference weights, or None for plotting grids.
    """

    host: MeshSpec
    xi: Array
    weights: Optional[Array] = None
    degree: Optional[int] = None

    @property
    def n_per_element(self) -> int:
        return int(self.xi.size**2)

    def reference_weights(self) -> Array:
        if self.weights is None:
            raise ValueError("Plotting point sets carry no quadrature weights")
        return np.outer(self.weights, self.weights).ravel()

    def geometry(self) -> tuple[Array, Array, Array, Array]:
        """
        Physical coordinates and the canonical-map Jacobian at every point.

        Returns:
            (x, y, jacobian, det), shaped (n_host_elements, n_per_element[, 2, 2])
        """
        n_h = self.host.N
        elements = np.arange(n_h * n_h)
        eta, xi = np.meshgrid(self.xi, self.xi, indexing="ij")
        s = -1.0 + (2.0 / n_h) * ((elements % n_h)[:, None] + 0.5 * (1.0 + xi.ravel()[None, :]))
        t = -1.0 + (2.0 / n_h) * ((elements // n_h)[:, None] + 0.5 * (1.0 + eta.ravel()[None, :]))
        return canonical_map(self.host, s, t)

    def physical_weights(self) -> Array:
        """Quadrature weights including the host element measure."""
        _, _, _, det = self.geometry()
        return self.reference_weights()[None, :] * det / self.host.N**2


def quadrature_points(spec: MeshSpec, q: int) -> PointSet:
    """GLL(q) tensor points on every element of the mesh described by spec."""
    rule = gll_rule(q)
    return PointSet(host=spec, xi=rule.nodes, weights=rule.weights, degree=q)


def plotting_points(spec: MeshSpec, density: int) -> PointSet:
    """Uniform density x density grid per element, endpoints included."""
    check_degree(density, minimum=2, key="dump_density")
    return PointSet(host=spec, xi=np.linspace(-1.0, 1.0, density))


@dataclass(frozen=True)
class SpaceSample:
    """Physical basis functions of a mesh's three spaces at the points of a PointSet."""

    mesh: Mesh
    points: PointSet
    target: npt.NDArray[np.int64]
    x: Array
    y: Array
    weights: Optional[Array]
    phi0: Optional[Array]
    phi1: Optional[Array]
    phi2: Optional[Array]

    @property
    def dofs0(self) -> npt.NDArray[np.int64]:
        return self.mesh.dofs0[self.target]

    @property
    def dofs1(self) -> npt.NDArray[np.int64]:
        return self.mesh.dofs1[self.target]

    @property
    def dofs2(self) -> npt.NDArray[np.int64]:
        return self.mesh.dofs2[self.target]

    def _require(self, table: Optional[Array], form: int) -> Array:
        if table is None:
            raise ValueError(f"{form}-form basis was not sampled")
        return table

    def _require_weights(self) -> Array:
        if self.weights is None:
            raise ValueError("Point set has no quadrature weights")
        return self.weights

    def values0(self, coeff: Array) -> Array:
        _check_length("omega", coeff, self.mesh.dim0)
        return np.einsum("ea,eap->ep", coeff[self.dofs0], self._require(self.phi0, 0))

    def values1(self, coeff: Array) -> Array:
        _check_length("u", coeff, self.mesh.dim1)
        return np.einsum("ea,eapc->epc", coeff[self.dofs1], self._require(self.phi1, 1))

    def values2(self, coeff: Array) -> Array:
        _check_length("P", coeff, self.mesh.dim2)
        return np.einsum("ea,eap->ep", coeff[self.dofs2], self._require(self.phi2, 2))

    def load0(self, values: Array) -> Array:
        """Vector of integrals of values against every 0-form basis function."""
        weighted = values * self._require_weights()
        local = np.einsum("eap,ep->ea", self._require(self.phi0, 0), weighted)
        return np.bincount(self.dofs0.ravel(), weights=local.ravel(), minlength=self.mesh.dim0)

    def load1(self, values: Array) -> Array:
        weighted = values * self._require_weights()[..., None]
        local = np.einsum("eapc,epc->ea", self._require(self.phi1, 1), weighted)
        return np.bincount(self.dofs1.ravel(), weights=local.ravel(), minlength=self.mesh.dim1)

    def load2(self, values: Array) -> Array:
        weighted = values * self._require_weights()
        local = np.einsum("eap,ep->ea", self._require(self.phi2, 2), weighted)
        return np.bincount(self.dofs2.ravel(), weights=local.ravel(), minlength=self.mesh.dim2)

    def mass0(self) -> sp.csr_matrix:
        phi = self._require(self.phi0, 0)
        return _scatter_mass(phi, self._require_weights(), self.dofs0, self.mesh.dim0)

    def mass1(self) -> sp.csr_matrix:
        phi = self._require(self.phi1, 1)
        n_e, n_l = phi.shape[:2]
        flat = phi.reshape(n_e, n_l, -1)
        weights = np.repeat(self._require_weights(), 2, axis=1)
        return _scatter_mass(flat, weights, self.dofs1, self.mesh.dim1)

    def mass2(self) -> sp.csr_matrix:
        phi = self._require(self.phi2, 2)
        return _scatter_mass(phi, self._require_weights(), self.dofs2, self.mesh.dim2)


def _check_length(name: str, coeff: Array, expected: int) -> None:
    if coeff.ndim != 1 or coeff.shape[0] != expected:
        raise DimensionMismatchError(name, expected, int(coeff.shape[0]) if coeff.ndim else 0)


def _scatter_mass(
    phi: Array, weights: Array, dofs: npt.NDArray[np.int64], dim: int
) -> sp.csr_matrix:
    local = (phi * weights[:, None, :]) @ np.transpose(phi, (0, 2, 1))
    local = 0.5 * (local + np.transpose(local, (0, 2, 1)))
    n_l = dofs.shape[1]
    rows = np.broadcast_to(dofs[:, :, None], (dofs.shape[0], n_l, n_l))
    cols = np.broadcast_to(dofs[:, None, :], (dofs.shape[0], n_l, n_l))
    matrix = sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(dim, dim))
    return matrix.tocsr()


def _one_d_tables(p: int, points: PointSet, ratio: int) -> tuple[Array, Array]:
    """Nodal and edge values of degree p at the points, per sub-element offset."""
    if ratio == 1 and points.degree is not None and points.weights is not None:
        tables = reference_tables(p, points.degree)
        return tables.nodal[None], tables.edge[None]
    nodal = []
    edge = []
    for offset in range(ratio):
        zeta = -1.0 + 2.0 * (offset + 0.5 * (1.0 + points.xi)) / ratio
        values, _ = nodal_values(p, zeta)
        nodal.append(values)
        edge.append(edge_values(p, zeta))
    return np.stack(nodal), np.stack(edge)


def sample_spaces(mesh: Mesh, points: PointSet, forms: Sequence[int] = (0, 1, 2)) -> SpaceSample:
    """
    Evaluate the physical basis of a mesh at the points of a (possibly finer) host.

    Vector basis functions use the contravariant Piola map
    u = J u_ref / det J, volume functions are divided by det J.

    Raises:
        NestingError: If the host mesh is not nested in the mesh
    """
    ratio = nesting_ratio(mesh.spec, points.host, require_degree=False)
    p, n = mesh.p, mesh.N
    n_h = points.host.N
    host_elements = np.arange(n_h * n_h)
    hx, hy = host_elements % n_h, host_elements // n_h
    target = (hy // ratio) * n + (hx // ratio)
    ox, oy = hx % ratio, hy % ratio

    x, y, jac, det = points.geometry()
    weights = None
    if points.weights is not None:
        weights = points.reference_weights()[None, :] * det / n_h**2

    nodal, edge = _one_d_tables(p, points, ratio)
    nx, ny = nodal[ox], nodal[oy]
    ex, ey = edge[ox], edge[oy]
    n_e = host_elements.size
    n_p = points.n_per_element

    phi0 = phi1 = phi2 = None
    if 0 in forms:
        phi0 = np.einsum("ebl,eak->ebalk", ny, nx).reshape(n_e, (p + 1) ** 2, n_p)
    if 1 in forms:
        ref_q = np.einsum("ejl,eak->ejalk", ey, nx).reshape(n_e, p * (p + 1), n_p)
        ref_r = np.einsum("ebl,eik->ebilk", ny, ex).reshape(n_e, p * (p + 1), n_p)
        col_xi = n * jac[..., :, 0] / det[..., None]
        col_eta = n * jac[..., :, 1] / det[..., None]
        phi1 = np.concatenate(
            [ref_q[..., None] * col_xi[:, None], ref_r[..., None] * col_eta[:, None]], axis=1
        )
    if 2 in forms:
        ref = np.einsum("ejl,eik->ejilk", ey, ex).reshape(n_e, p * p, n_p)
        phi2 = ref * (n * n / det)[:, None, :]

    return SpaceSample(
        mesh=mesh,
        points=points,
        target=target,
        x=x,
        y=y,
        weights=weights,
        phi0=phi0,
        phi1=phi1,
        phi2=phi2,
    )


@dataclass(frozen=True)
class ConvectionEval:
    """Basis tables for the Lamb-form convection term."""

    sample: SpaceSample


@dataclass(frozen=True)
class OperatorSet:
    """Mass matrices and weak derivative pairings of one mesh on one point set."""

    mesh: Mesh
    quadrature_degree: Optional[int]
    sample: SpaceSample
    M0: sp.csr_matrix
    M1: sp.csr_matrix
    M2: sp.csr_matrix
    Wcurl: sp.csr_matrix
    Wdiv: sp.csr_matrix
    convection: ConvectionEval

    @property
    def E_curl(self) -> sp.csr_matrix:
        return self.mesh.E_curl

    @property
    def E_div(self) -> sp.csr_matrix:
        return self.mesh.E_div


def assemble_on_points(mesh: Mesh, points: PointSet) -> OperatorSet:
    """Assemble the operator set of a mesh with the quadrature of a point set."""
    sample = sample_spaces(mesh, points)
    m0, m1, m2 = sample.mass0(), sample.mass1(), sample.mass2()
    wcurl = (mesh.E_curl.T @ m1).tocsr()
    wdiv = (mesh.E_div.T @ m2).tocsr()
    return OperatorSet(
        mesh=mesh,
        quadrature_degree=points.degree,
        sample=sample,
        M0=m0,
        M1=m1,
        M2=m2,
        Wcurl=wcurl,
        Wdiv=wdiv,
        convection=ConvectionEval(sample),
    )


def assemble_operators(mesh: Mesh, quadrature_degree: Optional[int] = None) -> OperatorSet:
    """
    Assemble the solver operators with a GLL rule of the given degree.

    Args:
        mesh: Mesh to assemble on
        quadrature_degree: GLL degree, defaults to the equal-order rule (p)

    Returns:
        OperatorSet

    Raises:
        InvalidQuadratureError: If quadrature_degree < p
    """
    q = mesh.p if quadrature_degree is None else quadrature_degree
    check_quadrature_degree(q, mesh.p)
    ops = assemble_on_points(mesh, quadrature_points(mesh.spec, q))
    logger.debug(
        "Assembled operators N=%d p=%d q=%d (nnz M1=%d)", mesh.N, mesh.p, q, ops.M1.nnz
    )
    return ops


def convect(ops: ConvectionEval, u: Array, omega: Array) -> Array:
    """
    Lamb-form convection vector: entry i is the integral of v_i . (omega x u).

    In 2D omega x u = omega (-u_y, u_x), so u . convect(u, omega) vanishes
    point by point.

    Raises:
        DimensionMismatchError: If u or omega do not match the mesh
    """
    sample = ops.sample
    w = sample.values0(omega)
    vel = sample.values1(u)
    lamb = np.stack([-w * vel[..., 1], w * vel[..., 0]], axis=-1)
    return sample.load1(lamb)


def solve_mass(matrix: sp.spmatrix, rhs: Array) -> Array:
    """Solve a symmetric positive definite mass system with a direct factorization."""
    try:
        return splu(sp.csc_matrix(matrix)).solve(rhs)
    except RuntimeError as err:
        raise LinearSolveError(f"Mass matrix factorization failed: {err}") from err


def discrete_vorticity(ops: OperatorSet, u: Array) -> Array:
    """Weak curl of u in the vorticity space: M0 omega = Wcurl u."""
    _check_length("u", u, ops.mesh.dim1)
    return solve_mass(ops.M0, ops.Wcurl @ u)


def l2_project_scalar(
    mesh: Mesh,
    f: ScalarFunction,
    points: Optional[PointSet] = None,
    quadrature_degree: int = ERROR_QUADRATURE_DEGREE,
) -> Array:
    """
    L2 projection of a pointwise scalar onto the volume space.

    Args:
        mesh: Target mesh
        f: Vectorized function f(x, y)
        points: Point set for the mass matrix and load (defaults to GLL
            of quadrature_degree on the mesh)
        quadrature_degree: Degree of the default rule

    Returns:
        Coefficients of the volume-space projection
    """
    if points is None:
        points = quadrature_points(mesh.spec, quadrature_degree)
    sample = sample_spaces(mesh, points, forms=(2,))
    return solve_mass(sample.mass2(), sample.load2(np.asarray(f(sample.x, sample.y))))


@dataclass(frozen=True)
class FieldSample:
    """Field values at the points of a PointSet."""

    x: Array
    y: Array
    omega: Array
    u: Array
    curl_omega: Array
    div_u: Array
    pressure: Optional[Array] = None
    static_pressure: Optional[Array] = None


class FieldSource(Protocol):
    """Anything that can be evaluated on a PointSet (analytic or discrete)."""

    def sample(self, points: PointSet) -> FieldSample: ...


@dataclass(frozen=True)
class DiscreteField:
    """
    A discrete (omega, u, P) triple on a mesh, evaluable at arbitrary nested points.

    P is the Bernoulli pressure; the static pressure is P - |u|^2 / 2 with u
    taken from u_mid when the triple came out of a time step.
    """

    mesh: Mesh
    omega: Array
    u: Array
    P: Optional[Array] = None
    u_mid: Optional[Array] = None

    def sample(self, points: PointSet) -> FieldSample:
        sample = sample_spaces(self.mesh, points)
        vel = sample.values1(self.u)
        pressure = static = None
        if self.P is not None:
            pressure = sample.values2(self.P)
            carrier = vel if self.u_mid is None else sample.values1(self.u_mid)
            static = pressure - 0.5 * np.sum(carrier**2, axis=-1)
        return FieldSample(
            x=sample.x,
            y=sample.y,
            omega=sample.values0(self.omega),
            u=vel,
            curl_omega=sample.values1(self.mesh.E_curl @ self.omega),
            div_u=sample.values2(self.mesh.E_div @ self.u),
            pressure=pressure,
            static_pressure=static,
        )


def _difference(first: Optional[Array], second: Optional[Array]) -> Optional[Array]:
    if first is None or second is None:
        return None
    return first - second


@dataclass(frozen=True)
class FieldDifference:
    """Pointwise difference of two field sources."""

    first: FieldSource
    second: FieldSource

    def sample(self, points: PointSet) -> FieldSample:
        a = self.first.sample(points)
        b = self.second.sample(points)
        return FieldSample(
            x=a.x,
            y=a.y,
            omega=a.omega - b.omega,
            u=a.u - b.u,
            curl_omega=a.curl_omega - b.curl_omega,
            div_u=a.div_u - b.div_u,
            pressure=_difference(a.pressure, b.pressure),
            static_pressure=_difference(a.static_pressure, b.static_pressure),
        )
