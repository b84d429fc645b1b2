"""
Doubly periodic N x N spectral-element meshes.

Degrees of freedom live on a global (N p) x (N p) lattice of nodes, x-edges,
y-edges and cells. Element e = ey * N + ex owns the lattice entities whose
local index along each direction is below p; the entities at local index p
belong to the periodic neighbour. Element-local orderings:

    0-forms   b * (p+1) + a
    1-forms   q-block (j-1) * (p+1) + a  (flux through eta-lines, the u_x part),
              then r-block p (p+1) + b * p + (i-1)  (flux through xi-lines)
    2-forms   (j-1) * p + (i-1)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
import numpy.typing as npt
import scipy.sparse as sp

from .basis import gll_rule
from .exceptions import DegenerateMeshError, NestingError, OutOfRangeError
from .validation import check_mesh_spec, check_reference_point

logger = logging.getLogger(__name__)

Domain = tuple[float, float, float, float]


@dataclass(frozen=True)
class MeshSpec:
    """Parameters of a periodic mesh; validated on construction."""

    N: int
    p: int
    mapping: str = "orthogonal"
    amplitude: float = 0.0
    domain: Domain = (-1.0, 1.0, -1.0, 1.0)
    periodic: bool = True

    def __post_init__(self) -> None:
        check_mesh_spec(self.N, self.p, self.mapping, self.amplitude, self.domain, self.periodic)

    @property
    def effective_amplitude(self) -> float:
        """Amplitude entering the map (zero for orthogonal meshes)."""
        return self.amplitude if self.mapping == "curvilinear" else 0.0

    def with_degree(self, p: int) -> MeshSpec:
        return replace(self, p=p)

    def same_geometry(self, other: MeshSpec) -> bool:
        """True when both specs describe the same physical map."""
        return (
            tuple(self.domain) == tuple(other.domain)
            and self.effective_amplitude == other.effective_amplitude
            and self.periodic == other.periodic
        )


class MapPoint(NamedTuple):
    x: float
    y: float
    jacobian: npt.NDArray[np.float64]
    det: float


def canonical_map(
    spec: MeshSpec, s: npt.ArrayLike, t: npt.ArrayLike
) -> tuple[
    npt.NDArray[np.float64],
    npt.NDArray[np.float64],
    npt.NDArray[np.float64],
    npt.NDArray[np.float64],
]:
    """
    Evaluate the global map on canonical coordinates (s, t) in [-1, 1]^2.

    The sinusoidal family moves s by +c sin(2 pi s) sin(2 pi t) and t by the
    same amount with opposite sign; the result is scaled affinely onto the
    domain box. On ]-1, 1[^2 this is x = s + c sin(2 pi s) sin(2 pi t).

    Returns:
        (x, y, jacobian, det) where jacobian[..., i, j] = d(x, y)_i / d(s, t)_j
    """
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    x_lo, x_hi, y_lo, y_hi = spec.domain
    half_x = 0.5 * (x_hi - x_lo)
    half_y = 0.5 * (y_hi - y_lo)
    c = spec.effective_amplitude

    sin_s, cos_s = np.sin(2.0 * np.pi * s), np.cos(2.0 * np.pi * s)
    sin_t, cos_t = np.sin(2.0 * np.pi * t), np.cos(2.0 * np.pi * t)
    bump = c * sin_s * sin_t
    bump_s = 2.0 * np.pi * c * cos_s * sin_t
    bump_t = 2.0 * np.pi * c * sin_s * cos_t

    x = x_lo + half_x * (s + 1.0 + bump)
    y = y_lo + half_y * (t + 1.0 - bump)
    jac = np.empty(s.shape + (2, 2), dtype=np.float64)
    jac[..., 0, 0] = half_x * (1.0 + bump_s)
    jac[..., 0, 1] = half_x * bump_t
    jac[..., 1, 0] = -half_y * bump_s
    jac[..., 1, 1] = half_y * (1.0 - bump_t)
    det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
    return x, y, jac, det


def nesting_ratio(coarse: MeshSpec, fine: MeshSpec, require_degree: bool = True) -> int:
    """
    Element ratio between two nested meshes.

    Raises:
        NestingError: If the meshes differ in geometry, the fine N is not an
            integer multiple of the coarse N, or (when required) the fine
            degree is lower than the coarse degree
    """
    if not coarse.same_geometry(fine):
        raise NestingError(
            f"Meshes use different geometry: {coarse.mapping}/{coarse.domain} "
            f"vs {fine.mapping}/{fine.domain}"
        )
    if fine.N % coarse.N != 0:
        raise NestingError(f"Fine N={fine.N} is not a multiple of coarse N={coarse.N}")
    if require_degree and fine.p < coarse.p:
        raise NestingError(f"Fine degree {fine.p} is below coarse degree {coarse.p}")
    return fine.N // coarse.N


@dataclass(frozen=True)
class Mesh:
    """Periodic mesh with DOF tables and incidence matrices."""

    spec: MeshSpec
    dofs0: npt.NDArray[np.int64] = field(repr=False)
    dofs1: npt.NDArray[np.int64] = field(repr=False)
    dofs2: npt.NDArray[np.int64] = field(repr=False)
    E_curl: sp.csr_matrix = field(repr=False)
    E_div: sp.csr_matrix = field(repr=False)

    @property
    def N(self) -> int:
        return self.spec.N

    @property
    def p(self) -> int:
        return self.spec.p

    @property
    def n_elements(self) -> int:
        return self.spec.N * self.spec.N

    @property
    def dim0(self) -> int:
        return (self.spec.N * self.spec.p) ** 2

    @property
    def dim1(self) -> int:
        return 2 * (self.spec.N * self.spec.p) ** 2

    @property
    def dim2(self) -> int:
        return (self.spec.N * self.spec.p) ** 2

    def element_index(self, ex: int, ey: int) -> int:
        return (ey % self.N) * self.N + (ex % self.N)

    def element_coordinates(self, element: int) -> tuple[int, int]:
        if not 0 <= element < self.n_elements:
            raise OutOfRangeError("element", element, f"[0, {self.n_elements - 1}]")
        ey, ex = divmod(element, self.N)
        return ex, ey

    def canonical(
        self, elements: npt.ArrayLike, xi: npt.ArrayLike, eta: npt.ArrayLike
    ) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
        """Canonical (s, t) of local points; broadcasts over all arguments."""
        elements = np.asarray(elements)
        ex = elements % self.N
        ey = elements // self.N
        s = -1.0 + (2.0 / self.N) * (ex + 0.5 * (1.0 + np.asarray(xi)))
        t = -1.0 + (2.0 / self.N) * (ey + 0.5 * (1.0 + np.asarray(eta)))
        return s, t

    def evaluate_map(
        self, elements: npt.ArrayLike, xi: npt.ArrayLike, eta: npt.ArrayLike
    ) -> tuple[
        npt.NDArray[np.float64],
        npt.NDArray[np.float64],
        npt.NDArray[np.float64],
        npt.NDArray[np.float64],
    ]:
        """Vectorized element map: position, Jacobian in (xi, eta) and determinant."""
        s, t = self.canonical(elements, xi, eta)
        x, y, jac, det = canonical_map(self.spec, s, t)
        return x, y, jac / self.N, det / self.N**2

    def map_point(self, element: int, xi: float, eta: float) -> MapPoint:
        """
        Map one reference point of one element.

        Raises:
            OutOfRangeError: If the element index or the reference point is invalid
        """
        self.element_coordinates(element)
        check_reference_point(xi, "xi")
        check_reference_point(eta, "eta")
        x, y, jac, det = self.evaluate_map(element, xi, eta)
        return MapPoint(float(x), float(y), np.asarray(jac), float(det))

    def shift_permutation(self, form: int, sx: int, sy: int) -> npt.NDArray[np.int64]:
        """
        Index map of a translation by (sx, sy) elements.

        For a coefficient vector v, w[perm] = v is v translated by the shift.
        """
        n_lat = self.N * self.p
        dx, dy = sx * self.p, sy * self.p
        jj, ii = np.meshgrid(np.arange(n_lat), np.arange(n_lat), indexing="ij")
        ii, jj = ii.ravel(), jj.ravel()
        if form == 0:
            return _node(self.spec, ii + dx, jj + dy)[np.argsort(_node(self.spec, ii, jj))]
        if form == 1:
            src = np.concatenate([_xedge(self.spec, ii, jj), _yedge(self.spec, ii, jj)])
            dst = np.concatenate(
                [_xedge(self.spec, ii + dx, jj + dy), _yedge(self.spec, ii + dx, jj + dy)]
            )
            return dst[np.argsort(src)]
        if form == 2:
            return _cell(self.spec, ii + dx, jj + dy)[np.argsort(_cell(self.spec, ii, jj))]
        raise OutOfRangeError("form", form, "{0, 1, 2}")


def _split(spec: MeshSpec, index: npt.NDArray[np.int64]) -> tuple[npt.NDArray, npt.NDArray]:
    wrapped = np.mod(index, spec.N * spec.p)
    return np.divmod(wrapped, spec.p)


def _node(spec: MeshSpec, i: npt.ArrayLike, j: npt.ArrayLike) -> npt.NDArray[np.int64]:
    ex, a = _split(spec, np.asarray(i))
    ey, b = _split(spec, np.asarray(j))
    return (ey * spec.N + ex) * spec.p**2 + b * spec.p + a


def _xedge(spec: MeshSpec, i: npt.ArrayLike, j: npt.ArrayLike) -> npt.NDArray[np.int64]:
    # node column i, cell row j
    ex, a = _split(spec, np.asarray(i))
    ey, c = _split(spec, np.asarray(j))
    return (ey * spec.N + ex) * 2 * spec.p**2 + c * spec.p + a


def _yedge(spec: MeshSpec, i: npt.ArrayLike, j: npt.ArrayLike) -> npt.NDArray[np.int64]:
    # cell column i, node row j
    ex, c = _split(spec, np.asarray(i))
    ey, b = _split(spec, np.asarray(j))
    return (ey * spec.N + ex) * 2 * spec.p**2 + spec.p**2 + b * spec.p + c


def _cell(spec: MeshSpec, i: npt.ArrayLike, j: npt.ArrayLike) -> npt.NDArray[np.int64]:
    ex, c = _split(spec, np.asarray(i))
    ey, d = _split(spec, np.asarray(j))
    return (ey * spec.N + ex) * spec.p**2 + d * spec.p + c


def _dof_tables(
    spec: MeshSpec,
) -> tuple[npt.NDArray[np.int64], npt.NDArray[np.int64], npt.NDArray[np.int64]]:
    n, p = spec.N, spec.p
    elements = np.arange(n * n)
    ex = (elements % n)[:, None]
    ey = (elements // n)[:, None]

    bb, aa = np.meshgrid(np.arange(p + 1), np.arange(p + 1), indexing="ij")
    aa, bb = aa.ravel()[None, :], bb.ravel()[None, :]
    dofs0 = _node(spec, ex * p + aa, ey * p + bb)

    jj, aq = np.meshgrid(np.arange(p), np.arange(p + 1), indexing="ij")
    q_block = _xedge(spec, ex * p + aq.ravel()[None, :], ey * p + jj.ravel()[None, :])
    br, ir = np.meshgrid(np.arange(p + 1), np.arange(p), indexing="ij")
    r_block = _yedge(spec, ex * p + ir.ravel()[None, :], ey * p + br.ravel()[None, :])
    dofs1 = np.concatenate([q_block, r_block], axis=1)

    jc, ic = np.meshgrid(np.arange(p), np.arange(p), indexing="ij")
    dofs2 = _cell(spec, ex * p + ic.ravel()[None, :], ey * p + jc.ravel()[None, :])
    return dofs0, dofs1, dofs2


def _incidence_matrices(spec: MeshSpec) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    n_lat = spec.N * spec.p
    dim = n_lat * n_lat
    jj, ii = np.meshgrid(np.arange(n_lat), np.arange(n_lat), indexing="ij")
    i, j = ii.ravel(), jj.ravel()

    # x-edges: w(i, j+1) - w(i, j); y-edges: w(i, j) - w(i+1, j)
    rows = np.concatenate([_xedge(spec, i, j)] * 2 + [_yedge(spec, i, j)] * 2)
    cols = np.concatenate(
        [_node(spec, i, j + 1), _node(spec, i, j), _node(spec, i, j), _node(spec, i + 1, j)]
    )
    vals = np.repeat(np.array([1, -1, 1, -1], dtype=np.int64), dim)
    e_curl = sp.coo_matrix((vals, (rows, cols)), shape=(2 * dim, dim)).tocsr()
    e_curl.eliminate_zeros()

    cell = _cell(spec, i, j)
    rows = np.concatenate([cell] * 4)
    cols = np.concatenate(
        [_xedge(spec, i + 1, j), _xedge(spec, i, j), _yedge(spec, i, j + 1), _yedge(spec, i, j)]
    )
    e_div = sp.coo_matrix((vals, (rows, cols)), shape=(dim, 2 * dim)).tocsr()
    e_div.eliminate_zeros()
    return e_curl, e_div


def build_mesh(spec: MeshSpec) -> Mesh:
    """
    Build DOF tables and incidence matrices for a periodic mesh.

    Args:
        spec: Validated mesh parameters

    Returns:
        Immutable Mesh

    Raises:
        DegenerateMeshError: If the Jacobian determinant is non-positive at any
            equal-order quadrature point
    """
    dofs0, dofs1, dofs2 = _dof_tables(spec)
    e_curl, e_div = _incidence_matrices(spec)
    mesh = Mesh(spec=spec, dofs0=dofs0, dofs1=dofs1, dofs2=dofs2, E_curl=e_curl, E_div=e_div)

    nodes = gll_rule(spec.p).nodes
    eta, xi = np.meshgrid(nodes, nodes, indexing="ij")
    elements = np.arange(mesh.n_elements)[:, None]
    _, _, _, det = mesh.evaluate_map(elements, xi.ravel()[None, :], eta.ravel()[None, :])
    worst = np.min(det, axis=1)
    if np.any(worst <= 0.0) or not np.all(np.isfinite(worst)):
        element = int(np.argmin(worst))
        raise DegenerateMeshError(element, float(worst[element]))

    logger.info(
        "Built %dx%d mesh p=%d (%s): dim0=%d dim1=%d dim2=%d",
        spec.N,
        spec.N,
        spec.p,
        spec.mapping,
        mesh.dim0,
        mesh.dim1,
        mesh.dim2,
    )
    return mesh


def incidence(mesh: Mesh) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Discrete curl (dim1 x dim0) and divergence (dim2 x dim1) incidence matrices."""
    return mesh.E_curl, mesh.E_div


def element_size(spec: MeshSpec) -> float:
    """Reference element size h = (x_hi - x_lo) / N used in convergence tables."""
    x_lo, x_hi, _, _ = spec.domain
    return (x_hi - x_lo) / spec.N


def period(spec: MeshSpec) -> tuple[float, float]:
    x_lo, x_hi, y_lo, y_hi = spec.domain
    return x_hi - x_lo, y_hi - y_lo

