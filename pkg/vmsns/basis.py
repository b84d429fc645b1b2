"""
Gauss-Lobatto-Legendre quadrature and the one-dimensional mimetic bases.

The nodal basis h_0..h_p is the Lagrange basis through the GLL(p) nodes; the
edge basis e_1..e_p is built from its derivatives, e_i = -sum_{k<i} dh_k/dxi,
so that the integral of e_i over the cell [xi_{j-1}, xi_j] is delta_ij.
All tables are pure functions of integer degrees and are cached.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import numpy.typing as npt

from .validation import check_degree, check_reference_point

_NEWTON_TOL = 1e-15
_NEWTON_MAX_ITER = 100


def _readonly(array: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class QuadratureRule:
    """GLL rule of degree q: q+1 nodes on [-1, 1], exact up to degree 2q-1."""

    degree: int
    nodes: npt.NDArray[np.float64]
    weights: npt.NDArray[np.float64]


@dataclass(frozen=True)
class NodalBasis:
    """Lagrange basis through the GLL(p) nodes, in barycentric form."""

    degree: int
    nodes: npt.NDArray[np.float64]
    barycentric_weights: npt.NDArray[np.float64]
    # differentiation[i, j] = dh_j/dxi at node i
    differentiation: npt.NDArray[np.float64]


@dataclass(frozen=True)
class EdgeBasis:
    """Histopolation basis e_1..e_p on the cells between GLL(p) nodes."""

    degree: int
    nodal: NodalBasis


@dataclass(frozen=True)
class BasisTables:
    """Nodal values, nodal derivatives and edge values at the GLL(q) nodes."""

    degree: int
    quadrature: QuadratureRule
    nodal: npt.NDArray[np.float64]
    nodal_derivative: npt.NDArray[np.float64]
    edge: npt.NDArray[np.float64]


def _legendre_columns(x: npt.NDArray[np.float64], q: int) -> npt.NDArray[np.float64]:
    table = np.zeros((x.size, q + 1), dtype=np.float64)
    table[:, 0] = 1.0
    table[:, 1] = x
    for k in range(2, q + 1):
        table[:, k] = ((2 * k - 1) * x * table[:, k - 1] - (k - 1) * table[:, k - 2]) / k
    return table


@lru_cache(maxsize=None)
def gll_rule(q: int) -> QuadratureRule:
    """
    Gauss-Lobatto-Legendre rule with q+1 points.

    Nodes are found by Newton iteration on (1 - x^2) dL_q/dx starting from the
    Chebyshev-Gauss-Lobatto points; weights are 2 / (q (q+1) L_q(x)^2).

    Args:
        q: Rule degree (>= 1)

    Returns:
        QuadratureRule with strictly increasing, symmetric nodes

    Raises:
        InvalidDegreeError: If q < 1
    """
    check_degree(q, key="q")
    nodes = -np.cos(np.pi * np.arange(q + 1) / q)
    for _ in range(_NEWTON_MAX_ITER):
        legendre = _legendre_columns(nodes, q)
        update = -(nodes * legendre[:, q] - legendre[:, q - 1]) / ((q + 1) * legendre[:, q])
        nodes = nodes + update
        if np.max(np.abs(update)) <= _NEWTON_TOL:
            break
    legendre = _legendre_columns(nodes, q)
    weights = 2.0 / (q * (q + 1) * legendre[:, q] ** 2)

    # enforce exact symmetry about 0
    nodes = 0.5 * (nodes - nodes[::-1])
    nodes[0], nodes[-1] = -1.0, 1.0
    weights = 0.5 * (weights + weights[::-1])
    return QuadratureRule(degree=q, nodes=_readonly(nodes), weights=_readonly(weights))


@lru_cache(maxsize=None)
def nodal_basis(p: int) -> NodalBasis:
    """Cached nodal basis of degree p."""
    check_degree(p, key="p")
    nodes = gll_rule(p).nodes
    gaps = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(gaps, 1.0)
    bary = 1.0 / np.prod(gaps, axis=1)

    diff = np.zeros((p + 1, p + 1), dtype=np.float64)
    for i in range(p + 1):
        for j in range(p + 1):
            if i != j:
                diff[i, j] = (bary[j] / bary[i]) / (nodes[i] - nodes[j])
        diff[i, i] = -np.sum(diff[i, :])
    return NodalBasis(
        degree=p,
        nodes=nodes,
        barycentric_weights=_readonly(bary),
        differentiation=_readonly(diff),
    )


@lru_cache(maxsize=None)
def edge_basis(p: int) -> EdgeBasis:
    """Cached edge basis of degree p."""
    return EdgeBasis(degree=p, nodal=nodal_basis(p))


def nodal_values(
    p: int, xi: npt.ArrayLike
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """
    Evaluate h_0..h_p and their derivatives at an array of points.

    Returns:
        (values, derivatives), each of shape (p+1, n)
    """
    basis = nodal_basis(p)
    x = np.atleast_1d(np.asarray(xi, dtype=np.float64)).ravel()
    diff = x[None, :] - basis.nodes[:, None]
    hits = diff == 0.0
    terms = basis.barycentric_weights[:, None] / np.where(hits, 1.0, diff)
    values = terms / np.sum(terms, axis=0)
    on_node = np.any(hits, axis=0)
    values[:, on_node] = hits[:, on_node].astype(np.float64)
    # derivatives have degree p-1, so interpolating the nodal derivatives is exact
    derivatives = basis.differentiation.T @ values
    return values, derivatives


def edge_values(p: int, xi: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Evaluate e_1..e_p at an array of points; shape (p, n)."""
    _, derivatives = nodal_values(p, xi)
    return -np.cumsum(derivatives[:-1], axis=0)


def edge_integrals(
    p: int, lower: npt.ArrayLike, upper: npt.ArrayLike
) -> npt.NDArray[np.float64]:
    """
    Integrals of e_1..e_p over [lower, upper], evaluated exactly.

    Uses int e_i = -sum_{k<i} (h_k(upper) - h_k(lower)).

    Returns:
        Array of shape (p, n)
    """
    upper_values, _ = nodal_values(p, upper)
    lower_values, _ = nodal_values(p, lower)
    return -np.cumsum((upper_values - lower_values)[:-1], axis=0)


def eval_nodal(p: int, xi: float) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """
    Evaluate the nodal basis and its derivatives at a single reference point.

    Args:
        p: Polynomial degree
        xi: Reference coordinate in [-1, 1]

    Returns:
        (values, derivatives), each with p+1 entries

    Raises:
        OutOfRangeError: If xi lies outside [-1, 1]
    """
    check_reference_point(xi)
    values, derivatives = nodal_values(p, xi)
    return values[:, 0], derivatives[:, 0]


def eval_edge(p: int, xi: float) -> npt.NDArray[np.float64]:
    """
    Evaluate the edge basis at a single reference point.

    Raises:
        OutOfRangeError: If xi lies outside [-1, 1]
    """
    check_reference_point(xi)
    return edge_values(p, xi)[:, 0]


def histopolation_matrix(p: int) -> npt.NDArray[np.float64]:
    """Matrix H[j, i] = integral of e_i over the j-th GLL cell."""
    nodes = gll_rule(p).nodes
    return edge_integrals(p, nodes[:-1], nodes[1:]).T


@lru_cache(maxsize=None)
def reference_tables(p: int, q: int) -> BasisTables:
    """Basis tables of degree p at the GLL(q) nodes, cached per (p, q)."""
    rule = gll_rule(q)
    values, derivatives = nodal_values(p, rule.nodes)
    edges = -np.cumsum(derivatives[:-1], axis=0)
    return BasisTables(
        degree=p,
        quadrature=rule,
        nodal=_readonly(values),
        nodal_derivative=_readonly(derivatives),
        edge=_readonly(edges),
    )
