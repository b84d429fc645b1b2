"""Tests for GLL quadrature and the one-dimensional bases."""

import numpy as np
import pytest

from vmsns import InvalidDegreeError, OutOfRangeError, eval_edge, eval_nodal, gll_rule
from vmsns.basis import (
    edge_integrals,
    edge_values,
    histopolation_matrix,
    nodal_values,
    reference_tables,
)


class TestGllRule:
    """Test the Gauss-Lobatto-Legendre rule."""

    def test_two_and_three_points(self):
        """Test the closed-form rules of degree 1 and 2."""
        rule = gll_rule(1)
        assert np.allclose(rule.nodes, [-1.0, 1.0])
        assert np.allclose(rule.weights, [1.0, 1.0])

        rule = gll_rule(2)
        assert np.allclose(rule.nodes, [-1.0, 0.0, 1.0], atol=1e-15)
        assert np.allclose(rule.weights, [1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0])

    @pytest.mark.parametrize("q", [1, 2, 3, 5, 8, 25])
    def test_nodes_symmetric_and_sorted(self, q):
        """Test nodes are increasing, symmetric and include the endpoints."""
        nodes = gll_rule(q).nodes
        assert nodes[0] == -1.0 and nodes[-1] == 1.0
        assert np.all(np.diff(nodes) > 0.0)
        assert np.allclose(nodes, -nodes[::-1], atol=1e-15)
        assert gll_rule(q).weights.sum() == pytest.approx(2.0, abs=1e-13)

    @pytest.mark.parametrize("q", [2, 3, 4, 7])
    def test_exact_to_degree_2q_minus_1(self, q):
        """Test monomials up to degree 2q - 1 are integrated exactly."""
        rule = gll_rule(q)
        for degree in range(2 * q):
            exact = 0.0 if degree % 2 else 2.0 / (degree + 1)
            assert np.dot(rule.weights, rule.nodes**degree) == pytest.approx(exact, abs=1e-13)

    def test_invalid_degree(self):
        """Test degree zero is rejected."""
        with pytest.raises(InvalidDegreeError):
            gll_rule(0)

    def test_tables_are_read_only(self):
        """Test cached tables cannot be modified in place."""
        with pytest.raises(ValueError):
            gll_rule(3).nodes[0] = 0.0


class TestNodalBasis:
    """Test the Lagrange basis through the GLL nodes."""

    @pytest.mark.parametrize("p", [1, 2, 4])
    def test_kronecker_property(self, p):
        """Test h_i(xi_j) = delta_ij."""
        values, _ = nodal_values(p, gll_rule(p).nodes)
        assert np.allclose(values, np.eye(p + 1), atol=1e-14)

    def test_partition_of_unity(self):
        """Test the basis sums to one and its derivatives to zero."""
        xi = np.linspace(-1.0, 1.0, 17)
        values, derivatives = nodal_values(4, xi)
        assert np.allclose(values.sum(axis=0), 1.0)
        assert np.allclose(derivatives.sum(axis=0), 0.0, atol=1e-12)

    @pytest.mark.parametrize("p", [2, 3, 5])
    def test_interpolant_derivative_is_exact(self, p):
        """Test the derivative of the interpolant of xi^p is p xi^(p-1)."""
        nodes = gll_rule(p).nodes
        xi = np.linspace(-0.9, 0.95, 11)
        values, derivatives = nodal_values(p, xi)
        coefficients = nodes**p
        assert np.allclose(coefficients @ values, xi**p, atol=1e-12)
        assert np.allclose(coefficients @ derivatives, p * xi ** (p - 1), atol=1e-11)

    def test_eval_nodal_single_point(self):
        """Test single-point evaluation agrees with the array form."""
        values, derivatives = eval_nodal(3, 0.3)
        table_values, table_derivatives = nodal_values(3, [0.3])
        assert np.allclose(values, table_values[:, 0])
        assert np.allclose(derivatives, table_derivatives[:, 0])

    def test_eval_nodal_out_of_range(self):
        """Test points outside [-1, 1] are rejected."""
        with pytest.raises(OutOfRangeError):
            eval_nodal(2, 1.5)


class TestEdgeBasis:
    """Test the histopolation edge basis."""

    @pytest.mark.parametrize("p", [1, 2, 3, 6])
    def test_histopolation_is_identity(self, p):
        """Test the integral of e_i over cell j is delta_ij."""
        assert np.allclose(histopolation_matrix(p), np.eye(p), atol=1e-13)

    def test_integrals_match_quadrature(self):
        """Test exact integrals agree with high-order quadrature."""
        rule = gll_rule(12)
        lower, upper = -0.7, 0.4
        mapped = lower + 0.5 * (upper - lower) * (rule.nodes + 1.0)
        quadrature = edge_values(4, mapped) @ rule.weights * 0.5 * (upper - lower)
        exact = edge_integrals(4, [lower], [upper])[:, 0]
        assert np.allclose(quadrature, exact, atol=1e-13)

    def test_last_edge_is_derivative_of_last_node(self):
        """Test e_p = dh_p/dxi."""
        xi = np.linspace(-1.0, 1.0, 9)
        _, derivatives = nodal_values(3, xi)
        assert np.allclose(edge_values(3, xi)[-1], derivatives[-1], atol=1e-12)

    def test_eval_edge_out_of_range(self):
        """Test points outside [-1, 1] are rejected."""
        with pytest.raises(OutOfRangeError):
            eval_edge(2, -1.01)


class TestReferenceTables:
    """Test cached basis tables."""

    def test_shapes(self):
        """Test table shapes for p = 3 on GLL(5)."""
        tables = reference_tables(3, 5)
        assert tables.nodal.shape == (4, 6)
        assert tables.nodal_derivative.shape == (4, 6)
        assert tables.edge.shape == (3, 6)

    def test_cached(self):
        """Test repeated calls return the same object."""
        assert reference_tables(2, 4) is reference_tables(2, 4)
