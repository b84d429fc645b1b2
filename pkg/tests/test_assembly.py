"""Tests for space sampling and operator assembly."""

import numpy as np
import pytest

from vmsns import (
    DimensionMismatchError,
    DiscreteField,
    InvalidDegreeError,
    InvalidQuadratureError,
    MeshSpec,
    assemble_operators,
    build_mesh,
    quadrature_points,
)
from vmsns.assembly import (
    FieldDifference,
    convect,
    discrete_vorticity,
    l2_project_scalar,
    plotting_points,
    sample_spaces,
)
from vmsns.basis import edge_values, gll_rule


def _nodal_inner_product(mesh, u, v):
    """Equal-order quadrature of u v computed point by point."""
    p = mesh.p
    rule = gll_rule(p)
    total = 0.0
    for element in range(mesh.n_elements):
        for l in range(p + 1):
            for k in range(p + 1):
                det = mesh.map_point(element, rule.nodes[k], rule.nodes[l]).det
                index = mesh.dofs0[element, l * (p + 1) + k]
                total += rule.weights[k] * rule.weights[l] * det * u[index] * v[index]
    return total


def _volume_inner_product(mesh, u, v):
    """Equal-order quadrature of two volume forms computed point by point."""
    p = mesh.p
    rule = gll_rule(p)
    edges = edge_values(p, rule.nodes)
    total = 0.0
    for element in range(mesh.n_elements):
        cu = u[mesh.dofs2[element]].reshape(p, p)
        cv = v[mesh.dofs2[element]].reshape(p, p)
        for l in range(p + 1):
            for k in range(p + 1):
                det = mesh.map_point(element, rule.nodes[k], rule.nodes[l]).det
                ref_u = edges[:, l] @ cu @ edges[:, k]
                ref_v = edges[:, l] @ cv @ edges[:, k]
                total += rule.weights[k] * rule.weights[l] * ref_u * ref_v / det
    return total


class TestMassMatrices:
    """Test assembled mass matrices."""

    @pytest.mark.parametrize("name", ["M0", "M1", "M2"])
    def test_symmetric_positive_definite(self, curved_ops, name):
        """Test symmetry and positive definiteness on a curvilinear mesh."""
        matrix = getattr(curved_ops, name).toarray()
        assert np.max(np.abs(matrix - matrix.T)) < 1e-13
        assert np.min(np.linalg.eigvalsh(matrix)) > 0.0

    def test_nodal_mass_against_pointwise_quadrature(self, curved_mesh, curved_ops, rng):
        """Test M0 against an element-by-element quadrature loop."""
        u = rng.standard_normal(curved_mesh.dim0)
        v = rng.standard_normal(curved_mesh.dim0)
        expected = _nodal_inner_product(curved_mesh, u, v)
        assert u @ (curved_ops.M0 @ v) == pytest.approx(expected, rel=1e-12)

    def test_volume_mass_against_pointwise_quadrature(self, curved_mesh, curved_ops, rng):
        """Test M2 against an element-by-element quadrature loop."""
        u = rng.standard_normal(curved_mesh.dim2)
        v = rng.standard_normal(curved_mesh.dim2)
        expected = _volume_inner_product(curved_mesh, u, v)
        assert u @ (curved_ops.M2 @ v) == pytest.approx(expected, rel=1e-12)

    def test_domain_area(self, small_mesh, small_ops):
        """Test the nodal mass integrates the constant to the domain area."""
        ones = np.ones(small_mesh.dim0)
        assert ones @ (small_ops.M0 @ ones) == pytest.approx(4.0)

    def test_weak_derivatives(self, small_ops):
        """Test Wcurl = E_curl^T M1 and Wdiv = E_div^T M2."""
        wcurl = (small_ops.E_curl.T @ small_ops.M1).toarray()
        wdiv = (small_ops.E_div.T @ small_ops.M2).toarray()
        assert np.allclose(small_ops.Wcurl.toarray(), wcurl)
        assert np.allclose(small_ops.Wdiv.toarray(), wdiv)

    def test_quadrature_below_degree(self, small_mesh):
        """Test a solver rule weaker than the basis is rejected."""
        with pytest.raises(InvalidQuadratureError):
            assemble_operators(small_mesh, quadrature_degree=1)


class TestSampling:
    """Test evaluation of discrete fields at point sets."""

    def test_constant_volume_form(self, small_mesh):
        """Test the L2 projection of 1 evaluates to 1 and sums to the area."""
        coeff = l2_project_scalar(small_mesh, lambda x, y: np.ones_like(x))
        assert coeff.sum() == pytest.approx(4.0, rel=1e-10)
        points = quadrature_points(small_mesh.spec, 6)
        values = sample_spaces(small_mesh, points, forms=(2,)).values2(coeff)
        assert np.allclose(values, 1.0, atol=1e-10)

    def test_nested_points(self, small_mesh):
        """Test sampling on a finer nested host mesh."""
        fine_points = plotting_points(MeshSpec(N=4, p=2), 4)
        sample = sample_spaces(small_mesh, fine_points, forms=(0,))
        assert sample.x.shape == (16, 16)
        assert np.allclose(sample.values0(np.ones(small_mesh.dim0)), 1.0)

    def test_wrong_length(self, small_ops):
        """Test coefficient vectors of the wrong size are rejected."""
        with pytest.raises(DimensionMismatchError):
            small_ops.sample.values0(np.zeros(3))

    def test_plotting_density(self, small_spec):
        """Test plotting grids need at least two points per direction."""
        with pytest.raises(InvalidDegreeError):
            plotting_points(small_spec, 1)
        with pytest.raises(ValueError):
            plotting_points(small_spec, 3).reference_weights()


class TestConvection:
    """Test the Lamb-form convection vector."""

    def test_orthogonal_to_velocity(self, curved_mesh, curved_ops, rng):
        """Test u . convect(u, omega) vanishes for any fields."""
        u = rng.standard_normal(curved_mesh.dim1)
        omega = rng.standard_normal(curved_mesh.dim0)
        vector = convect(curved_ops.convection, u, omega)
        scale = np.linalg.norm(u) * np.linalg.norm(vector)
        assert abs(u @ vector) <= 1e-12 * scale

    def test_zero_vorticity(self, small_mesh, small_ops, rng):
        """Test the convection vector vanishes without vorticity."""
        u = rng.standard_normal(small_mesh.dim1)
        assert np.allclose(convect(small_ops.convection, u, np.zeros(small_mesh.dim0)), 0.0)


class TestDiscreteVorticity:
    """Test the weak curl."""

    def test_zero_circulation(self, curved_mesh, curved_ops, rng):
        """Test the discrete vorticity of any velocity has zero total circulation."""
        omega = discrete_vorticity(curved_ops, rng.standard_normal(curved_mesh.dim1))
        assert np.sum(curved_ops.M0 @ omega) == pytest.approx(0.0, abs=1e-10)

    def test_wrong_length(self, small_ops):
        """Test a velocity of the wrong size is rejected."""
        with pytest.raises(DimensionMismatchError):
            discrete_vorticity(small_ops, np.zeros(5))


class TestDiscreteField:
    """Test discrete field sources."""

    def test_static_pressure(self, small_mesh, rng):
        """Test static pressure is P - |u|^2 / 2."""
        u = rng.standard_normal(small_mesh.dim1)
        P = rng.standard_normal(small_mesh.dim2)
        field = DiscreteField(small_mesh, np.zeros(small_mesh.dim0), u, P)
        sample = field.sample(quadrature_points(small_mesh.spec, 4))
        assert np.allclose(
            sample.static_pressure, sample.pressure - 0.5 * np.sum(sample.u**2, axis=-1)
        )

    def test_no_pressure(self, small_mesh):
        """Test a field without pressure samples None for both pressures."""
        field = DiscreteField(small_mesh, np.zeros(small_mesh.dim0), np.zeros(small_mesh.dim1))
        sample = field.sample(quadrature_points(small_mesh.spec, 3))
        assert sample.pressure is None
        assert sample.static_pressure is None

    def test_difference_with_itself(self, small_mesh, rng):
        """Test the difference of a field with itself vanishes."""
        field = DiscreteField(
            small_mesh,
            rng.standard_normal(small_mesh.dim0),
            rng.standard_normal(small_mesh.dim1),
            rng.standard_normal(small_mesh.dim2),
        )
        sample = FieldDifference(field, field).sample(quadrature_points(small_mesh.spec, 3))
        assert np.allclose(sample.u, 0.0)
        assert np.allclose(sample.curl_omega, 0.0)
        assert np.allclose(sample.pressure, 0.0)

    def test_divergence_free_curl(self, rng):
        """Test the discrete curl of a nodal field samples as divergence free."""
        mesh = build_mesh(MeshSpec(N=2, p=3, mapping="curvilinear", amplitude=0.1))
        psi = rng.standard_normal(mesh.dim0)
        field = DiscreteField(mesh, np.zeros(mesh.dim0), mesh.E_curl @ psi)
        sample = field.sample(quadrature_points(mesh.spec, 6))
        assert np.allclose(sample.div_u, 0.0, atol=1e-10)
