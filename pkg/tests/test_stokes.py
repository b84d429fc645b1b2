"""Tests for saddle systems, the Stokes solve and the optimal projector."""

import dataclasses
import math

import numpy as np
import pytest

from vmsns import (
    AnalyticReference,
    DiscreteField,
    InconsistentLoadError,
    InvalidParamsError,
    MeshSpec,
    ProjectorParams,
    apply_projector,
    assemble_operators,
    build_mesh,
    check_norm_optimality,
    inf_sup_estimate,
    quadrature_points,
    solve_stokes,
)
from vmsns.stokes import (
    BlockLayout,
    OptimalProjector,
    SaddleSolver,
    build_saddle_matrix,
    harmonic_velocities,
)


def _divergence_free_field(mesh, rng):
    """Random discrete field with an exactly divergence-free velocity."""
    psi = rng.standard_normal(mesh.dim0)
    return DiscreteField(
        mesh,
        rng.standard_normal(mesh.dim0),
        mesh.E_curl @ psi,
        rng.standard_normal(mesh.dim2),
    )


class TestProjectorParams:
    """Test projector weights."""

    def test_navier_stokes_weights(self):
        """Test the step weights (1/(2 Re), 1/dt)."""
        params = ProjectorParams.navier_stokes(100.0, 0.04)
        assert params.a_curl == pytest.approx(0.005)
        assert params.a_mass == pytest.approx(25.0)

    def test_inviscid_weights(self):
        """Test the curl weight vanishes for Re = inf."""
        params = ProjectorParams.navier_stokes(math.inf, 0.01)
        assert params.a_curl == 0.0
        assert params.curl_row_scale == 1.0

    def test_stokes_weights(self):
        """Test the pure Stokes weights."""
        assert ProjectorParams.stokes() == ProjectorParams(1.0, 0.0)

    @pytest.mark.parametrize("a_curl, a_mass", [(0.0, 0.0), (-1.0, 1.0), (1.0, math.nan)])
    def test_invalid(self, a_curl, a_mass):
        """Test vanishing, negative and non-finite weights are rejected."""
        with pytest.raises(InvalidParamsError):
            ProjectorParams(a_curl, a_mass)


class TestSaddleMatrix:
    """Test the bordered block matrix."""

    def test_layout(self):
        """Test block offsets of a saddle vector."""
        layout = BlockLayout(4, 8, 4, n_harmonic=2)
        assert layout.size == 19
        assert layout.u == slice(4, 12)
        assert layout.P == slice(12, 16)
        assert layout.mean == 16
        assert layout.harmonic == slice(17, 19)

    def test_mass_weight_skips_harmonic_rows(self, small_ops):
        """Test a positive mass weight needs no harmonic multipliers."""
        system = build_saddle_matrix(small_ops, ProjectorParams(0.5, 2.0))
        mesh = small_ops.mesh
        assert system.harmonic is None
        assert system.matrix.shape == (mesh.dim0 + mesh.dim1 + mesh.dim2 + 1,) * 2

    def test_stokes_adds_harmonic_rows(self, small_ops):
        """Test a zero mass weight adds two harmonic multipliers."""
        system = build_saddle_matrix(small_ops, ProjectorParams.stokes())
        assert system.layout.n_harmonic == 2
        assert system.harmonic.shape == (2, small_ops.mesh.dim1)

    def test_harmonic_velocities(self, curved_ops):
        """Test harmonic velocities are divergence free and orthogonal to discrete curls."""
        basis = harmonic_velocities(curved_ops)
        mesh = curved_ops.mesh
        for h in basis:
            assert np.allclose(mesh.E_div @ h, 0.0, atol=1e-12)
            assert np.allclose(curved_ops.Wcurl @ h, 0.0, atol=1e-10)
            assert np.linalg.norm(h) > 0.0

    def test_solver_round_trip(self, small_ops, rng):
        """Test the saddle solver inverts the assembled matrix."""
        system = build_saddle_matrix(small_ops, ProjectorParams.navier_stokes(100.0, 0.04))
        solution = rng.standard_normal(system.layout.size)
        rhs = system.matrix @ solution
        assert np.allclose(SaddleSolver(system.matrix).solve(rhs), solution, atol=1e-9)


class TestSolveStokes:
    """Test the steady periodic Stokes solve."""

    def test_taylor_green_load(self):
        """Test the solve converges to the Taylor-Green velocity for f = 2 pi^2 u."""
        mesh = build_mesh(MeshSpec(N=4, p=4))
        ops = assemble_operators(mesh)

        def load(x, y):
            return 2.0 * np.pi**2 * np.stack(
                [-np.sin(np.pi * x) * np.cos(np.pi * y), np.cos(np.pi * x) * np.sin(np.pi * y)],
                axis=-1,
            )

        solution = solve_stokes(mesh, ops, load)
        assert solution.residual < 1e-10
        assert np.max(np.abs(mesh.E_div @ solution.u)) < 1e-10

        points = quadrature_points(mesh.spec, 10)
        field = DiscreteField(mesh, solution.omega, solution.u)
        sample = field.sample(points)
        exact = np.stack(
            [
                -np.sin(np.pi * sample.x) * np.cos(np.pi * sample.y),
                np.cos(np.pi * sample.x) * np.sin(np.pi * sample.y),
            ],
            axis=-1,
        )
        weights = points.physical_weights()
        error = math.sqrt(np.sum(weights * np.sum((sample.u - exact) ** 2, axis=-1)))
        assert error < 1e-3

    def test_harmonic_load_rejected(self, small_mesh, small_ops):
        """Test a uniform body force is inconsistent with the periodic operator."""

        def load(x, y):
            return np.stack([np.ones_like(x), np.zeros_like(y)], axis=-1)

        with pytest.raises(InconsistentLoadError):
            solve_stokes(small_mesh, small_ops, load)


class TestOptimalProjector:
    """Test the optimal projector."""

    @pytest.mark.parametrize(
        "params",
        [ProjectorParams.navier_stokes(100.0, 0.04), ProjectorParams.stokes()],
    )
    def test_reproduces_discrete_fields(self, curved_mesh, rng, params):
        """Test fields in the discrete spaces are projected onto themselves."""
        field = _divergence_free_field(curved_mesh, rng)
        result = apply_projector(params, curved_mesh, field)
        assert np.allclose(result.omega, field.omega, atol=1e-9)
        assert np.allclose(result.u, field.u, atol=1e-9)
        assert np.allclose(result.P, field.P, atol=1e-9)

    def test_idempotent(self, curved_mesh, tgv_case):
        """Test projecting a projection changes nothing."""
        params = ProjectorParams.navier_stokes(100.0, 0.04)
        first = apply_projector(params, curved_mesh, AnalyticReference(tgv_case, 0.0))
        again = apply_projector(
            params, curved_mesh, DiscreteField(curved_mesh, first.omega, first.u, first.P)
        )
        assert np.allclose(again.omega, first.omega, atol=1e-9)
        assert np.allclose(again.u, first.u, atol=1e-9)

    def test_linear(self, small_mesh, rng):
        """Test the projector is linear in the reference field."""
        params = ProjectorParams(0.3, 1.5)
        field = DiscreteField(
            small_mesh,
            rng.standard_normal(small_mesh.dim0),
            rng.standard_normal(small_mesh.dim1),
        )
        doubled = DiscreteField(small_mesh, 2.0 * field.omega, 2.0 * field.u)
        projector = OptimalProjector(small_mesh, params)
        one = projector.project(field)
        two = projector.project(doubled)
        assert np.allclose(two.omega, 2.0 * one.omega, atol=1e-10)
        assert np.allclose(two.u, 2.0 * one.u, atol=1e-10)

    def test_divergence_free_projection(self, curved_mesh, tgv_case):
        """Test the projected velocity is discretely divergence free."""
        result = apply_projector(
            ProjectorParams.navier_stokes(100.0, 0.04),
            curved_mesh,
            AnalyticReference(tgv_case, 0.5),
        )
        assert np.max(np.abs(curved_mesh.E_div @ result.u)) < 1e-11

    def test_residuals(self, curved_mesh, tgv_case):
        """Test the projected triple satisfies its defining equations."""
        projector = OptimalProjector(curved_mesh, ProjectorParams.navier_stokes(100.0, 0.04))
        reference = AnalyticReference(tgv_case, 0.0)
        result = projector.project(reference)
        assert max(projector.residuals(reference, result)) < 1e-9

    def test_pressure_free_reference(self, small_mesh, rng):
        """Test a reference without pressure projects to zero pressure."""
        field = DiscreteField(
            small_mesh, np.zeros(small_mesh.dim0), small_mesh.E_curl @ rng.standard_normal(16)
        )
        result = apply_projector(ProjectorParams(1.0, 1.0), small_mesh, field)
        assert np.all(result.P == 0.0)


class TestInfSup:
    """Test the discrete inf-sup estimate."""

    def test_positive_constants(self, small_mesh, small_ops):
        """Test both constants are bounded away from zero."""
        estimate = inf_sup_estimate(small_mesh, small_ops)
        assert estimate.beta_omega > 1e-3
        assert estimate.beta_u > 1e-3
        assert estimate.vorticity_nullity == 1
        assert estimate.pressure_nullity == 1

    def test_constant_mode_included(self, small_mesh, small_ops):
        """Test keeping the constant pressure mode makes beta_u vanish."""
        kept = inf_sup_estimate(small_mesh, small_ops, include_constant_mode=True)
        removed = inf_sup_estimate(small_mesh, small_ops)
        assert kept.beta_u**2 < 1e-10
        assert kept.pressure_nullity == 1
        assert kept.beta_omega == pytest.approx(removed.beta_omega)

    def test_curvilinear(self, curved_mesh, curved_ops):
        """Test the constants stay positive on a curvilinear mesh."""
        estimate = inf_sup_estimate(curved_mesh, curved_ops)
        assert estimate.beta_omega > 1e-3
        assert estimate.beta_u > 1e-3


class TestNormOptimality:
    """Test the curl-error optimality of the projected vorticity."""

    def test_projection_is_optimal(self, tgv_case):
        """Test the projection minimises the curl error under perturbation."""
        mesh = build_mesh(MeshSpec(N=2, p=2))
        points = quadrature_points(mesh.spec, 12)
        reference = AnalyticReference(tgv_case, 0.0)
        result = apply_projector(ProjectorParams.stokes(), mesh, reference, points)
        report = check_norm_optimality(
            mesh, result.omega, reference, trials=20, points=points, tol=1e-9
        )
        assert report.passed
        assert report.trials == 20

    def test_perturbed_vorticity_fails(self, tgv_case, rng):
        """Test a perturbed vorticity violates the orthogonality check."""
        mesh = build_mesh(MeshSpec(N=2, p=2))
        points = quadrature_points(mesh.spec, 12)
        reference = AnalyticReference(tgv_case, 0.0)
        result = apply_projector(ProjectorParams.stokes(), mesh, reference, points)
        perturbed = result.omega + 0.1 * rng.standard_normal(mesh.dim0)
        report = check_norm_optimality(mesh, perturbed, reference, trials=5, points=points)
        assert not report.passed

    def test_residual_families(self, tgv_case):
        """Test the vorticity, momentum and divergence residuals of a projection vanish."""
        mesh = build_mesh(MeshSpec(N=2, p=2))
        points = quadrature_points(mesh.spec, 12)
        reference = AnalyticReference(tgv_case, 0.0)
        result = apply_projector(ProjectorParams.stokes(), mesh, reference, points)
        report = check_norm_optimality(
            mesh, result.omega, reference, trials=5, points=points, tol=1e-9, result=result
        )
        assert report.passed
        assert report.family_residuals is not None
        assert max(report.family_residuals) < 1e-9

    def test_corrupted_momentum_fails(self, tgv_case):
        """Test a broken saddle vector fails even when the vorticity is optimal."""
        mesh = build_mesh(MeshSpec(N=2, p=2))
        points = quadrature_points(mesh.spec, 12)
        reference = AnalyticReference(tgv_case, 0.0)
        result = apply_projector(ProjectorParams.stokes(), mesh, reference, points)
        broken = dataclasses.replace(result, solution=result.solution + 1e-3)
        report = check_norm_optimality(
            mesh, result.omega, reference, trials=5, points=points, tol=1e-9, result=broken
        )
        assert not report.passed
        assert report.family_residuals is not None
        assert max(report.family_residuals) > 1e-9
