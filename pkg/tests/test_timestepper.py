"""Tests for the Crank-Nicolson Galerkin stepper."""

import math

import numpy as np
import pytest

from vmsns import (
    ConfigurationError,
    DimensionMismatchError,
    FlowState,
    MeshSpec,
    NonConvergenceError,
    StepControls,
    assemble_operators,
    build_mesh,
    conserved_quantities,
    run,
    step_galerkin,
)
from vmsns.timestepper import CrankNicolsonStepper, count_steps


class TestStepControls:
    """Test step control validation."""

    def test_viscous(self, tgv_controls):
        """Test viscosity and projector weights of a viscous run."""
        assert not tgv_controls.inviscid
        assert tgv_controls.viscosity == pytest.approx(0.01)
        assert tgv_controls.projector_params().a_mass == pytest.approx(25.0)

    def test_inviscid(self, inviscid_controls):
        """Test Re = inf switches off the viscous blocks."""
        assert inviscid_controls.inviscid
        assert inviscid_controls.viscosity == 0.0
        assert inviscid_controls.projector_params().a_curl == 0.0

    @pytest.mark.parametrize(
        "update, size, converged",
        [
            (5e-13, 0.5, True),
            (5e-12, 0.5, False),
            (5e-12, 10.0, True),
            (2e-11, 10.0, False),
        ],
    )
    def test_picard_stop_rule(self, update, size, converged):
        """Test the update bound is absolute for small iterates and scaled for large ones."""
        controls = StepControls(dt=0.1, picard_tol=1e-12)
        assert controls.picard_converged(update, size) is converged

    @pytest.mark.parametrize(
        "kwargs, key",
        [
            ({"dt": 0.0}, "dt"),
            ({"dt": 0.1, "reynolds": -5.0}, "Re"),
            ({"dt": 0.1, "picard_tol": 0.0}, "picard_tol"),
            ({"dt": 0.1, "picard_max": 0}, "picard_max"),
        ],
    )
    def test_invalid(self, kwargs, key):
        """Test invalid controls name the offending key."""
        with pytest.raises(ConfigurationError) as exc:
            StepControls(**kwargs)
        assert exc.value.key == key


class TestCountSteps:
    """Test the step count of a run."""

    def test_whole_steps(self):
        """Test t_final reached by whole steps."""
        assert count_steps(0.0, 1.0, 0.04) == 25
        assert count_steps(0.0, 0.0, 0.01) == 0

    def test_partial_step_rejected(self):
        """Test t_final off the step grid is rejected."""
        with pytest.raises(ConfigurationError):
            count_steps(0.0, 1.0, 0.03)


class TestCrankNicolsonStepper:
    """Test single Galerkin steps."""

    def test_zero_state_is_steady(self, small_mesh, small_ops, tgv_controls):
        """Test the zero state stays zero after one Picard iteration."""
        state, iterations = step_galerkin(
            FlowState.zeros(small_mesh), tgv_controls, small_mesh, small_ops
        )
        assert iterations == 1
        assert np.all(state.u == 0.0)
        assert state.t == pytest.approx(0.04)

    def test_divergence_free_step(
        self, curved_mesh, curved_ops, tgv_case, tgv_controls, initial_flow
    ):
        """Test the new velocity is discretely divergence free."""
        state = initial_flow(tgv_case, curved_mesh, curved_ops, tgv_controls)
        new, iterations = step_galerkin(state, tgv_controls, curved_mesh, curved_ops)
        assert new.divergence_residual(curved_mesh) < 1e-10
        assert 1 < iterations < 20
        assert new.u_mid is not None
        assert np.allclose(new.u_mid, 0.5 * (state.u + new.u))

    def test_vorticity_is_weak_curl(self, rollup_case, inviscid_controls, initial_flow):
        """Test inviscid steps keep omega the weak curl of u."""
        mesh = build_mesh(MeshSpec(N=2, p=3, domain=rollup_case.domain))
        ops = assemble_operators(mesh)
        state = initial_flow(rollup_case, mesh, ops, inviscid_controls)
        new, _ = step_galerkin(state, inviscid_controls, mesh, ops)
        residual = ops.M0 @ new.omega - ops.Wcurl @ new.u
        assert np.max(np.abs(residual)) < 1e-10

    def test_picard_budget(self, small_mesh, small_ops, tgv_case, initial_flow):
        """Test an exhausted Picard budget raises NonConvergenceError."""
        controls = StepControls(dt=0.04, reynolds=100.0, picard_max=1)
        state = initial_flow(tgv_case, small_mesh, small_ops, controls)
        with pytest.raises(NonConvergenceError) as exc:
            CrankNicolsonStepper(small_mesh, small_ops, controls).step(state, step_index=3)
        assert exc.value.step == 3
        assert exc.value.iterations == 1

    def test_dimension_mismatch(self, small_mesh, small_ops, tgv_controls):
        """Test a state from another mesh is rejected."""
        other = FlowState.zeros(build_mesh(MeshSpec(N=3, p=2)))
        with pytest.raises(DimensionMismatchError):
            step_galerkin(other, tgv_controls, small_mesh, small_ops)


class TestRun:
    """Test multi-step runs."""

    def test_observers_and_counts(self, small_mesh, small_ops, tgv_case, initial_flow):
        """Test observers see every step and Picard counts are kept."""
        controls = StepControls(dt=0.05, reynolds=100.0)
        state = initial_flow(tgv_case, small_mesh, small_ops, controls)
        seen = []

        def observer(step, previous, current, iterations):
            seen.append((step, current.t - previous.t, iterations))

        trajectory = run(state, controls, small_mesh, small_ops, 0.2, observers=[observer])
        assert trajectory.steps == 4
        assert [s[0] for s in seen] == [1, 2, 3, 4]
        assert all(dt == pytest.approx(0.05) for _, dt, _ in seen)
        assert trajectory.picard_iterations == [s[2] for s in seen]
        assert trajectory.final.t == pytest.approx(0.2)

    def test_step_index_attached(self, small_mesh, small_ops, tgv_case, initial_flow):
        """Test a Picard failure inside a run reports the step index."""
        controls = StepControls(dt=0.04, reynolds=100.0, picard_max=1)
        state = initial_flow(tgv_case, small_mesh, small_ops, controls)
        with pytest.raises(NonConvergenceError) as exc:
            run(state, controls, small_mesh, small_ops, 0.08)
        assert exc.value.step == 1

    def test_needs_operators(self, small_mesh, tgv_controls):
        """Test a run without operators or stepper is rejected."""
        with pytest.raises(ConfigurationError):
            run(FlowState.zeros(small_mesh), tgv_controls, small_mesh, None, 0.04)

    def test_inviscid_conservation(
        self, curved_mesh, curved_ops, tgv_case, inviscid_controls, initial_flow
    ):
        """Test kinetic energy, total vorticity and mass are conserved without viscosity."""
        state = initial_flow(tgv_case, curved_mesh, curved_ops, inviscid_controls)
        first = conserved_quantities(state, curved_mesh, curved_ops)
        trajectory = run(state, inviscid_controls, curved_mesh, curved_ops, 0.05)
        final = trajectory.final
        last = conserved_quantities(final, curved_mesh, curved_ops)
        assert abs(last.K - first.K) / first.K < 1e-10
        assert abs(last.W - first.W) < 1e-11
        assert final.divergence_residual(curved_mesh) < 1e-10

    def test_viscous_decay(self, tgv_case, tgv_controls, initial_flow):
        """Test Taylor-Green energy decays at close to 4 pi^2 / Re."""
        mesh = build_mesh(MeshSpec(N=4, p=3))
        ops = assemble_operators(mesh)
        state = initial_flow(tgv_case, mesh, ops, tgv_controls)
        k0 = conserved_quantities(state, mesh, ops).K
        final = run(state, tgv_controls, mesh, ops, 0.2).final
        k1 = conserved_quantities(final, mesh, ops).K
        rate = -math.log(k1 / k0) / 0.2
        assert rate == pytest.approx(4.0 * math.pi**2 / 100.0, rel=0.05)
