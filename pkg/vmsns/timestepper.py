"""
Crank-Nicolson Galerkin stepper with Picard iteration on the convection term.

Each step solves for (omega_{n+1}, u_{n+1}, P_{n+1/2}) with the projector
weights (1/(2 Re), 1/dt); the left-hand side is constant, so one
factorization serves every Picard sweep of every step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Protocol, Sequence

import numpy as np

from .assembly import Array, OperatorSet, convect
from .exceptions import (
    ConfigurationError,
    DimensionMismatchError,
    LinearSolveError,
    NonConvergenceError,
)
from .mesh import Mesh
from .stokes import ProjectorParams, SaddleSolver, build_saddle_matrix
from .validation import DEFAULT_PICARD_MAX, DEFAULT_PICARD_TOL, check_step_controls

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FlowState:
    """
    Coefficients (omega, u, P) at time t.

    P is the Bernoulli pressure at the midpoint of the step that produced the
    state; u_mid is that step's midpoint velocity (None for initial states).
    """

    omega: Array
    u: Array
    P: Array
    t: float = 0.0
    u_mid: Optional[Array] = field(default=None, repr=False)

    @classmethod
    def zeros(cls, mesh: Mesh, t: float = 0.0) -> FlowState:
        return cls(np.zeros(mesh.dim0), np.zeros(mesh.dim1), np.zeros(mesh.dim2), t)

    def check_dimensions(self, mesh: Mesh) -> None:
        """
        Raises:
            DimensionMismatchError: If a coefficient vector does not fit the mesh
        """
        for name, vector, dim in (
            ("omega", self.omega, mesh.dim0),
            ("u", self.u, mesh.dim1),
            ("P", self.P, mesh.dim2),
        ):
            if vector.shape != (dim,):
                raise DimensionMismatchError(name, dim, int(vector.size))

    def divergence_residual(self, mesh: Mesh) -> float:
        return float(np.max(np.abs(mesh.E_div @ self.u), initial=0.0))


@dataclass(frozen=True)
class StepControls:
    """Time step, Reynolds number (math.inf for inviscid) and Picard controls."""

    dt: float
    reynolds: float = math.inf
    picard_tol: float = DEFAULT_PICARD_TOL
    picard_max: int = DEFAULT_PICARD_MAX

    def __post_init__(self) -> None:
        check_step_controls(self.dt, self.reynolds, self.picard_tol, self.picard_max)

    @property
    def inviscid(self) -> bool:
        return math.isinf(self.reynolds)

    @property
    def viscosity(self) -> float:
        return 0.0 if self.inviscid else 1.0 / self.reynolds

    def projector_params(self) -> ProjectorParams:
        return ProjectorParams.navier_stokes(self.reynolds, self.dt)

    def picard_converged(self, update: float, size: float) -> bool:
        """
        Picard stop rule on the L2 norm of the combined update.

        Absolute (update <= picard_tol) while the iterate norm is at most one,
        relative to the iterate norm above that.
        """
        return update <= self.picard_tol * max(1.0, size)


class Stepper(Protocol):
    """One time step of a scheme; returns the new state and its Picard count."""

    def step(self, state: Any, step_index: Optional[int] = None) -> tuple[Any, int]: ...


class CrankNicolsonStepper:
    """Galerkin Crank-Nicolson stepper on one mesh."""

    def __init__(self, mesh: Mesh, ops: OperatorSet, controls: StepControls):
        """
        Assemble and factorize the constant step matrix.

        Args:
            mesh: Mesh of the operators
            ops: Solver-tier operators
            controls: Step controls
        """
        self.mesh = mesh
        self.ops = ops
        self.controls = controls
        self.params = controls.projector_params()
        self.system = build_saddle_matrix(ops, self.params)
        self.solver = SaddleSolver(self.system.matrix)

    def update_norm(self, d_omega: Array, d_u: Array) -> float:
        return math.sqrt(
            max(float(d_omega @ (self.ops.M0 @ d_omega) + d_u @ (self.ops.M1 @ d_u)), 0.0)
        )

    def step(self, state: FlowState, step_index: Optional[int] = None) -> tuple[FlowState, int]:
        """
        Advance one step.

        Returns:
            (new state, number of Picard iterations)

        Raises:
            NonConvergenceError: If Picard exceeds picard_max iterations
        """
        state.check_dimensions(self.mesh)
        layout = self.system.layout
        a, m = self.params.a_curl, self.params.a_mass
        base = -m * (self.ops.M1 @ state.u)
        if a > 0.0:
            base = base + a * (self.ops.Wcurl.T @ state.omega)
        omega, u = state.omega, state.u
        P = state.P
        update = math.inf
        for iteration in range(1, self.controls.picard_max + 1):
            omega_mid = 0.5 * (omega + state.omega)
            u_mid = 0.5 * (u + state.u)
            rhs = layout.pack(u=base + convect(self.ops.convection, u_mid, omega_mid))
            new_omega, new_u, P = layout.unpack(self.solver.solve(rhs))
            update = self.update_norm(new_omega - omega, new_u - u)
            omega, u = new_omega, new_u
            logger.debug("Picard %d: update %.3e", iteration, update)
            if self.controls.picard_converged(update, self.update_norm(omega, u)):
                return (
                    FlowState(omega, u, P, state.t + self.controls.dt, 0.5 * (u + state.u)),
                    iteration,
                )
        raise NonConvergenceError(self.controls.picard_max, update, step_index)


def step_galerkin(
    state: FlowState, controls: StepControls, mesh: Mesh, ops: OperatorSet
) -> tuple[FlowState, int]:
    """Single Galerkin step; builds a stepper for one use."""
    return CrankNicolsonStepper(mesh, ops, controls).step(state)


Observer = Callable[[int, Any, Any, int], None]


@dataclass
class Trajectory:
    """Result of a run: final state, step count and per-step Picard counts."""

    initial: Any
    final: Any
    steps: int
    picard_iterations: list[int] = field(default_factory=list)


def count_steps(t0: float, t_final: float, dt: float) -> int:
    """
    Number of steps m with t_final = t0 + m dt.

    Raises:
        ConfigurationError: If t_final is not reached by whole steps
    """
    span = t_final - t0
    steps = int(round(span / dt))
    if steps < 0 or abs(steps * dt - span) > 1e-9 * max(1.0, abs(t_final)):
        raise ConfigurationError(
            f"t_final={t_final} is not t0={t0} plus a whole number of dt={dt}", key="t_final"
        )
    return steps


def run(
    ic: Any,
    controls: StepControls,
    mesh: Mesh,
    ops: Optional[OperatorSet],
    t_final: float,
    observers: Sequence[Observer] = (),
    stepper: Optional[Stepper] = None,
) -> Trajectory:
    """
    Advance an initial state to t_final.

    Args:
        ic: Initial FlowState (or SplitState with a VMS stepper)
        controls: Step controls
        mesh: Mesh of the state
        ops: Solver operators (used when no stepper is given)
        t_final: Final time; must be t0 + m dt
        observers: Callbacks observer(step, previous, current, picard_iters)
        stepper: Scheme to use; Galerkin Crank-Nicolson by default

    Returns:
        Trajectory

    Raises:
        NonConvergenceError: Carrying the failing step index
        LinearSolveError: Naming the failing step
    """
    steps = count_steps(ic.t, t_final, controls.dt)
    if stepper is None:
        if ops is None:
            raise ConfigurationError("run needs operators or a stepper")
        stepper = CrankNicolsonStepper(mesh, ops, controls)

    logger.info("Running %d steps of dt=%g from t=%g", steps, controls.dt, ic.t)
    state = ic
    counts: list[int] = []
    for n in range(1, steps + 1):
        try:
            new_state, iterations = stepper.step(state, n)
        except NonConvergenceError as err:
            if err.step is None:
                raise NonConvergenceError(err.iterations, err.update_norm, n) from err
            raise
        except LinearSolveError as err:
            raise LinearSolveError(f"Linear solve failed at step {n}", err.residual) from err
        counts.append(iterations)
        for observer in observers:
            observer(n, state, new_state, iterations)
        state = new_state
    logger.info("Run finished at t=%g (max Picard %d)", state.t, max(counts, default=0))
    return Trajectory(initial=ic, final=state, steps=steps, picard_iterations=counts)
