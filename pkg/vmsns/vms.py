"""
Two-scale (variational multiscale) stepping on nested spaces.

The fine space has degree p + k on the same elements (or, for reference
projections, a finer nested mesh). Coarse coefficients are injected into the
fine space by exact embeddings: nodal interpolation for 0-forms,
histopolation over the fine edges for 1-forms and over the fine cells for
2-forms, so the embeddings commute with the incidence matrices.

With A the fine-space step matrix and E the block embedding, each Picard
sweep solves

    coarse:  E^T A E x_bar = E^T b
    fine:    [ A      A E ] [x'    ]   [b]
             [ E^T A  0   ] [lambda] = [0]

where the second row enforces orthogonality of the fine scales against every
coarse test function and b holds the total-field convection.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.linalg import block_diag
from scipy.sparse.linalg import splu

from .assembly import (
    Array,
    DiscreteField,
    OperatorSet,
    assemble_operators,
    convect,
)
from .basis import edge_integrals, gll_rule, nodal_values
from .exceptions import NonConvergenceError
from .mesh import Mesh, MeshSpec, build_mesh, nesting_ratio
from .stokes import BlockLayout, SaddleSolver, build_saddle_matrix
from .timestepper import CrankNicolsonStepper, FlowState, StepControls
from .validation import check_degree

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Embeddings:
    """Injections of coarse coefficient vectors into a nested fine space."""

    embed0: sp.csr_matrix
    embed1: sp.csr_matrix
    embed2: sp.csr_matrix


def _owned_masks(p: int) -> tuple[Array, Array, Array]:
    """Local DOFs an element owns (local index p along a direction belongs to the neighbour)."""
    b0, a0 = np.divmod(np.arange((p + 1) ** 2), p + 1)
    own0 = (a0 < p) & (b0 < p)
    _, aq = np.divmod(np.arange(p * (p + 1)), p + 1)
    br, _ = np.divmod(np.arange(p * (p + 1)), p)
    own1 = np.concatenate([aq < p, br < p])
    own2 = np.ones(p * p, dtype=bool)
    return own0, own1, own2


def build_embeddings(coarse: Mesh, fine: Mesh) -> Embeddings:
    """
    Exact embeddings of a coarse mesh's spaces into a nested fine mesh's spaces.

    Raises:
        NestingError: If the meshes are not nested
    """
    ratio = nesting_ratio(coarse.spec, fine.spec)
    pc, pf = coarse.p, fine.p
    nodes = gll_rule(pf).nodes
    interp = []
    histo = []
    for offset in range(ratio):
        zeta = -1.0 + 2.0 * (offset + 0.5 * (1.0 + nodes)) / ratio
        values, _ = nodal_values(pc, zeta)
        interp.append(values.T)
        histo.append(edge_integrals(pc, zeta[:-1], zeta[1:]).T)

    owned = _owned_masks(pf)
    fine_elements = np.arange(fine.n_elements)
    fx, fy = fine_elements % fine.N, fine_elements // fine.N
    coarse_of = (fy // ratio) * coarse.N + fx // ratio

    triplets: list[tuple[list[Array], list[Array], list[Array]]] = [([], [], []) for _ in range(3)]
    for oy in range(ratio):
        for ox in range(ratio):
            ix, iy = interp[ox], interp[oy]
            hx, hy = histo[ox], histo[oy]
            local = (
                np.kron(iy, ix),
                block_diag(np.kron(hy, ix), np.kron(iy, hx)),
                np.kron(hy, hx),
            )
            selected = fine_elements[(fx % ratio == ox) & (fy % ratio == oy)]
            for form, (table, fine_dofs, coarse_dofs) in enumerate(
                (
                    (local[0], fine.dofs0, coarse.dofs0),
                    (local[1], fine.dofs1, coarse.dofs1),
                    (local[2], fine.dofs2, coarse.dofs2),
                )
            ):
                rows_local = np.flatnonzero(owned[form])
                block = table[rows_local]
                rows = fine_dofs[selected][:, rows_local]
                cols = coarse_dofs[coarse_of[selected]]
                shape = rows.shape + (cols.shape[1],)
                triplets[form][0].append(np.broadcast_to(rows[:, :, None], shape).ravel())
                triplets[form][1].append(np.broadcast_to(cols[:, None, :], shape).ravel())
                triplets[form][2].append(np.broadcast_to(block, shape).ravel())

    dims = ((fine.dim0, coarse.dim0), (fine.dim1, coarse.dim1), (fine.dim2, coarse.dim2))
    matrices = []
    for (rows, cols, data), shape in zip(triplets, dims):
        matrix = sp.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=shape
        ).tocsr()
        matrix.eliminate_zeros()
        matrices.append(matrix)
    return Embeddings(*matrices)


@dataclass(frozen=True)
class ScalePair:
    """Coarse space of degree p and fine space of degree p + k on the same elements."""

    k: int
    coarse: Mesh
    fine: Mesh
    coarse_ops: OperatorSet
    fine_ops: OperatorSet
    embeddings: Embeddings

    @property
    def fine_layout(self) -> BlockLayout:
        return BlockLayout(self.fine.dim0, self.fine.dim1, self.fine.dim2)

    @property
    def coarse_layout(self) -> BlockLayout:
        return BlockLayout(self.coarse.dim0, self.coarse.dim1, self.coarse.dim2)

    def block_embedding(self) -> sp.csc_matrix:
        """Embedding of a coarse saddle vector (mean multiplier included)."""
        e = self.embeddings
        return sp.block_diag([e.embed0, e.embed1, e.embed2, sp.identity(1)], format="csc")

    def restricted_mass(self, form: int) -> sp.csr_matrix:
        """Fine-space mass matrix restricted to the embedded coarse space."""
        embed = (self.embeddings.embed0, self.embeddings.embed1, self.embeddings.embed2)[form]
        mass = (self.fine_ops.M0, self.fine_ops.M1, self.fine_ops.M2)[form]
        return (embed.T @ mass @ embed).tocsr()

    def embed(self, state: FlowState) -> FlowState:
        """Coarse state expressed in fine-space coefficients."""
        e = self.embeddings
        u_mid = None if state.u_mid is None else e.embed1 @ state.u_mid
        return FlowState(
            e.embed0 @ state.omega, e.embed1 @ state.u, e.embed2 @ state.P, state.t, u_mid
        )


def build_scale_pair(
    spec: MeshSpec, k: int, quadrature_degree: Optional[int] = None
) -> ScalePair:
    """
    Build the coarse/fine pair with fine degree p + k.

    Args:
        spec: Coarse mesh parameters
        k: Degree increment of the fine space (0 makes both spaces equal)
        quadrature_degree: Optional solver quadrature for both spaces (raised
            to the fine degree if lower)

    Raises:
        InvalidDegreeError: If k < 0
    """
    check_degree(k, minimum=0, key="k")
    coarse = build_mesh(spec)
    coarse_ops = assemble_operators(coarse, quadrature_degree)
    if k == 0:
        fine, fine_ops = coarse, coarse_ops
    else:
        fine = build_mesh(spec.with_degree(spec.p + k))
        fine_q = None if quadrature_degree is None else max(quadrature_degree, fine.p)
        fine_ops = assemble_operators(fine, fine_q)
    pair = ScalePair(
        k=k,
        coarse=coarse,
        fine=fine,
        coarse_ops=coarse_ops,
        fine_ops=fine_ops,
        embeddings=build_embeddings(coarse, fine),
    )
    logger.info("Scale pair N=%d p=%d k=%d (fine dim1=%d)", spec.N, spec.p, k, fine.dim1)
    return pair


@dataclass(frozen=True)
class SplitState:
    """
    Resolved (coarse) and unresolved (fine-space) components at one time.

    raw_pressure keeps the pressures returned by the two solves before the
    post-split, for auditing the orthogonality conditions.
    """

    coarse: FlowState
    fine: FlowState
    raw_pressure: Optional[tuple[Array, Array]] = field(default=None, repr=False)

    @property
    def t(self) -> float:
        return self.coarse.t

    def total(self, pair: ScalePair) -> FlowState:
        """Total fields embedded coarse + fine, in fine-space coefficients."""
        coarse = pair.embed(self.coarse)
        u_mid = None
        if coarse.u_mid is not None and self.fine.u_mid is not None:
            u_mid = coarse.u_mid + self.fine.u_mid
        return FlowState(
            coarse.omega + self.fine.omega,
            coarse.u + self.fine.u,
            coarse.P + self.fine.P,
            self.t,
            u_mid,
        )


@dataclass(frozen=True)
class FineScales:
    omega: Array
    u: Array
    P: Array


class FineScaleSolver:
    """Orthogonality-constrained fine-space solve (the approximate fine-scale Green's operator)."""

    def __init__(self, pair: ScalePair, controls: StepControls):
        """
        Assemble the fine step matrix and its bordered constrained form.

        Args:
            pair: Scale pair
            controls: Step controls defining the weights (1/(2 Re), 1/dt)
        """
        self.pair = pair
        self.params = controls.projector_params()
        self.system = build_saddle_matrix(pair.fine_ops, self.params)
        self.embedding = pair.block_embedding()
        matrix = self.system.matrix
        self.matrix_embedding = (matrix @ self.embedding).tocsc()
        self.coarse_matrix = (self.embedding.T @ self.matrix_embedding).tocsc()
        constraint = (self.embedding.T @ matrix).tocsc()
        bordered = sp.bmat([[matrix, self.matrix_embedding], [constraint, None]], format="csc")
        self.solver = SaddleSolver(bordered)

    @property
    def layout(self) -> BlockLayout:
        return self.system.layout

    def solve_vector(self, rhs: Array) -> Array:
        """Fine-scale saddle vector for a fine right-hand side."""
        n_coarse = self.embedding.shape[1]
        solution = self.solver.solve(np.concatenate([rhs, np.zeros(n_coarse)]))
        return solution[: self.layout.size]

    def solve(self, rhs: Array) -> FineScales:
        omega, u, P = self.layout.unpack(self.solve_vector(rhs))
        return FineScales(omega, u, P)


def fine_scale_solve(pair: ScalePair, controls: StepControls, rhs: Array) -> FineScales:
    """
    Fine scales driven by a fine-space right-hand side.

    Args:
        pair: Scale pair
        controls: Step controls
        rhs: Saddle right-hand side laid out as pair.fine_layout

    Returns:
        FineScales orthogonal to every coarse test function
    """
    return FineScaleSolver(pair, controls).solve(rhs)


class VmsStepper:
    """Coupled resolved/unresolved Crank-Nicolson stepper."""

    def __init__(self, pair: ScalePair, controls: StepControls):
        """
        Factorize the restricted coarse system and the constrained fine system.

        With k = 0 the stepper delegates to the Galerkin stepper.
        """
        self.pair = pair
        self.controls = controls
        self.params = controls.projector_params()
        self._galerkin: Optional[CrankNicolsonStepper] = None
        if pair.k == 0:
            self._galerkin = CrankNicolsonStepper(pair.coarse, pair.coarse_ops, controls)
            return
        self.fine_solver = FineScaleSolver(pair, controls)
        self.coarse_solver = SaddleSolver(self.fine_solver.coarse_matrix)
        self._restricted = (pair.restricted_mass(0), pair.restricted_mass(1))
        self._mass2 = splu(sp.csc_matrix(pair.restricted_mass(2)))

    def _norm(self, d_bar: tuple[Array, Array], d_fine: tuple[Array, Array]) -> float:
        m0r, m1r = self._restricted
        ops = self.pair.fine_ops
        total = (
            d_bar[0] @ (m0r @ d_bar[0])
            + d_bar[1] @ (m1r @ d_bar[1])
            + d_fine[0] @ (ops.M0 @ d_fine[0])
            + d_fine[1] @ (ops.M1 @ d_fine[1])
        )
        return math.sqrt(max(float(total), 0.0))

    def split(self, state: FlowState) -> SplitState:
        """
        Split a fine-space state into its projection and the remainder.

        The coarse part is the optimal projection computed with the fine-space
        forms; the remainder is orthogonal to every coarse test function.
        """
        pair = self.pair
        if self._galerkin is not None:
            zeros = FlowState.zeros(pair.fine, state.t)
            return SplitState(state, zeros, (state.P, zeros.P))
        layout = self.fine_solver.layout
        total = layout.pack(omega=state.omega, u=state.u)
        rhs = self.fine_solver.embedding.T @ (self.fine_solver.system.matrix @ total)
        coarse_vector = self.coarse_solver.solve(rhs)
        remainder = total - self.fine_solver.embedding @ coarse_vector
        omega_bar, u_bar, _ = pair.coarse_layout.unpack(coarse_vector)
        omega_f, u_f, _ = layout.unpack(remainder)
        coarse = FlowState(omega_bar, u_bar, np.zeros(pair.coarse.dim2), state.t)
        fine = FlowState(omega_f, u_f, np.zeros(pair.fine.dim2), state.t)
        return SplitState(coarse, fine, (coarse.P, fine.P))

    def step(self, state: SplitState, step_index: Optional[int] = None) -> tuple[SplitState, int]:
        """
        Advance both scales one step.

        Returns:
            (new split state, number of Picard iterations)

        Raises:
            NonConvergenceError: If Picard exceeds picard_max iterations
        """
        pair = self.pair
        if self._galerkin is not None:
            coarse, iterations = self._galerkin.step(state.coarse, step_index)
            zeros = FlowState.zeros(pair.fine, coarse.t)
            return SplitState(coarse, zeros, (coarse.P, zeros.P)), iterations

        e = pair.embeddings
        ops = pair.fine_ops
        layout = self.fine_solver.layout
        a, m = self.params.a_curl, self.params.a_mass
        omega_n = e.embed0 @ state.coarse.omega + state.fine.omega
        u_n = e.embed1 @ state.coarse.u + state.fine.u
        base = -m * (ops.M1 @ u_n)
        if a > 0.0:
            base = base + a * (ops.Wcurl.T @ omega_n)

        bar = (state.coarse.omega, state.coarse.u)
        prime = (state.fine.omega, state.fine.u)
        P_bar, P_prime = state.coarse.P, state.fine.P
        update = math.inf
        for iteration in range(1, self.controls.picard_max + 1):
            omega_mid = 0.5 * (e.embed0 @ bar[0] + prime[0] + omega_n)
            u_mid = 0.5 * (e.embed1 @ bar[1] + prime[1] + u_n)
            rhs = layout.pack(u=base + convect(ops.convection, u_mid, omega_mid))

            coarse_vector = self.coarse_solver.solve(self.fine_solver.embedding.T @ rhs)
            omega_bar, u_bar, P_bar = pair.coarse_layout.unpack(coarse_vector)
            omega_f, u_f, P_prime = layout.unpack(self.fine_solver.solve_vector(rhs))

            update = self._norm(
                (omega_bar - bar[0], u_bar - bar[1]), (omega_f - prime[0], u_f - prime[1])
            )
            bar, prime = (omega_bar, u_bar), (omega_f, u_f)
            logger.debug("VMS Picard %d: update %.3e", iteration, update)
            if self.controls.picard_converged(update, self._norm(bar, prime)):
                break
        else:
            raise NonConvergenceError(self.controls.picard_max, update, step_index)

        # pressure post-split: coarse part is the L2 projection of the total
        P_total = e.embed2 @ P_bar + P_prime
        P_split = self._mass2.solve(e.embed2.T @ (ops.M2 @ P_total))
        t = state.t + self.controls.dt
        coarse = FlowState(bar[0], bar[1], P_split, t, 0.5 * (bar[1] + state.coarse.u))
        fine = FlowState(
            prime[0], prime[1], P_total - e.embed2 @ P_split, t, 0.5 * (prime[1] + state.fine.u)
        )
        return SplitState(coarse, fine, (P_bar, P_prime)), iteration


def step_vms(
    state: SplitState, pair: ScalePair, controls: StepControls
) -> tuple[SplitState, int]:
    """Single VMS step; builds a stepper for one use."""
    return VmsStepper(pair, controls).step(state)


@dataclass(frozen=True)
class UnresolvedScales:
    """Fine-scale coefficients of a split state with an evaluable field."""

    omega: Array
    u: Array
    P: Array
    field: DiscreteField


def extract_unresolved(state: SplitState, pair: ScalePair) -> UnresolvedScales:
    fine = state.fine
    return UnresolvedScales(
        omega=fine.omega,
        u=fine.u,
        P=fine.P,
        field=DiscreteField(pair.fine, fine.omega, fine.u, fine.P),
    )
