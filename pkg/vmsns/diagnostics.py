"""
Conserved quantities, error norms and the discrete energy-balance audit.

All invariants are evaluated with the solver-tier operators, which are the
forms the schemes conserve exactly. Error norms use the high-order error
quadrature.
"""

from __future__ import annotations

import logging
import math
from dataclasses import astuple, dataclass, field, fields
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .assembly import Array, FieldSource, OperatorSet, PointSet, quadrature_points
from .exceptions import DimensionMismatchError, OutOfRangeError
from .mesh import Mesh
from .stokes import build_saddle_matrix
from .timestepper import FlowState, StepControls
from .validation import ERROR_QUADRATURE_DEGREE
from .vms import ScalePair, SplitState

logger = logging.getLogger(__name__)

CONSERVATION_HEADER = ("step", "t", "K_err_abs", "K_err_rel", "W_err_abs", "E_err_abs", "E_err_rel")

PRESSURE_KINDS = ("static", "total")

Space = Union[Mesh, ScalePair]


@dataclass(frozen=True)
class ConservedQuantities:
    """Kinetic energy, enstrophy, total vorticity and palinstrophy of one state."""

    K: float
    E: float
    W: float
    P_pal: float


@dataclass(frozen=True)
class DiagnosticsRecord:
    """One row of diag.csv (solver-tier values)."""

    step: int
    t: float
    K_total: float
    K_coarse: float
    K_fine: float
    E_total: float
    W_total: float
    P_pal: float
    div_res_coarse: float
    div_res_fine: float
    picard_iters: int
    energy_balance_res: float

    def row(self) -> tuple[Union[int, float], ...]:
        return astuple(self)


DIAG_HEADER = tuple(f.name for f in fields(DiagnosticsRecord))


class ErrorNorms(NamedTuple):
    """Vorticity (H(curl) seminorm), velocity (H(div)) and pressure (L2) errors."""

    omega: float
    u: float
    p: float


class OrthogonalityResiduals(NamedTuple):
    vorticity: float
    momentum: float
    divergence: float


def _energy(mass: sp.spmatrix, vector: Array) -> float:
    return 0.5 * float(vector @ (mass @ vector))


def conserved_quantities(state: FlowState, mesh: Mesh, ops: OperatorSet) -> ConservedQuantities:
    """
    Invariants of a single-space state.

    Raises:
        DimensionMismatchError: If the state does not fit the mesh
    """
    state.check_dimensions(mesh)
    curl = mesh.E_curl @ state.omega
    return ConservedQuantities(
        K=_energy(ops.M1, state.u),
        E=_energy(ops.M0, state.omega),
        W=float(np.sum(ops.M0 @ state.omega)),
        P_pal=_energy(ops.M1, curl),
    )


def _curl_pairing(ops: OperatorSet, u: Array, omega: Array) -> float:
    """Integral of u . curl(omega)."""
    return float(u @ (ops.M1 @ (ops.E_curl @ omega)))


def _check_same_space(previous: FlowState, current: FlowState) -> None:
    for name in ("omega", "u", "P"):
        a, b = getattr(previous, name), getattr(current, name)
        if a.shape != b.shape:
            raise DimensionMismatchError(name, int(a.size), int(b.size))


def energy_balance_audit(
    previous: Union[FlowState, SplitState],
    current: Union[FlowState, SplitState],
    controls: StepControls,
    space: Space,
    ops: Optional[OperatorSet] = None,
) -> float:
    """
    Residual of the discrete kinetic-energy balance over one step.

    Galerkin states (space a Mesh, ops required):
        (K_{n+1} - K_n) + dt/Re (u_mid, curl omega_mid)

    Split states (space a ScalePair): every term of the per-scale balance on
    the fine space, with U the embedded coarse velocity, so that

        dK_bar + dK' + dt/Re [(U_mid, curl W_mid) + (u'_mid, curl w'_mid)]
          = (U_mid, u'_n - u'_{n+1}) - dt/Re (U_mid, curl w'_mid)
          + (u'_mid, U_n - U_{n+1}) - dt/Re (u'_mid, curl W_mid)

    Returns:
        |LHS - RHS| divided by the total kinetic energy at step n (absolute
        when that energy is zero)

    Raises:
        DimensionMismatchError: If the states live on different spaces
    """
    nu_dt = controls.viscosity * controls.dt
    if isinstance(space, ScalePair):
        if not isinstance(previous, SplitState) or not isinstance(current, SplitState):
            raise TypeError("Scale-pair audits need split states")
        fine_ops = space.fine_ops
        e = space.embeddings
        _check_same_space(previous.coarse, current.coarse)
        _check_same_space(previous.fine, current.fine)
        U0, U1 = e.embed1 @ previous.coarse.u, e.embed1 @ current.coarse.u
        W0, W1 = e.embed0 @ previous.coarse.omega, e.embed0 @ current.coarse.omega
        u0, u1 = previous.fine.u, current.fine.u
        w0, w1 = previous.fine.omega, current.fine.omega
        U_mid, W_mid = 0.5 * (U0 + U1), 0.5 * (W0 + W1)
        u_mid, w_mid = 0.5 * (u0 + u1), 0.5 * (w0 + w1)
        M1 = fine_ops.M1

        lhs = (
            _energy(M1, U1)
            - _energy(M1, U0)
            + _energy(M1, u1)
            - _energy(M1, u0)
            + nu_dt * _curl_pairing(fine_ops, U_mid, W_mid)
            + nu_dt * _curl_pairing(fine_ops, u_mid, w_mid)
        )
        rhs = (
            float(U_mid @ (M1 @ (u0 - u1)))
            - nu_dt * _curl_pairing(fine_ops, U_mid, w_mid)
            + float(u_mid @ (M1 @ (U0 - U1)))
            - nu_dt * _curl_pairing(fine_ops, u_mid, W_mid)
        )
        scale = _energy(M1, U0 + u0)
    else:
        if ops is None:
            raise ValueError("Galerkin audits need the solver operators")
        if not isinstance(previous, FlowState) or not isinstance(current, FlowState):
            raise TypeError("Mesh audits need flow states")
        previous.check_dimensions(space)
        current.check_dimensions(space)
        u_mid = 0.5 * (previous.u + current.u)
        omega_mid = 0.5 * (previous.omega + current.omega)
        lhs = (
            _energy(ops.M1, current.u)
            - _energy(ops.M1, previous.u)
            + nu_dt * _curl_pairing(ops, u_mid, omega_mid)
        )
        rhs = 0.0
        scale = _energy(ops.M1, previous.u)

    residual = abs(lhs - rhs)
    return residual / scale if scale > 0.0 else residual


def error_norms(
    computed: FieldSource,
    reference: FieldSource,
    mesh: Mesh,
    points: Optional[PointSet] = None,
    pressure: str = "static",
) -> ErrorNorms:
    """
    Errors of a computed field against a reference.

    Args:
        computed: Discrete field
        reference: Exact solution or another discrete field
        mesh: Mesh whose elements carry the error quadrature
        points: Quadrature points (GLL(25) on mesh by default)
        pressure: "static" (p = P - |u|^2/2) or "total" (Bernoulli P)

    Returns:
        ErrorNorms; the pressure error compares mean-free differences and is
        nan when either side has no pressure
    """
    if pressure not in PRESSURE_KINDS:
        raise OutOfRangeError("pressure", pressure, " or ".join(PRESSURE_KINDS))
    if points is None:
        points = quadrature_points(mesh.spec, ERROR_QUADRATURE_DEGREE)
    weights = points.physical_weights()
    a = computed.sample(points)
    b = reference.sample(points)

    d_curl = a.curl_omega - b.curl_omega
    e_omega = math.sqrt(float(np.sum(weights * np.sum(d_curl**2, axis=-1))))
    d_u = a.u - b.u
    d_div = a.div_u - b.div_u
    e_u = math.sqrt(float(np.sum(weights * (np.sum(d_u**2, axis=-1) + d_div**2))))

    attr = "static_pressure" if pressure == "static" else "pressure"
    p_a, p_b = getattr(a, attr), getattr(b, attr)
    if p_a is None or p_b is None:
        e_p = math.nan
    else:
        d_p = p_a - p_b
        d_p = d_p - np.sum(weights * d_p) / np.sum(weights)
        e_p = math.sqrt(float(np.sum(weights * d_p**2)))
    return ErrorNorms(e_omega, e_u, e_p)


def decay_rate(records: Sequence[DiagnosticsRecord]) -> float:
    """
    Least-squares slope of log K_total against t.

    Raises:
        OutOfRangeError: With fewer than two records or a non-positive energy
    """
    if len(records) < 2:
        raise OutOfRangeError("records", len(records), ">= 2 records")
    t = np.array([r.t for r in records])
    energy = np.array([r.K_total for r in records])
    if np.any(energy <= 0.0):
        raise OutOfRangeError("K_total", float(energy.min()), "> 0")
    slope, _ = np.polyfit(t, np.log(energy), 1)
    return float(slope)


def observed_orders(h: Sequence[float], errors: Sequence[float]) -> Optional[float]:
    """Least-squares order of errors against h, None with fewer than 3 points."""
    if len(h) < 3:
        return None
    slope, _ = np.polyfit(np.log(np.asarray(h)), np.log(np.asarray(errors)), 1)
    return float(slope)


def local_orders(h: Sequence[float], errors: Sequence[float]) -> list[Optional[float]]:
    """Order between each resolution and the previous one (None for the first)."""
    orders: list[Optional[float]] = [None]
    for i in range(1, len(h)):
        if errors[i] <= 0.0 or errors[i - 1] <= 0.0:
            orders.append(None)
            continue
        orders.append(math.log(errors[i - 1] / errors[i]) / math.log(h[i - 1] / h[i]))
    return orders


def orthogonality_residuals(
    pair: ScalePair, state: SplitState, controls: StepControls
) -> OrthogonalityResiduals:
    """
    Residuals of E^T A x' = 0 for the fine scales of a split state.

    Each entry is the largest pairing of the fine-scale step operator with a
    coarse test function of the vorticity, momentum and divergence equations.
    The solver's raw fine pressure is used when the state carries it.
    """
    if pair.k == 0:
        return OrthogonalityResiduals(0.0, 0.0, 0.0)
    fine = state.fine
    P_fine = fine.P if state.raw_pressure is None else state.raw_pressure[1]
    system = build_saddle_matrix(pair.fine_ops, controls.projector_params())
    vector = system.layout.pack(omega=fine.omega, u=fine.u, P=P_fine)
    pairing = pair.block_embedding().T @ (system.matrix @ vector)
    layout = pair.coarse_layout
    return OrthogonalityResiduals(
        float(np.max(np.abs(pairing[layout.omega]))),
        float(np.max(np.abs(pairing[layout.u]))),
        float(np.max(np.abs(pairing[layout.P]))),
    )


@dataclass
class DiagnosticsRecorder:
    """
    Run observer producing one DiagnosticsRecord per step.

    Works for Galerkin runs (space a Mesh, ops given) and VMS runs (space a
    ScalePair); call start() with the initial state before running.
    """

    space: Space
    controls: StepControls
    ops: Optional[OperatorSet] = None
    audit: bool = True
    records: list[DiagnosticsRecord] = field(default_factory=list)

    def _record(
        self, step: int, state: Union[FlowState, SplitState], iterations: int, balance: float
    ) -> DiagnosticsRecord:
        if isinstance(self.space, ScalePair):
            pair = self.space
            if not isinstance(state, SplitState):
                raise TypeError("Scale-pair recorders need split states")
            total = conserved_quantities(state.total(pair), pair.fine, pair.fine_ops)
            k_coarse = _energy(pair.fine_ops.M1, pair.embeddings.embed1 @ state.coarse.u)
            k_fine = _energy(pair.fine_ops.M1, state.fine.u)
            div_coarse = state.coarse.divergence_residual(pair.coarse)
            div_fine = state.fine.divergence_residual(pair.fine)
        else:
            if self.ops is None or not isinstance(state, FlowState):
                raise TypeError("Mesh recorders need operators and flow states")
            total = conserved_quantities(state, self.space, self.ops)
            k_coarse, k_fine = total.K, 0.0
            div_coarse, div_fine = state.divergence_residual(self.space), 0.0
        record = DiagnosticsRecord(
            step=step,
            t=state.t,
            K_total=total.K,
            K_coarse=k_coarse,
            K_fine=k_fine,
            E_total=total.E,
            W_total=total.W,
            P_pal=total.P_pal,
            div_res_coarse=div_coarse,
            div_res_fine=div_fine,
            picard_iters=iterations,
            energy_balance_res=balance,
        )
        self.records.append(record)
        return record

    def start(self, state: Union[FlowState, SplitState]) -> DiagnosticsRecord:
        self.records.clear()
        return self._record(0, state, 0, 0.0)

    def __call__(
        self,
        step: int,
        previous: Union[FlowState, SplitState],
        current: Union[FlowState, SplitState],
        iterations: int,
    ) -> None:
        balance = 0.0
        if self.audit:
            balance = energy_balance_audit(previous, current, self.controls, self.space, self.ops)
        record = self._record(step, current, iterations, balance)
        logger.debug(
            "step %d t=%.6g K=%.16e W=%.3e balance=%.3e",
            step,
            record.t,
            record.K_total,
            record.W_total,
            balance,
        )


def conservation_drift(
    records: Sequence[DiagnosticsRecord],
) -> list[tuple[Union[int, float], ...]]:
    """Absolute and relative drift of K, W and E against the first record."""
    if not records:
        return []
    first = records[0]
    rows = []
    for r in records:
        k_abs = abs(r.K_total - first.K_total)
        e_abs = abs(r.E_total - first.E_total)
        rows.append(
            (
                r.step,
                r.t,
                k_abs,
                k_abs / first.K_total if first.K_total > 0.0 else k_abs,
                abs(r.W_total - first.W_total),
                e_abs,
                e_abs / first.E_total if first.E_total > 0.0 else e_abs,
            )
        )
    return rows
