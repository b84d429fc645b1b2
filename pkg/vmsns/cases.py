"""
Benchmark cases, snapshot files and the reference-projection workflow.

Two benchmarks are provided: the decaying Taylor-Green vortex on ]-1, 1[^2
(exact solution known for all t) and the inviscid double shear-layer roll-up
on ]0, 2 pi[^2 (initial condition only). Reference runs are stored as
snapshot files and projected onto nested coarse meshes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Protocol, Union

import numpy as np

from .assembly import Array, DiscreteField, FieldSample, PointSet, quadrature_points
from .exceptions import ConfigurationError, SnapshotError, SnapshotFormatError
from .mesh import Domain, Mesh, MeshSpec, build_mesh
from .stokes import ProjectionResult, ProjectorParams, apply_projector
from .timestepper import FlowState
from .vms import build_embeddings

logger = logging.getLogger(__name__)

SNAPSHOT_MAGIC = "vmsns-snapshot v1"
SNAPSHOT_SUFFIX = ".vmsnap"

TGV_DOMAIN: Domain = (-1.0, 1.0, -1.0, 1.0)
ROLLUP_DOMAIN: Domain = (0.0, 2.0 * math.pi, 0.0, 2.0 * math.pi)


class ExactFields(NamedTuple):
    """Pointwise fields of an analytic solution; pressure is static."""

    u_x: Array
    u_y: Array
    omega: Array
    curl_x: Array
    curl_y: Array
    div_u: Array
    p: Optional[Array] = None


class AnalyticCase(Protocol):
    name: str
    domain: Domain
    reynolds: float

    def fields(self, x: Array, y: Array, t: float) -> ExactFields: ...


@dataclass(frozen=True)
class TGVCase:
    """Decaying Taylor-Green vortex; velocity and vorticity decay as exp(-2 pi^2 t / Re)."""

    reynolds: float = 100.0
    name: str = field(default="tgv", init=False)
    domain: Domain = field(default=TGV_DOMAIN, init=False)

    def decay(self, t: float) -> float:
        return math.exp(-2.0 * math.pi**2 * t / self.reynolds)

    def fields(self, x: Array, y: Array, t: float) -> ExactFields:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        f = self.decay(t)
        sx, cx = np.sin(np.pi * x), np.cos(np.pi * x)
        sy, cy = np.sin(np.pi * y), np.cos(np.pi * y)
        two_pi2 = 2.0 * np.pi**2
        return ExactFields(
            u_x=-sx * cy * f,
            u_y=cx * sy * f,
            omega=-2.0 * np.pi * sx * sy * f,
            curl_x=-two_pi2 * sx * cy * f,
            curl_y=two_pi2 * cx * sy * f,
            div_u=np.zeros_like(x),
            p=0.25 * (np.cos(2.0 * np.pi * x) + np.cos(2.0 * np.pi * y)) * f * f,
        )


def tgv_exact(case: TGVCase, x: Array, y: Array, t: float) -> ExactFields:
    """Exact Taylor-Green fields (static pressure) at (x, y, t)."""
    return case.fields(x, y, t)


@dataclass(frozen=True)
class RollupCase:
    """
    Inviscid double shear layer with a sinusoidal vertical perturbation.

    delta is the shear-layer thickness and epsilon the perturbation amplitude.
    Only the initial condition is known; fields() ignores t.
    """

    delta: float = math.pi / 15.0
    epsilon: float = 0.05
    reynolds: float = math.inf
    name: str = field(default="rollup", init=False)
    domain: Domain = field(default=ROLLUP_DOMAIN, init=False)

    def _layer(self, y: Array) -> tuple[Array, Array]:
        """Shear-layer argument s and dy/ds sign for the branch containing y."""
        lower = y <= np.pi
        s = np.where(lower, (y - 0.5 * np.pi) / self.delta, (1.5 * np.pi - y) / self.delta)
        return s, np.where(lower, 1.0, -1.0)

    def fields(self, x: Array, y: Array, t: float = 0.0) -> ExactFields:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        s, sign = self._layer(y)
        sech2 = 1.0 / np.cosh(s) ** 2
        d = self.delta
        return ExactFields(
            u_x=np.tanh(s),
            u_y=self.epsilon * np.sin(x),
            omega=self.epsilon * np.cos(x) - sign * sech2 / d,
            curl_x=2.0 * sech2 * np.tanh(s) / d**2,
            curl_y=self.epsilon * np.sin(x),
            div_u=np.zeros_like(x),
        )


def rollup_ic(case: RollupCase, x: Array, y: Array) -> tuple[Array, Array]:
    """Initial velocity (u_x, u_y) of the roll-up."""
    fields = case.fields(x, y)
    return fields.u_x, fields.u_y


@dataclass(frozen=True)
class AnalyticReference:
    """
    Field source for an analytic case at time t.

    pressure_time is where the pressure is taken (t - dt/2 for states out of
    a Crank-Nicolson step); the Bernoulli pressure uses the velocity at that
    time.
    """

    case: AnalyticCase
    t: float
    pressure_time: Optional[float] = None

    def sample(self, points: PointSet) -> FieldSample:
        x, y, _, _ = points.geometry()
        values = self.case.fields(x, y, self.t)
        static = total = None
        t_p = self.t if self.pressure_time is None else self.pressure_time
        at_p = values if t_p == self.t else self.case.fields(x, y, t_p)
        if at_p.p is not None:
            static = at_p.p
            total = at_p.p + 0.5 * (at_p.u_x**2 + at_p.u_y**2)
        return FieldSample(
            x=x,
            y=y,
            omega=values.omega,
            u=np.stack([values.u_x, values.u_y], axis=-1),
            curl_omega=np.stack([values.curl_x, values.curl_y], axis=-1),
            div_u=values.div_u,
            pressure=total,
            static_pressure=static,
        )


@dataclass(frozen=True)
class Snapshot:
    """Raw coefficient vectors of a state with the mesh they live on."""

    spec: MeshSpec
    state: FlowState
    config_hash: str = ""

    @property
    def t(self) -> float:
        return self.state.t


def _format_value(value: float) -> str:
    return "%.17g" % value


def write_snapshot(path: Union[str, Path], snapshot: Snapshot) -> Path:
    """
    Write a snapshot in the versioned text format.

    Raises:
        SnapshotError: If the file cannot be written
    """
    path = Path(path)
    spec = snapshot.spec
    state = snapshot.state
    lines = [
        SNAPSHOT_MAGIC,
        f"N = {spec.N}",
        f"p = {spec.p}",
        f"mapping = {spec.mapping}",
        f"amplitude = {_format_value(spec.amplitude)}",
        "domain = " + ",".join(_format_value(v) for v in spec.domain),
        f"t = {_format_value(state.t)}",
        f"config_hash = {snapshot.config_hash}",
    ]
    for name, vector in (("omega", state.omega), ("u", state.u), ("P", state.P)):
        lines.append(f"{name} {vector.size}")
        lines.extend(_format_value(v) for v in vector)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as err:
        raise SnapshotError(f"Cannot write snapshot: {err}", path=str(path)) from err
    logger.info("Wrote snapshot t=%g to %s", state.t, path)
    return path


_HEADER_KEYS = ("N", "p", "mapping", "amplitude", "domain", "t", "config_hash")


def read_snapshot(path: Union[str, Path]) -> Snapshot:
    """
    Read a snapshot file.

    Raises:
        SnapshotFormatError: On a wrong version line, a malformed header or a
            truncated coefficient block (with the offending line number)
        SnapshotError: If the file cannot be read
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as err:
        raise SnapshotError(f"Cannot read snapshot: {err}", path=str(path)) from err

    if not lines or lines[0].strip() != SNAPSHOT_MAGIC:
        raise SnapshotFormatError(f"Expected '{SNAPSHOT_MAGIC}'", path=str(path), line=1)

    header: dict[str, str] = {}
    for offset, key in enumerate(_HEADER_KEYS, start=1):
        if offset >= len(lines):
            raise SnapshotFormatError("Truncated header", path=str(path), line=offset + 1)
        name, sep, value = lines[offset].partition("=")
        if not sep or name.strip() != key:
            raise SnapshotFormatError(
                f"Expected header key '{key}'", path=str(path), line=offset + 1
            )
        header[key] = value.strip()

    cursor = len(_HEADER_KEYS) + 1
    vectors: dict[str, Array] = {}
    try:
        spec = MeshSpec(
            N=int(header["N"]),
            p=int(header["p"]),
            mapping=header["mapping"],
            amplitude=float(header["amplitude"]),
            domain=tuple(float(v) for v in header["domain"].split(",")),  # type: ignore[arg-type]
        )
        t = float(header["t"])
        for name in ("omega", "u", "P"):
            if cursor >= len(lines):
                raise SnapshotFormatError(
                    f"Missing block '{name}'", path=str(path), line=cursor + 1
                )
            label, _, count = lines[cursor].partition(" ")
            if label != name:
                raise SnapshotFormatError(
                    f"Expected block '{name}'", path=str(path), line=cursor + 1
                )
            n = int(count)
            block = lines[cursor + 1 : cursor + 1 + n]
            if len(block) != n:
                raise SnapshotFormatError(
                    f"Block '{name}' truncated", path=str(path), line=len(lines)
                )
            vectors[name] = np.array([float(v) for v in block])
            cursor += n + 1
    except SnapshotFormatError:
        raise
    except ConfigurationError as err:
        raise SnapshotFormatError(
            f"Invalid mesh header: {err}", path=str(path), line=len(_HEADER_KEYS)
        ) from err
    except ValueError as err:
        raise SnapshotFormatError(
            f"Malformed value: {err}", path=str(path), line=cursor + 1
        ) from err

    cells = spec.N**2 * spec.p**2
    for name, expected in (("omega", cells), ("u", 2 * cells), ("P", cells)):
        if vectors[name].size != expected:
            raise SnapshotFormatError(
                f"Block '{name}' has {vectors[name].size} values, mesh needs {expected}",
                path=str(path),
            )
    state = FlowState(vectors["omega"], vectors["u"], vectors["P"], t)
    return Snapshot(spec=spec, state=state, config_hash=header["config_hash"])


@dataclass(frozen=True)
class ReferenceRun:
    """Snapshots of one reference run, keyed by time."""

    spec: MeshSpec
    snapshots: dict[float, Snapshot]
    config_hash: str = ""

    @classmethod
    def load(cls, paths: Iterable[Union[str, Path]]) -> ReferenceRun:
        """
        Read snapshot files that belong to the same run.

        Raises:
            SnapshotError: If the files disagree on the mesh or none are given
        """
        files = list(paths)
        if not files:
            raise SnapshotError("No snapshot files given")
        snapshots = [read_snapshot(p) for p in files]
        spec = snapshots[0].spec
        for snap, p in zip(snapshots, files):
            if snap.spec != spec:
                raise SnapshotError("Snapshot mesh differs from the run's mesh", path=str(p))
        return cls(spec, {s.t: s for s in snapshots}, snapshots[0].config_hash)

    def at(self, t: float) -> Snapshot:
        """
        Raises:
            SnapshotError: If no snapshot was stored within 1e-9 of t
        """
        for time, snap in self.snapshots.items():
            if abs(time - t) <= 1e-9 * max(1.0, abs(t)):
                return snap
        available = ", ".join(f"{k:g}" for k in sorted(self.snapshots))
        raise SnapshotError(f"No snapshot at t={t:g} (available: {available})")


@dataclass(frozen=True)
class ReferenceProjection:
    """Coarse projection of a reference state and the exact unresolved remainder."""

    coarse_mesh: Mesh
    reference_mesh: Mesh
    projection: FlowState
    unresolved: FlowState
    result: ProjectionResult = field(repr=False)

    def projection_field(self) -> DiscreteField:
        p = self.projection
        return DiscreteField(self.coarse_mesh, p.omega, p.u, p.P)

    def unresolved_field(self) -> DiscreteField:
        r = self.unresolved
        return DiscreteField(self.reference_mesh, r.omega, r.u, r.P)


def composite_points(spec: MeshSpec) -> PointSet:
    """GLL(p + 3) points on every element of a reference mesh."""
    return quadrature_points(spec, spec.p + 3)


def project_reference(
    snapshot: Snapshot,
    coarse: Union[Mesh, MeshSpec],
    params: ProjectorParams,
    reference_mesh: Optional[Mesh] = None,
) -> ReferenceProjection:
    """
    Project a reference state onto a nested coarse mesh.

    Inner products are integrated element by element over the reference mesh.

    Args:
        snapshot: Reference state
        coarse: Coarse mesh (or its spec)
        params: Projector weights
        reference_mesh: Prebuilt mesh of the snapshot, if available

    Returns:
        ReferenceProjection with unresolved = reference - embedded projection

    Raises:
        NestingError: If the reference mesh is not nested in the coarse mesh
    """
    coarse_mesh = coarse if isinstance(coarse, Mesh) else build_mesh(coarse)
    ref_mesh = reference_mesh or build_mesh(snapshot.spec)
    embeddings = build_embeddings(coarse_mesh, ref_mesh)
    state = snapshot.state
    reference = DiscreteField(ref_mesh, state.omega, state.u, state.P)
    result = apply_projector(params, coarse_mesh, reference, composite_points(ref_mesh.spec))

    projection = FlowState(result.omega, result.u, result.P, state.t)
    unresolved = FlowState(
        state.omega - embeddings.embed0 @ result.omega,
        state.u - embeddings.embed1 @ result.u,
        state.P - embeddings.embed2 @ result.P,
        state.t,
    )
    logger.info(
        "Projected reference N=%d p=%d onto N=%d p=%d at t=%g",
        ref_mesh.N,
        ref_mesh.p,
        coarse_mesh.N,
        coarse_mesh.p,
        state.t,
    )
    return ReferenceProjection(coarse_mesh, ref_mesh, projection, unresolved, result)
