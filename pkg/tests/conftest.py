"""Shared fixtures for vmsns tests."""

import math

import numpy as np
import pytest

from vmsns import (
    AnalyticReference,
    FlowState,
    MeshSpec,
    RollupCase,
    StepControls,
    TGVCase,
    apply_projector,
    assemble_operators,
    build_mesh,
)
from vmsns.assembly import discrete_vorticity
from vmsns.cases import ROLLUP_DOMAIN


@pytest.fixture
def small_spec() -> MeshSpec:
    """Orthogonal 2x2 mesh of degree 2 on [-1, 1]^2."""
    return MeshSpec(N=2, p=2)


@pytest.fixture
def curved_spec() -> MeshSpec:
    """Curvilinear 2x2 mesh of degree 3 with amplitude 0.1."""
    return MeshSpec(N=2, p=3, mapping="curvilinear", amplitude=0.1)


@pytest.fixture
def small_mesh(small_spec):
    """Built orthogonal mesh."""
    return build_mesh(small_spec)


@pytest.fixture
def small_ops(small_mesh):
    """Equal-order operators of the orthogonal mesh."""
    return assemble_operators(small_mesh)


@pytest.fixture
def curved_mesh(curved_spec):
    """Built curvilinear mesh."""
    return build_mesh(curved_spec)


@pytest.fixture
def curved_ops(curved_mesh):
    """Equal-order operators of the curvilinear mesh."""
    return assemble_operators(curved_mesh)


@pytest.fixture
def rollup_spec() -> MeshSpec:
    """Orthogonal 2x2 mesh on the roll-up domain [0, 2 pi]^2."""
    return MeshSpec(N=2, p=2, domain=ROLLUP_DOMAIN)


@pytest.fixture
def tgv_case() -> TGVCase:
    """Taylor-Green vortex at Re = 100."""
    return TGVCase(reynolds=100.0)


@pytest.fixture
def rollup_case() -> RollupCase:
    """Double shear layer with the benchmark thickness and perturbation."""
    return RollupCase(delta=math.pi / 15.0, epsilon=0.05)


@pytest.fixture
def tgv_controls() -> StepControls:
    """Viscous step controls of the Taylor-Green benchmark."""
    return StepControls(dt=0.04, reynolds=100.0)


@pytest.fixture
def inviscid_controls() -> StepControls:
    """Inviscid step controls."""
    return StepControls(dt=0.01, reynolds=math.inf)


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded random generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def config_file(tmp_path):
    """Write a config file from text and return its path."""

    def write(text: str, name: str = "run.cfg"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return write


@pytest.fixture
def initial_flow():
    """Projected analytic initial state with the discrete curl as vorticity."""

    def make(case, mesh, ops, controls, t=0.0):
        result = apply_projector(
            controls.projector_params(), mesh, AnalyticReference(case, t)
        )
        return FlowState(discrete_vorticity(ops, result.u), result.u, result.P, t)

    return make
