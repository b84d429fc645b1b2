"""
Run configuration: flat `key = value` files with command-line overrides.

Unknown keys, malformed lines, type mismatches and constraint violations all
raise ConfigurationError naming the key and, for file values, the line.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional, Union

from .exceptions import ConfigurationError
from .mesh import Domain, MeshSpec
from .validation import (
    DEFAULT_PICARD_MAX,
    DEFAULT_PICARD_TOL,
    ERROR_QUADRATURE_DEGREE,
    MAPPINGS,
    validate_degree,
    validate_mesh_spec,
    validate_projector_params,
    validate_quadrature_degree,
    validate_step_controls,
)

logger = logging.getLogger(__name__)

CASES = ("tgv", "rollup")
MODES = ("galerkin", "vms", "project-only")
SWEEP_MODES = ("galerkin", "projection", "vms")
STUDIES = ("h", "k")
INITIAL_PROJECTIONS = ("ns", "l2")

DOMAINS: dict[str, Domain] = {
    "tgv": (-1.0, 1.0, -1.0, 1.0),
    "rollup": (0.0, 2.0 * math.pi, 0.0, 2.0 * math.pi),
}


@dataclass(frozen=True)
class RunConfig:
    """Validated parameters of one run or sweep."""

    case: str = "tgv"
    mode: str = "galerkin"
    N: int = 4
    p: int = 3
    k: int = 1
    mapping: str = "curvilinear"
    amplitude: float = 0.1
    Re: float = 100.0
    dt: float = 0.04
    t_final: float = 1.0
    output_dir: str = "results"
    picard_tol: float = DEFAULT_PICARD_TOL
    picard_max: int = DEFAULT_PICARD_MAX
    quadrature_degree: Optional[int] = None
    error_quadrature: int = ERROR_QUADRATURE_DEGREE
    initial_projection: str = "ns"
    study: str = "h"
    N_list: tuple[int, ...] = (2, 4, 8)
    k_list: tuple[int, ...] = (1, 2, 3, 4)
    modes: tuple[str, ...] = SWEEP_MODES
    dump_times: tuple[float, ...] = ()
    dump_density: int = 5
    snapshot_times: tuple[float, ...] = ()
    reference: Optional[str] = None
    projector_a_curl: Optional[float] = None
    projector_a_mass: Optional[float] = None

    @property
    def domain(self) -> Domain:
        return DOMAINS[self.case]

    @property
    def inviscid(self) -> bool:
        return math.isinf(self.Re)

    def mesh_spec(self, N: Optional[int] = None, p: Optional[int] = None) -> MeshSpec:
        return MeshSpec(
            N=self.N if N is None else N,
            p=self.p if p is None else p,
            mapping=self.mapping,
            amplitude=self.amplitude,
            domain=self.domain,
        )

    def canonical(self) -> str:
        """Sorted `key = value` rendering; the basis of config_hash."""
        return "\n".join(
            f"{f.name} = {format_value(getattr(self, f.name))}"
            for f in sorted(fields(self), key=lambda f: f.name)
        )

    def as_dict(self) -> dict[str, Any]:
        return {f.name: _jsonable(getattr(self, f.name)) for f in fields(self)}


CASE_DEFAULTS: dict[str, dict[str, Any]] = {
    "tgv": {
        "Re": 100.0,
        "dt": 0.04,
        "t_final": 1.0,
        "N": 4,
        "p": 3,
        "k": 1,
        "mapping": "curvilinear",
        "amplitude": 0.1,
        "N_list": (2, 4, 8),
        "k_list": (1, 2, 3, 4),
        "modes": SWEEP_MODES,
    },
    "rollup": {
        "Re": math.inf,
        "dt": 0.01,
        "t_final": 1.0,
        "N": 8,
        "p": 2,
        "k": 2,
        "mapping": "orthogonal",
        "amplitude": 0.0,
        "N_list": (8,),
        "k_list": (2,),
        "modes": ("galerkin", "vms"),
    },
}


def format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return "inf" if math.isinf(value) else repr(value)
    return str(value)


def _jsonable(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return value


def _to_int(text: str) -> int:
    return int(text)


def _to_float(text: str) -> float:
    lowered = text.lower()
    if lowered in ("inf", "infinity"):
        return math.inf
    value = float(text)
    if math.isnan(value):
        raise ValueError("nan is not allowed")
    return value


def _choice(options: tuple[str, ...]) -> Callable[[str], str]:
    def convert(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text

    return convert


def _optional(convert: Callable[[str], Any]) -> Callable[[str], Any]:
    def wrapped(text: str) -> Any:
        return None if text.lower() in ("none", "") else convert(text)

    return wrapped


def _list(convert: Callable[[str], Any]) -> Callable[[str], tuple[Any, ...]]:
    def wrapped(text: str) -> tuple[Any, ...]:
        items = [item.strip() for item in text.split(",")]
        return tuple(convert(item) for item in items if item)

    return wrapped


CONVERTERS: dict[str, Callable[[str], Any]] = {
    "case": _choice(CASES),
    "mode": _choice(MODES),
    "N": _to_int,
    "p": _to_int,
    "k": _to_int,
    "mapping": _choice(MAPPINGS),
    "amplitude": _to_float,
    "Re": _to_float,
    "dt": _to_float,
    "t_final": _to_float,
    "output_dir": str,
    "picard_tol": _to_float,
    "picard_max": _to_int,
    "quadrature_degree": _optional(_to_int),
    "error_quadrature": _to_int,
    "initial_projection": _choice(INITIAL_PROJECTIONS),
    "study": _choice(STUDIES),
    "N_list": _list(_to_int),
    "k_list": _list(_to_int),
    "modes": _list(_choice(SWEEP_MODES)),
    "dump_times": _list(_to_float),
    "dump_density": _to_int,
    "snapshot_times": _list(_to_float),
    "reference": _optional(str),
    "projector_a_curl": _optional(_to_float),
    "projector_a_mass": _optional(_to_float),
}

Overrides = Union[Mapping[str, str], Iterable[tuple[str, str]]]


def read_config_lines(path: Union[str, Path]) -> dict[str, tuple[str, int]]:
    """
    Raw `key = value` entries of a config file with their line numbers.

    Raises:
        ConfigurationError: On unreadable files, malformed lines, unknown or
            repeated keys
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as err:
        raise ConfigurationError(f"Cannot read config file {path}: {err}") from err

    entries: dict[str, tuple[str, int]] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigurationError(f"Expected 'key = value', got {raw.strip()!r}", line=number)
        if key not in CONVERTERS:
            raise ConfigurationError(f"Unknown key {key!r}", key=key, line=number)
        if key in entries:
            raise ConfigurationError(
                f"Key {key!r} repeated (first on line {entries[key][1]})", key=key, line=number
            )
        entries[key] = (value.strip(), number)
    return entries


def _raise_invalid(message: str, key: str, lines: Mapping[str, Optional[int]]) -> None:
    raise ConfigurationError(message, key=key, line=lines.get(key))


def _validate(config: RunConfig, lines: Mapping[str, Optional[int]]) -> None:
    ok, msg, key = validate_mesh_spec(
        config.N, config.p, config.mapping, config.amplitude, config.domain, True
    )
    if not ok:
        _raise_invalid(msg, key, lines)
    ok, msg = validate_degree(config.k, minimum=0)
    if not ok:
        _raise_invalid(f"k: {msg}", "k", lines)
    ok, msg, key = validate_step_controls(
        config.dt, config.Re, config.picard_tol, config.picard_max
    )
    if not ok:
        _raise_invalid(msg, key, lines)
    if not (math.isfinite(config.t_final) and config.t_final >= 0.0):
        _raise_invalid(f"t_final={config.t_final} must be finite and >= 0", "t_final", lines)
    if config.quadrature_degree is not None:
        ok, msg = validate_quadrature_degree(config.quadrature_degree, config.p)
        if not ok:
            _raise_invalid(msg, "quadrature_degree", lines)
    ok, msg = validate_degree(config.error_quadrature, minimum=config.p)
    if not ok:
        _raise_invalid(f"error_quadrature: {msg}", "error_quadrature", lines)
    ok, msg = validate_degree(config.dump_density, minimum=2)
    if not ok:
        _raise_invalid(f"dump_density: {msg}", "dump_density", lines)
    for n in config.N_list:
        if n < 1:
            _raise_invalid(f"N_list entry {n} must be >= 1", "N_list", lines)
    for k in config.k_list:
        if k < 0:
            _raise_invalid(f"k_list entry {k} must be >= 0", "k_list", lines)
    for key in ("dump_times", "snapshot_times"):
        for t in getattr(config, key):
            if not 0.0 <= t <= config.t_final + 1e-12:
                _raise_invalid(f"{key} entry {t} lies outside [0, t_final]", key, lines)
    if config.projector_a_curl is not None or config.projector_a_mass is not None:
        a_curl = config.projector_a_curl or 0.0
        a_mass = config.projector_a_mass or 0.0
        ok, msg = validate_projector_params(a_curl, a_mass)
        if not ok:
            key = "projector_a_curl" if config.projector_a_curl is not None else "projector_a_mass"
            _raise_invalid(msg, key, lines)


def parse_config(
    path: Optional[Union[str, Path]] = None, overrides: Optional[Overrides] = None
) -> RunConfig:
    """
    Build a validated RunConfig from a file and/or overrides.

    Defaults come from the case's benchmark settings; file values replace
    them and overrides replace file values.

    Args:
        path: Optional config file
        overrides: `key -> value` strings, e.g. from `--key value` flags

    Raises:
        ConfigurationError: Naming the offending key (and line for file values)
    """
    entries: dict[str, tuple[str, Optional[int]]] = {}
    if path is not None:
        entries.update(read_config_lines(path))
    pairs = overrides.items() if isinstance(overrides, Mapping) else (overrides or ())
    for key, value in pairs:
        if key not in CONVERTERS:
            raise ConfigurationError(f"Unknown key {key!r}", key=key)
        entries[key] = (str(value).strip(), None)

    lines = {key: line for key, (_, line) in entries.items()}
    values: dict[str, Any] = {}
    for key, (text, line) in entries.items():
        try:
            values[key] = CONVERTERS[key](text)
        except ValueError as err:
            raise ConfigurationError(f"Invalid value {text!r}: {err}", key=key, line=line) from err

    case = values.get("case", RunConfig.case)
    merged = {**CASE_DEFAULTS[case], **values}
    config = RunConfig(**merged)
    _validate(config, lines)
    logger.info("Configuration %s (hash %s)", config.case, config_hash(config)[:12])
    return config


def config_hash(config: RunConfig) -> str:
    """SHA-256 of the canonical rendering."""
    return hashlib.sha256(config.canonical().encode("utf-8")).hexdigest()
