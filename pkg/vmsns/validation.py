"""Validation utilities for vmsns."""

import math
from typing import Any, Sequence, Tuple

from .exceptions import (
    ConfigurationError,
    InvalidDegreeError,
    InvalidParamsError,
    InvalidQuadratureError,
    OutOfRangeError,
)

# Mapping amplitude bound for the sinusoidal curvilinear map
MAX_AMPLITUDE = 0.25

MAPPINGS = ("orthogonal", "curvilinear")

DEFAULT_PICARD_TOL = 1e-12
DEFAULT_PICARD_MAX = 100

# GLL degree used for error norms and projections of analytic data
ERROR_QUADRATURE_DEGREE = 25

# Relative residual accepted from direct solves
SOLVER_RTOL = 1e-12


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def validate_degree(degree: Any, minimum: int = 1) -> Tuple[bool, str]:
    """
    Validate a polynomial or quadrature degree.

    Args:
        degree: Degree to validate
        minimum: Smallest admissible value

    Returns:
        Tuple of (is_valid, error_message)
    """
    if not _is_int(degree):
        return False, f"Degree {degree!r} is not an integer"
    if degree < minimum:
        return False, f"Degree {degree} is below the minimum {minimum}"
    return True, ""


def check_degree(
    degree: Any, minimum: int = 1, key: str | None = None, raise_error: bool = True
) -> bool:
    """
    Check a degree, optionally raising an error.

    Args:
        degree: Degree to check
        minimum: Smallest admissible value
        key: Optional configuration key reported in the error
        raise_error: If True, raise InvalidDegreeError for invalid degrees

    Returns:
        True if valid, False if invalid (only if raise_error=False)

    Raises:
        InvalidDegreeError: If the degree is invalid and raise_error is True
    """
    is_valid, _ = validate_degree(degree, minimum)
    if not is_valid:
        if raise_error:
            raise InvalidDegreeError(degree, minimum=minimum, key=key)
        return False
    return True


def validate_quadrature_degree(quadrature_degree: Any, polynomial_degree: int) -> Tuple[bool, str]:
    """
    Validate a solver quadrature degree against the basis degree.

    Args:
        quadrature_degree: GLL degree for the solver forms
        polynomial_degree: Polynomial degree of the mesh

    Returns:
        Tuple of (is_valid, error_message)
    """
    if not _is_int(quadrature_degree):
        return False, f"Quadrature degree {quadrature_degree!r} is not an integer"
    if quadrature_degree < polynomial_degree:
        return (
            False,
            f"Quadrature degree {quadrature_degree} is below polynomial degree {polynomial_degree}",
        )
    return True, ""


def check_quadrature_degree(
    quadrature_degree: Any, polynomial_degree: int, raise_error: bool = True
) -> bool:
    """
    Check a solver quadrature degree, optionally raising an error.

    Raises:
        InvalidQuadratureError: If the quadrature is too weak and raise_error is True
    """
    is_valid, _ = validate_quadrature_degree(quadrature_degree, polynomial_degree)
    if not is_valid:
        if raise_error:
            if not _is_int(quadrature_degree):
                raise InvalidDegreeError(quadrature_degree, key="quadrature_degree")
            raise InvalidQuadratureError(quadrature_degree, polynomial_degree)
        return False
    return True


def validate_reference_point(xi: float) -> Tuple[bool, str]:
    """
    Validate a reference coordinate.

    Args:
        xi: Coordinate on the reference interval

    Returns:
        Tuple of (is_valid, error_message)
    """
    if not -1.0 <= xi <= 1.0:
        return False, f"Reference coordinate {xi} is outside [-1, 1]"
    return True, ""


def check_reference_point(xi: float, name: str = "xi", raise_error: bool = True) -> bool:
    """
    Check a reference coordinate, optionally raising an error.

    Raises:
        OutOfRangeError: If the coordinate lies outside [-1, 1] and raise_error is True
    """
    is_valid, _ = validate_reference_point(xi)
    if not is_valid:
        if raise_error:
            raise OutOfRangeError(name, xi, "[-1, 1]")
        return False
    return True


def validate_mesh_spec(
    n_elements: Any,
    degree: Any,
    mapping: str,
    amplitude: float,
    domain: Sequence[float],
    periodic: bool,
) -> Tuple[bool, str, str]:
    """
    Validate mesh parameters before any allocation.

    Args:
        n_elements: Elements per direction
        degree: Polynomial degree
        mapping: "orthogonal" or "curvilinear"
        amplitude: Curvilinear amplitude c
        domain: Box (x_lo, x_hi, y_lo, y_hi)
        periodic: Periodicity flag

    Returns:
        Tuple of (is_valid, error_message, offending_key)
    """
    if not _is_int(n_elements) or n_elements < 1:
        return False, f"N={n_elements!r} must be an integer >= 1", "N"
    ok, msg = validate_degree(degree)
    if not ok:
        return False, msg, "p"
    if mapping not in MAPPINGS:
        return False, f"Unknown mapping {mapping!r}; expected one of {MAPPINGS}", "mapping"
    if not math.isfinite(amplitude) or not 0.0 <= amplitude < MAX_AMPLITUDE:
        return False, f"Amplitude {amplitude} must satisfy 0 <= c < {MAX_AMPLITUDE}", "amplitude"
    if len(domain) != 4:
        return False, "Domain must be (x_lo, x_hi, y_lo, y_hi)", "domain"
    x_lo, x_hi, y_lo, y_hi = domain
    if not (x_hi > x_lo and y_hi > y_lo):
        return False, f"Domain {tuple(domain)} is empty", "domain"
    if not periodic:
        return False, "Only doubly periodic meshes are supported", "periodic"
    return True, "", ""


def check_mesh_spec(
    n_elements: Any,
    degree: Any,
    mapping: str,
    amplitude: float,
    domain: Sequence[float],
    periodic: bool,
    raise_error: bool = True,
) -> bool:
    """
    Check mesh parameters, optionally raising an error.

    Raises:
        ConfigurationError: If any parameter is invalid and raise_error is True
    """
    is_valid, msg, key = validate_mesh_spec(
        n_elements, degree, mapping, amplitude, domain, periodic
    )
    if not is_valid:
        if raise_error:
            if key == "p":
                raise InvalidDegreeError(degree, key="p")
            raise ConfigurationError(msg, key=key)
        return False
    return True


def validate_step_controls(
    dt: float, reynolds: float, picard_tol: float, picard_max: Any
) -> Tuple[bool, str, str]:
    """
    Validate time-step controls.

    Args:
        dt: Time step
        reynolds: Reynolds number (math.inf for inviscid runs)
        picard_tol: Picard convergence tolerance
        picard_max: Picard iteration budget

    Returns:
        Tuple of (is_valid, error_message, offending_key)
    """
    if not (math.isfinite(dt) and dt > 0.0):
        return False, f"dt={dt} must be positive", "dt"
    if math.isnan(reynolds) or reynolds <= 0.0:
        return False, f"Re={reynolds} must be positive or inf", "Re"
    if not (math.isfinite(picard_tol) and picard_tol > 0.0):
        return False, f"picard_tol={picard_tol} must be positive", "picard_tol"
    if not _is_int(picard_max) or picard_max < 1:
        return False, f"picard_max={picard_max!r} must be an integer >= 1", "picard_max"
    return True, "", ""


def check_step_controls(
    dt: float, reynolds: float, picard_tol: float, picard_max: Any, raise_error: bool = True
) -> bool:
    """
    Check time-step controls, optionally raising an error.

    Raises:
        ConfigurationError: If any control is invalid and raise_error is True
    """
    is_valid, msg, key = validate_step_controls(dt, reynolds, picard_tol, picard_max)
    if not is_valid:
        if raise_error:
            raise ConfigurationError(msg, key=key)
        return False
    return True


def validate_projector_params(a_curl: float, a_mass: float) -> Tuple[bool, str]:
    """
    Validate projector weights.

    Returns:
        Tuple of (is_valid, error_message)
    """
    for value in (a_curl, a_mass):
        if not math.isfinite(value) or value < 0.0:
            return False, f"Projector weight {value} must be finite and non-negative"
    if a_curl == 0.0 and a_mass == 0.0:
        return False, "Projector weights cannot both vanish"
    return True, ""


def check_projector_params(a_curl: float, a_mass: float, raise_error: bool = True) -> bool:
    """
    Check projector weights, optionally raising an error.

    Raises:
        InvalidParamsError: If the weights are invalid and raise_error is True
    """
    is_valid, _ = validate_projector_params(a_curl, a_mass)
    if not is_valid:
        if raise_error:
            raise InvalidParamsError(a_curl, a_mass)
        return False
    return True
