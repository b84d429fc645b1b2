"""Custom exceptions for vmsns."""

from typing import Any, Optional


class VmsnsError(Exception):
    """Base exception for vmsns errors."""

    exit_code = 2


class ConfigurationError(VmsnsError):
    """Raised when a configuration value or a solver precondition is invalid."""

    exit_code = 2

    def __init__(
        self,
        message: Optional[str] = None,
        key: Optional[str] = None,
        line: Optional[int] = None,
    ):
        """
        Initialize exception.

        Args:
            message: Optional custom message
            key: Optional configuration key that caused the error
            line: Optional 1-based line number in the config file
        """
        self.key = key
        self.line = line
        if message is None:
            message = "Invalid configuration."
        if key is not None:
            message += f"\nKey: {key}"
        if line is not None:
            message += f"\nLine: {line}"
        super().__init__(message)


class InvalidDegreeError(ConfigurationError):
    """Raised when a polynomial or quadrature degree is below its minimum."""

    def __init__(self, degree: Any, minimum: int = 1, key: Optional[str] = None):
        """
        Initialize exception.

        Args:
            degree: Offending degree
            minimum: Smallest admissible degree
            key: Optional configuration key
        """
        self.degree = degree
        self.minimum = minimum
        message = f"Degree {degree} is invalid; degrees must be integers >= {minimum}."
        super().__init__(message, key=key)


class InvalidQuadratureError(ConfigurationError):
    """Raised when a solver quadrature is weaker than the basis degree."""

    def __init__(self, quadrature_degree: int, polynomial_degree: int):
        """
        Initialize exception.

        Args:
            quadrature_degree: Requested GLL quadrature degree
            polynomial_degree: Polynomial degree of the mesh
        """
        self.quadrature_degree = quadrature_degree
        self.polynomial_degree = polynomial_degree
        message = (
            f"Quadrature degree {quadrature_degree} is below the polynomial degree "
            f"{polynomial_degree}.\n"
            "Solver forms need at least the equal-order GLL rule."
        )
        super().__init__(message, key="quadrature_degree")


class InvalidParamsError(ConfigurationError):
    """Raised when projector weights cannot define a well-posed projector."""

    def __init__(self, a_curl: float, a_mass: float):
        """
        Initialize exception.

        Args:
            a_curl: Weight on the vorticity block
            a_mass: Weight on the velocity mass block
        """
        self.a_curl = a_curl
        self.a_mass = a_mass
        message = (
            f"Projector weights (a_curl={a_curl}, a_mass={a_mass}) are invalid.\n"
            "Both must be finite and non-negative, and at least one must be positive."
        )
        super().__init__(message)


class DegenerateMeshError(ConfigurationError):
    """Raised when the element map has a non-positive Jacobian determinant."""

    def __init__(self, element: int, det_j: float):
        """
        Initialize exception.

        Args:
            element: Index of the first offending element
            det_j: Smallest Jacobian determinant found in that element
        """
        self.element = element
        self.det_j = det_j
        message = (
            f"Element {element} has a non-positive Jacobian determinant ({det_j:.3e}).\n"
            "Reduce the mapping amplitude or the number of elements."
        )
        super().__init__(message, key="amplitude")


class NestingError(ConfigurationError):
    """Raised when two meshes are not nested (integer ratio, same map)."""

    def __init__(self, message: Optional[str] = None):
        """
        Initialize exception.

        Args:
            message: Optional custom message
        """
        if message is None:
            message = (
                "Meshes are not nested.\n"
                "The finer mesh needs an integer multiple of the coarser N, "
                "the same domain and mapping, and a degree at least as high."
            )
        super().__init__(message)


class OutOfRangeError(VmsnsError, ValueError):
    """Raised when a reference coordinate or index lies outside its range."""

    exit_code = 2

    def __init__(self, name: str, value: Any, bounds: str):
        """
        Initialize exception.

        Args:
            name: Name of the argument
            value: Offending value
            bounds: Human-readable admissible range
        """
        self.name = name
        self.value = value
        super().__init__(f"{name}={value} is outside {bounds}.")


class DimensionMismatchError(VmsnsError, ValueError):
    """Raised when a coefficient vector does not match its space."""

    exit_code = 2

    def __init__(self, name: str, expected: int, actual: int):
        """
        Initialize exception.

        Args:
            name: Name of the vector
            expected: Dimension of the discrete space
            actual: Length that was passed
        """
        self.name = name
        self.expected = expected
        self.actual = actual
        super().__init__(f"{name} has length {actual}, expected {expected}.")


class SolverError(VmsnsError):
    """Base class for linear and nonlinear solver failures."""

    exit_code = 3


class LinearSolveError(SolverError):
    """Raised when a direct solve breaks down or misses its residual target."""

    def __init__(self, message: Optional[str] = None, residual: Optional[float] = None):
        """
        Initialize exception.

        Args:
            message: Optional custom message
            residual: Relative residual of the rejected solution, if any
        """
        self.residual = residual
        if message is None:
            message = "Linear solve failed."
        if residual is not None:
            message += f"\nRelative residual: {residual:.3e}"
        super().__init__(message)


class NonConvergenceError(SolverError):
    """Raised when the Picard iteration exhausts its iteration budget."""

    def __init__(
        self,
        iterations: int,
        update_norm: float,
        step: Optional[int] = None,
    ):
        """
        Initialize exception.

        Args:
            iterations: Number of Picard iterations performed
            update_norm: L2 norm of the last update
            step: Optional time-step index at which the iteration failed
        """
        self.iterations = iterations
        self.update_norm = update_norm
        self.step = step
        message = (
            f"Picard iteration did not converge in {iterations} iterations.\n"
            f"Last update norm: {update_norm:.3e}"
        )
        if step is not None:
            message += f"\nTime step: {step}"
        super().__init__(message)


class InconsistentLoadError(SolverError):
    """Raised when a load has components the periodic operator cannot balance."""

    def __init__(self, multipliers: Any):
        """
        Initialize exception.

        Args:
            multipliers: Values of the constraint multipliers that absorbed the load
        """
        self.multipliers = multipliers
        message = (
            "The load is inconsistent with the periodic Stokes operator.\n"
            f"Harmonic multipliers: {multipliers}\n"
            "Remove the mean (harmonic) part of the body force."
        )
        super().__init__(message)


class SnapshotError(VmsnsError):
    """Raised when a snapshot cannot be read or written."""

    exit_code = 4

    def __init__(
        self,
        message: Optional[str] = None,
        path: Optional[str] = None,
        line: Optional[int] = None,
    ):
        """
        Initialize exception.

        Args:
            message: Optional custom message
            path: Optional snapshot path
            line: Optional 1-based line number where parsing stopped
        """
        self.path = path
        self.line = line
        if message is None:
            message = "Failed to access snapshot."
        if path:
            message += f"\nFile: {path}"
        if line is not None:
            message += f"\nLine: {line}"
        super().__init__(message)


class SnapshotFormatError(SnapshotError):
    """Raised when a snapshot has the wrong version or is truncated."""

    pass


class OutputError(VmsnsError):
    """Raised when result files cannot be written."""

    exit_code = 4

    def __init__(self, message: Optional[str] = None, path: Optional[str] = None):
        """
        Initialize exception.

        Args:
            message: Optional custom message
            path: Optional path that failed
        """
        self.path = path
        if message is None:
            message = "Failed to write output."
        if path:
            message += f"\nFile: {path}"
        super().__init__(message)
