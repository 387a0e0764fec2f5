"""Exception types shared across the package."""


class FptmcError(Exception):
    """Base class for all package errors."""


class ParseError(FptmcError):
    """Drift expression could not be parsed. Carries the 0-based position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class EvaluationError(FptmcError):
    """A drift or potential evaluation produced a non-finite value."""


class DifferentiationError(FptmcError):
    """Expression cannot be differentiated symbolically (table-backed leaf)."""


class QuadratureError(FptmcError):
    """Grid-doubling quadrature failed to reach the requested tolerance."""


class MeshConvergenceError(FptmcError):
    """Eigenvalue mesh too coarse; rerun with a larger mesh."""


class ConfigError(FptmcError):
    """Invalid run configuration (CLI exit code 1)."""
