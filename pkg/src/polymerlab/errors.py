"""Exception types raised across the package."""


class PolymerLabError(Exception):
    """Base class for all package errors."""


class InvalidWalkError(PolymerLabError, ValueError):
    """Step law is not a symmetric, irreducible, aperiodic, isotropic walk."""


class KernelResourceError(PolymerLabError, MemoryError):
    """Requested kernel slices would exceed the configured memory cap."""


class CalibrationError(PolymerLabError, ValueError):
    """The critical-window target variance cannot be realised by the disorder law."""


class EmptySupportError(PolymerLabError, ValueError):
    """Initial test function vanishes on every lattice point of its window."""


class OverflowGuardError(PolymerLabError, FloatingPointError):
    """A field entry exceeded the overflow guard."""


class DisorderMismatchError(PolymerLabError, ValueError):
    """Two traces were produced with different disorder streams."""


class GridTooCoarseError(PolymerLabError, ValueError):
    """Integration grid does not resolve the mollifier."""


class UnsupportedTestFunctionError(PolymerLabError, ValueError):
    """Operation only supports a restricted family of test functions."""


class ToleranceError(PolymerLabError, ArithmeticError):
    """A quadrature could not reach its tolerance budget."""


class OracleSizeError(PolymerLabError, ValueError):
    """Brute-force enumeration would exceed the size guard."""


class ConfigError(PolymerLabError, ValueError):
    """Experiment configuration is invalid."""
