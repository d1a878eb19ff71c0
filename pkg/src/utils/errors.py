"""
errors.py

Exception hierarchy shared by the SVGD library and the verification harness.
"""

from typing import Any, Dict, Optional, Sequence


class SVGDError(Exception):
    """Base class for every error raised by this package."""


class ContractViolationError(SVGDError, ValueError):
    """A caller broke an input contract (shape, mass, ordering)."""


class DomainError(SVGDError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class ConfigError(SVGDError, ValueError):
    """An experiment configuration failed validation."""


class PreconditionError(SVGDError, ValueError):
    """A precondition of a bound does not hold for the given inputs."""


class NumericOverflowError(SVGDError, ArithmeticError):
    """A non-finite value appeared during the SVGD update."""

    def __init__(self, message: str, round_index: Optional[int] = None,
                 particle_index: Optional[int] = None):
        self.round_index = round_index
        self.particle_index = particle_index
        context = []
        if round_index is not None:
            context.append(f"round={round_index}")
        if particle_index is not None:
            context.append(f"particle={particle_index}")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)


class NumericalInconsistencyError(SVGDError, ArithmeticError):
    """A quantity that must be nonnegative came out clearly negative."""


class ConstantViolationError(SVGDError):
    """A grid check found a point exceeding a claimed kernel constant."""

    def __init__(self, message: str, point: Optional[Sequence[float]] = None,
                 value: Optional[float] = None, bound: Optional[float] = None):
        self.point = None if point is None else list(point)
        self.value = value
        self.bound = bound
        super().__init__(f"{message} at point={self.point} value={value} bound={bound}")


class ConvergenceError(SVGDError, ArithmeticError):
    """An iterative solver (root finding) did not converge."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = diagnostics or {}
        super().__init__(f"{message}: {self.diagnostics}" if self.diagnostics else message)


class SolverError(SVGDError, ArithmeticError):
    """The optimal transport solver failed."""


class StepTooLargeError(SVGDError, ArithmeticError):
    """The 1-D transport map is not invertible for the requested step."""

    def __init__(self, message: str, step: Optional[float] = None,
                 node_index: Optional[int] = None):
        self.step = step
        self.node_index = node_index
        super().__init__(f"{message} (eps={step}, node={node_index})")


class DiscretizationError(SVGDError, ArithmeticError):
    """A quadrature estimate is outside its tolerance; the grid is too coarse."""


class DescentViolationError(SVGDError, AssertionError):
    """The KL descent inequality failed beyond the quadrature tolerance."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)
