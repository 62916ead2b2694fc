"""Exception hierarchy.

Validation problems (bad inputs, violated preconditions) derive from
``ValidationError``; numerical breakdowns derive from ``NumericalFailure``.
The CLI maps the two families to distinct exit codes.
"""


class EngineError(Exception):
    """Base class for every error raised by the engine."""


class ValidationError(EngineError, ValueError):
    """An input violates a documented precondition."""


class NumericalFailure(EngineError, ArithmeticError):
    """A computation could not meet its accuracy contract."""


class InvalidArgument(ValidationError):
    pass


class UnsupportedBoundary(ValidationError):
    pass


class UnsupportedParameter(ValidationError):
    pass


class CourantViolation(ValidationError):
    """Lattice too coarse for the drift at some point."""

    def __init__(self, x, up_rate, down_rate):
        self.x = x
        super().__init__(
            f"Courant condition fails at x={x:.6g} "
            f"(sigma^2/2h^2 term gives down rate {down_rate:.6g}); refine the lattice"
        )


class InvalidMeasureChange(ValidationError):
    pass


class InvalidNumeraire(ValidationError):
    pass


class InvalidLadder(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class SizeCapExceeded(ValidationError):
    pass


class DegenerateMoments(ValidationError):
    pass


class PseudoSpectrumError(NumericalFailure):
    """Eigendecomposition residual too large to trust functional calculus."""


class SeriesDivergence(NumericalFailure):
    pass


class GridTooSmall(NumericalFailure):
    def __init__(self, spill):
        self.spill = spill
        super().__init__(f"path grid too small: mass beyond grid {spill:.3e} exceeds 1e-6")


class StepInstability(NumericalFailure):
    def __init__(self, disagreement, eps):
        self.disagreement = disagreement
        self.suggested_eps = eps / 4
        super().__init__(
            f"Richardson disagreement {disagreement:.3e} > 1e-4; retry with eps <= {eps / 4:.3e}"
        )


class InfeasibleConditioning(NumericalFailure):
    def __init__(self, step, node, deficit):
        self.step, self.node, self.deficit = step, node, deficit
        super().__init__(
            f"conditioning solve infeasible at step {step}, node h={node}: deficit {deficit:.3e}"
        )
