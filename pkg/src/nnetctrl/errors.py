"""Error types shared across the package.

The class names are part of the public contract: callers (and the CLI exit-code
mapping) dispatch on them. Validation errors exit 1, solver errors 2,
simulation errors 3, I/O errors 4.
"""


class ValidationError(ValueError):
    """Base class for parameter/config validation failures (exit code 1)."""


class PoolingViolation(ValidationError):
    """The complete-resource-pooling identity fails."""


class OverloadViolation(ValidationError):
    """Class 1 does not overload pool 1 (lambda_1 <= mu_11 * nu_1)."""


class NonpositiveRate(ValidationError):
    """A rate that must be positive is not."""


class NegativeRate(ValidationError):
    """A finite-n embedding produced a nonpositive rate."""


class NonIntegerSum(ValidationError):
    """Integer-split input whose components do not sum to an integer."""


class PreconditionViolation(ValidationError):
    """An operation's stated precondition fails."""


class InfeasibleRectangle(ValidationError):
    """The work-conserving rectangle formula produced a negative allocation."""


class InvalidAction(ValidationError):
    """An allocation matrix outside the admissible action set."""


class BoxEmpty(ValidationError):
    """A verification box containing no lattice states."""


class SolverError(RuntimeError):
    """Base class for numerical-solver failures (exit code 2)."""


class SingularEvaluation(SolverError):
    """Policy-evaluation linear system could not be solved."""


class SingularAdjoint(SolverError):
    """Stationary-distribution adjoint system could not be solved."""


class MaxIterations(SolverError):
    """An inner iteration hit its limit before converging."""


class MaxOuterIterations(SolverError):
    """An outer (multiplier) iteration hit its limit before converging."""


class NonMonotone(SolverError):
    """Discretization lost monotonicity (unreachable for upwind weights)."""


class InfeasibleBudget(SolverError):
    """Dual ascent diverged: multipliers hit the cap with constraints violated."""


class BracketNotFound(SolverError):
    """Root bracketing failed: no sign change over the search interval."""


class NonConvergentSpan(SolverError):
    """Relative value iteration's span seminorm stopped decreasing."""


class BoxTooLarge(SolverError):
    """Truncated-chain state count exceeds the exact-solve guard."""


class EmptyActionSet(SolverError):
    """No admissible action at a state (signals a bad restriction ball)."""


class SimulationError(RuntimeError):
    """Base class for simulation failures (exit code 3)."""


class InsufficientBatches(SimulationError):
    """Horizon too short to form the required number of batches."""


class ZeroTotalRate(SimulationError):
    """CTMC has no enabled transition (zero arrivals at an empty system)."""
