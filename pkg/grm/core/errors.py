"""
Error taxonomy

Every failure the package raises on purpose derives from GRMError. The
`exit_code` attribute is what the command line surface returns, so each
error class maps to exactly one documented exit status:

    1  generic failure (shape, usage, invariant, numeric errors)
    2  ConfigError              bad or missing configuration
    3  TrainingDivergedError    NaN/Inf during training
    4  CheckpointVersionError   checkpoint format mismatch
    5  GradCheckFailure         finite-difference check above tolerance
"""
from typing import Optional


class GRMError(Exception):
    """Base class for all package errors"""
    exit_code: int = 1


class ConfigError(GRMError):
    """Invalid configuration; `key_path` names the offending key"""
    exit_code = 2

    def __init__(self, message: str, key_path: Optional[str] = None):
        self.key_path = key_path
        if key_path:
            message = f"{key_path}: {message}"
        super().__init__(message)


class TrainingDivergedError(GRMError):
    """A non-finite value appeared while training"""
    exit_code = 3

    def __init__(self, message: str, step: int, scope: Optional[str] = None):
        self.step = step
        self.scope = scope
        super().__init__(f"step {step}, scope {scope or '<root>'}: {message}")


class CheckpointVersionError(GRMError):
    """Checkpoint magic bytes or format version not understood"""
    exit_code = 4


class GradCheckFailure(GRMError):
    """Analytic and numeric gradients disagree"""
    exit_code = 5

    def __init__(self, parameter: str, rel_error: float, tolerance: float):
        self.parameter = parameter
        self.rel_error = rel_error
        self.tolerance = tolerance
        super().__init__(
            f"gradient check failed for '{parameter}': "
            f"relative error {rel_error:.3e} >= {tolerance:.1e}"
        )


class ShapeError(GRMError, ValueError):
    """Incompatible tensor shapes"""


class UsageError(GRMError, ValueError):
    """Operation called on an input it does not accept"""


class DegenerateRowError(GRMError, ValueError):
    """A softmax row has no unmasked entry"""


class InvariantViolationError(GRMError, ValueError):
    """A domain invariant (one-hot rows, simplex rows, ...) does not hold"""


class AutogradError(GRMError):
    """Misuse of the tape (backward on detached or non-scalar tensors)"""


class NonFiniteError(GRMError, ArithmeticError):
    """An operation produced NaN or Inf"""

    def __init__(self, op: str, scope: Optional[str] = None, phase: str = "forward"):
        self.op = op
        self.scope = scope
        self.phase = phase
        super().__init__(f"{op} produced non-finite values during {phase} (scope {scope or '<root>'})")


class NonDeterministicError(GRMError):
    """A closure expected to be deterministic returned different values"""


class ScenarioError(GRMError, ValueError):
    """Synthetic scenario specification cannot be rendered"""
