"""Exception hierarchy shared by every module.

The CLI maps each class to a process exit code (see ``EXIT_CODES``).
"""


class PdEmeeError(Exception):
    """Base class for all package errors."""


class ConfigError(PdEmeeError):
    """Invalid run or estimator configuration."""


class DataError(PdEmeeError):
    """Dataset violates a structural or validation invariant."""


class StructuralError(DataError):
    """Array shapes or required follow-up slots are inconsistent."""


class PositivityError(DataError):
    """A randomization probability needed by a weight lies outside (0, 1)."""


class NumericError(PdEmeeError):
    """Non-finite intermediate or a mean model leaving its valid range."""


class SingularJacobianError(NumericError):
    """The stacked Jacobian (bread) cannot be inverted."""


class NonConvergenceError(PdEmeeError):
    """Root finder exhausted its iteration or step-halving budget.

    Attributes
    ----------
    theta : ndarray
        Last iterate (alpha stacked on beta).
    residual_norm : float
        Sup-norm of the averaged estimating function at ``theta``.
    iterations : int
    """

    def __init__(self, message, theta=None, residual_norm=float("nan"), iterations=0):
        super().__init__(message)
        self.theta = theta
        self.residual_norm = residual_norm
        self.iterations = iterations


EXIT_CODES = {
    ConfigError: 2,
    DataError: 3,
    NumericError: 4,
    NonConvergenceError: 5,
}


def exit_code_for(exc):
    for cls in type(exc).__mro__:
        if cls in EXIT_CODES:
            return EXIT_CODES[cls]
    return 1
