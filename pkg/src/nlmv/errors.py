"""Exception hierarchy. Every error carries a machine-readable ``reason``."""


class NLMVError(Exception):
    reason = "error"

    def __init__(self, message, reason=None):
        super().__init__(message)
        if reason is not None:
            self.reason = reason


class ModelError(NLMVError, ValueError):
    """Malformed model or coefficient (non-finite evaluation, bad shapes)."""

    reason = "malformed_model"


class InfeasibleModelError(NLMVError):
    reason = "infeasible"


class NumericalError(NLMVError, ArithmeticError):
    """Clamping overflow, explosion, non-positive Riccati step, rank deficiency."""

    reason = "numerical_failure"


class DegenerateDualError(InfeasibleModelError):
    reason = "degenerate_dual"


class ConfigError(NLMVError, ValueError):
    reason = "schema_error"


class ExtrapolationWarning(UserWarning):
    """Regression solution evaluated outside the factor states it was trained on."""
