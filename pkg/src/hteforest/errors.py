"""Exception types shared across the package."""


class SchemaError(ValueError):
    """CSV cell or schema problem; message carries row/column context."""


class ValidationError(ValueError):
    """A dataset or configuration invariant is violated."""


class FitError(RuntimeError):
    """A likelihood fit failed to converge.

    Carries the last gradient norm so callers can log diagnostics before
    falling back.
    """

    def __init__(self, message: str, grad_norm: float = float("nan")):
        super().__init__(message)
        self.grad_norm = grad_norm


class SingularFitError(FitError):
    """Rank-deficient fit, e.g. no variation in the treatment regressor."""


class UnsupportedVariantError(ValueError):
    """Requested centering variant is not defined for this model family."""
