"""Exception types shared across modules."""


class NoEventsError(ValueError):
    """The training data contain no observed events."""


class ConvergenceError(RuntimeError):
    """An iterative fit stopped at ``max_iter`` without meeting ``tol``."""

    def __init__(self, message, grad_norm=None):
        super().__init__(message)
        self.grad_norm = grad_norm


class CensoringSaturationError(RuntimeError):
    """Too many minipatches had no events to train on."""

    def __init__(self, message, n_skipped=None, n_patches=None):
        super().__init__(message)
        self.n_skipped = n_skipped
        self.n_patches = n_patches
