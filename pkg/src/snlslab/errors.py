"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid parameters or configuration values."""


class ContractViolation(ValueError):
    """A caller broke a documented precondition (wrong shapes, non-real noise, ...)."""


class NumericalFailure(RuntimeError):
    """Non-finite values appeared during time stepping."""

    def __init__(self, message, step=None, path_index=None):
        super().__init__(message)
        self.step = step
        self.path_index = path_index
