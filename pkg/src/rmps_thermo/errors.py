"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates an operation's precondition."""


class ResourceLimitError(RuntimeError):
    """A dense construction would exceed the configured size limit."""


class NumericalFailureError(RuntimeError):
    """A computation produced non-finite or otherwise unusable numbers."""
