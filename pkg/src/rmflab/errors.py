"""Exception hierarchy shared by every rmflab module."""


class RMFError(Exception):
    """Base class for all rmflab errors."""


class InvalidArgument(RMFError, ValueError):
    pass


class ResourceBudgetExceeded(RMFError):
    """Raised when a computation would exceed a configured memory or pair budget.

    ``required`` carries the estimated requirement (bytes or pairs) so callers
    can decide whether to raise the budget.
    """

    def __init__(self, message: str, required: int | None = None):
        super().__init__(message)
        self.required = required


class ModelInvalid(RMFError, ValueError):
    """An epsilon model violates symmetry, unit variance or the fourth-moment bound."""


class UndefinedMoment(RMFError, ArithmeticError):
    pass


class OutOfDomain(RMFError, ValueError):
    pass
