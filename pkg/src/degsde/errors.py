"""Exception hierarchy shared by all modules."""


class DegsdeError(Exception):
    """Base class for errors raised by this package."""


class DomainError(DegsdeError, ArithmeticError):
    """A field was evaluated outside its domain (log of non-positive, zero divisor, ...)."""


class NotPositiveDefinite(DegsdeError):
    """A matrix that must be strictly positive definite is not."""


class SingularPoint(DegsdeError):
    """Evaluation requested at a declared singular point."""


class MissingField(DegsdeError):
    """A coefficient needed by the requested operation was not supplied."""


class ExprSyntaxError(DegsdeError, SyntaxError):
    """Malformed expression source. ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.msg = message
        self.offset = offset


class ArityError(DegsdeError):
    pass


class IndexOutOfRange(DegsdeError):
    pass


class NonPositiveSolution(DegsdeError):
    """Discrete density has a non-positive cell."""

    def __init__(self, message: str, cell=None, value=None):
        super().__init__(message)
        self.cell = cell
        self.value = value


class SingularSystem(DegsdeError):
    pass


class OutOfBox(DegsdeError):
    pass


class EmptyLaw(DegsdeError):
    pass


class ConfigError(DegsdeError):
    """Invalid experiment or spec configuration."""
