"""Exception types shared across the package."""


class ChaosIdError(Exception):
    """Base class for all package errors."""


class InvalidInputError(ChaosIdError, ValueError):
    """An argument violates a documented precondition."""


class ShapeError(InvalidInputError):
    """Operand shapes are incompatible for an operation."""

    def __init__(self, op, message):
        super().__init__(f"{op}: {message}")
        self.op = op


class NumericError(ChaosIdError, ArithmeticError):
    """A computation produced non-finite or runaway values."""


class NumericOverflowError(NumericError):
    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class DivergenceError(NumericError):
    """An orbit, ensemble member or training loss blew up.

    ``step`` and ``index`` locate the failure (time step, ensemble member,
    EM iteration ...) when known.
    """

    def __init__(self, message, step=None, index=None):
        where = []
        if step is not None:
            where.append(f"step {step}")
        if index is not None:
            where.append(f"index {index}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.step = step
        self.index = index


class UnrecoverableComponentError(InvalidInputError):
    """A state component has no observation at all, so it cannot be interpolated."""

    def __init__(self, component):
        super().__init__(f"component {component} is never observed")
        self.component = component
