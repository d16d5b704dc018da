"""Exception hierarchy shared across the package."""


class TatdError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(TatdError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateEntryError(TatdError, ValueError):
    pass


class DegenerateDataError(TatdError, ValueError):
    pass


class InsufficientDataError(TatdError, ValueError):
    pass


class InvalidWindowError(TatdError, ValueError):
    pass


class InvalidNeighborhoodError(TatdError, ValueError):
    pass


class ShapeError(TatdError, ValueError):
    pass


class EmptyEvaluationError(TatdError, ValueError):
    pass


class SingularUpdateError(TatdError, ArithmeticError):
    def __init__(self, mode, row):
        self.mode = mode
        self.row = row
        super().__init__(
            f"singular normal equations for row {row} of mode {mode}; "
            "use lambda_r > 0 or observe more entries"
        )


class DivergenceError(TatdError, FloatingPointError):
    pass
