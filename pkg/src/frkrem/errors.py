"""Exception hierarchy shared by every module of the package."""


class FRKError(Exception):
    """Base class; the CLI maps subclasses to exit categories."""

    category = "error"


class InvalidParameterError(FRKError, ValueError):
    category = "invalid-parameter"


class EmptyBasisError(FRKError):
    category = "empty-basis"


class DegenerateDesignError(FRKError):
    category = "degenerate-design"


class SingularMatrixError(FRKError):
    category = "singular-matrix"


class NumericalFailure(FRKError, ArithmeticError):
    category = "numerical-failure"


class ParseError(FRKError):
    category = "parse-error"


class MissingModelError(FRKError):
    category = "missing-model"
