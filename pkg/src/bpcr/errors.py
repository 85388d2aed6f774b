"""Exception types shared across the package."""


class BpcrError(Exception):
    """Base class for all package-specific errors."""


class ConstantColumnError(BpcrError):
    """A predictor column has (numerically) zero standard deviation."""

    def __init__(self, label):
        self.label = label
        super().__init__(f"constant predictor column: {label!r}")


class DegenerateInputError(BpcrError):
    """Input matrix carries no usable signal (all singular values ~ 0)."""


class DimensionMismatchError(BpcrError):
    """Operands have incompatible shapes."""


class InvalidParamError(BpcrError):
    """A parameter value is outside its valid range."""


class NotPositiveDefiniteError(BpcrError):
    """Cholesky factorization failed even after the jitter policy."""


class SingularFactorError(BpcrError):
    """A triangular or normal-equations factor is singular."""


class RankDeficientError(BpcrError):
    """Least-squares design does not have full column rank."""


class ZeroMeanTruthError(BpcrError):
    """Relative metrics are undefined when the truth mean is ~ 0."""


class ConstantTruthError(BpcrError):
    """Q2 is undefined for a constant truth vector."""


class SchemaError(BpcrError):
    """A CSV/JSON artifact violates the expected schema."""

    def __init__(self, message, *, row=None, column=None):
        self.row = row
        self.column = column
        ctx = []
        if row is not None:
            ctx.append(f"row {row}")
        if column is not None:
            ctx.append(f"column {column!r}")
        if ctx:
            message = f"{message} ({', '.join(ctx)})"
        super().__init__(message)
