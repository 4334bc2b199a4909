"""
Exception hierarchy for vcmoe.

Every error raised by the package derives from VCMoEError. The three category
classes carry the process exit code used by the command-line front end.
"""


class VCMoEError(Exception):
    """Base class for all vcmoe errors."""

    exit_code = 1


class UsageError(VCMoEError, ValueError):
    """An argument is outside its documented domain."""

    exit_code = 2


class DataError(VCMoEError):
    """Input data is malformed or cannot support the requested model."""

    exit_code = 3


class NumericalError(VCMoEError, ArithmeticError):
    """A numerical routine failed."""

    exit_code = 4


# Usage errors

class NonPositiveBandwidth(UsageError):
    def __init__(self, h):
        super().__init__(f"bandwidth must be positive, got {h!r}")
        self.h = h


class BandwidthGeqOne(UsageError):
    def __init__(self, h):
        super().__init__(f"asymptotic bands need h < 1 (log h < 0), got {h!r}")
        self.h = h


class PilotTooSmall(UsageError):
    def __init__(self, pilot_h, h):
        super().__init__(f"pilot bandwidth {pilot_h!r} must exceed the fit bandwidth {h!r}")


class TooFewReplicates(UsageError):
    def __init__(self, name, value, minimum):
        super().__init__(f"{name}={value} bootstrap replicates; at least {minimum} are required")


class UnknownCoefficient(UsageError):
    def __init__(self, name, known=()):
        msg = f"unknown coefficient {name!r}"
        if known:
            msg += f" (known: {', '.join(known)})"
        super().__init__(msg)
        self.name = name


class OutOfDomain(UsageError):
    def __init__(self, u):
        super().__init__(f"index value {u!r} lies outside [0, 1]")
        self.u = u


class LengthMismatch(UsageError):
    pass


class InsufficientData(UsageError):
    pass


class DimensionMismatch(UsageError):
    pass


# Data errors

class ParseError(DataError):
    def __init__(self, row, column, detail=""):
        msg = f"cannot parse row {row}, column {column!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.row = row
        self.column = column


class SchemaError(DataError):
    def __init__(self, column, detail="missing required column"):
        super().__init__(f"{detail}: {column!r}")
        self.column = column


class DegenerateIndex(DataError):
    def __init__(self):
        super().__init__("all index values are equal; cannot rescale to [0, 1]")


class InvalidResponse(DataError):
    pass


# Numerical errors

class QuadratureFailure(NumericalError):
    pass


class NoEffectiveSamples(NumericalError):
    def __init__(self, u, h):
        super().__init__(f"no observation has positive kernel weight at u={u:.4g} with h={h:.4g}")
        self.u = u
        self.h = h


class SingularHessian(NumericalError):
    pass


class AllFoldsFailed(NumericalError):
    pass


class ReplicateFailure(NumericalError):
    def __init__(self, failed, total):
        super().__init__(f"{failed} of {total} replicates failed (more than 10%)")
        self.failed = failed
        self.total = total
