"""Named failures raised by the numerical engines.

Every exception carries a stable ``name`` so the command line front-end can
report it in a machine-readable error record.
"""


class LevyError(Exception):
    """Base class. ``exit_code`` 2 marks invalid input, 3 numerical failure."""

    name = "LevyError"
    exit_code = 3

    def __init__(self, message: str = "", **detail):
        super().__init__(message)
        self.detail = detail

    def as_record(self) -> dict:
        return {"error": self.name, "message": str(self), "detail": self.detail}


class ValidationError(LevyError):
    name = "ValidationError"
    exit_code = 2


class InvalidModel(ValidationError):
    name = "InvalidModel"


class NonMonotoneProfile(ValidationError):
    name = "NonMonotoneProfile"


class InadmissibleProfile(ValidationError):
    name = "InadmissibleProfile"


class DomainError(ValidationError):
    name = "DomainError"


class BreakpointMisaligned(ValidationError):
    name = "BreakpointMisaligned"


class QueryOutsideGrid(ValidationError):
    name = "QueryOutsideGrid"


class SchemeModelMismatch(ValidationError):
    name = "SchemeModelMismatch"


class NonConvergence(LevyError):
    name = "NonConvergence"


class DegenerateRoots(LevyError):
    name = "DegenerateRoots"


class NonPositiveXi(LevyError):
    name = "NonPositiveXi"


class TailNotDecaying(LevyError):
    name = "TailNotDecaying"


class DiagonalBlowup(LevyError):
    name = "DiagonalBlowup"


class MajorantDiverged(LevyError):
    name = "MajorantDiverged"


class HorizonExhausted(LevyError):
    name = "HorizonExhausted"


class InvalidConfig(ValidationError):
    name = "InvalidConfig"
