"""Scale functions, exit problems and Monte Carlo for Levy processes with level-dependent drift."""

__version__ = "0.1.0"

from .errors import LevyError
from .levy_model import (
    JumpSpec,
    LevyModel,
    SmoothLinearClamp,
    SmoothSaturating,
    StepProfile,
    ZERO_RATE,
    bm_a,
    cl_a,
    hx_b,
    jd_c,
)
from .fluctuation import ExitQuery, machinery, ruin_probability
from .simulator import McEstimate, PathConfig

__all__ = [
    "__version__",
    "LevyError",
    "JumpSpec",
    "LevyModel",
    "SmoothLinearClamp",
    "SmoothSaturating",
    "StepProfile",
    "ZERO_RATE",
    "bm_a",
    "cl_a",
    "hx_b",
    "jd_c",
    "ExitQuery",
    "machinery",
    "ruin_probability",
    "McEstimate",
    "PathConfig",
]
