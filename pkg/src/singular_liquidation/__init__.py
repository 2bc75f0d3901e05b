"""Optimal liquidation with dark-pool crossing and a singular terminal constraint."""

from .errors import (AcceptanceError, AssumptionError, ConfigError, DomainError, InputError,
                     LiquidationError, NumericalError, SchemeFault)
from .model import JumpMark, ProblemSpec, homogeneous_spec, spec_from_dict
from .sentinels import INF, LIMIT

__version__ = "0.1.0"

__all__ = ["AcceptanceError", "AssumptionError", "ConfigError", "DomainError", "InputError",
           "LiquidationError", "NumericalError", "SchemeFault", "JumpMark", "ProblemSpec",
           "homogeneous_spec", "spec_from_dict", "INF", "LIMIT", "__version__"]
