"""Online identification and critic-only learning for saturated tracking.

Simulates a control-affine plant under an input-bounded tracking controller
whose value function is learned online from integral Bellman residuals,
while a filtered-regressor identifier with experience replay estimates the
dynamics that the controller needs.
"""

from .critic import CriticBasis, GainConfig, TRACKING_POLY7, check_gains, uub_gamma
from .errors import ConfigError, DomainError, NumericalError
from .identifier import (
    BASES,
    IdentifierBasis,
    IdentifierState,
    ReplayStack,
    SPRING_DAMPER_CUBIC,
    min_eig_sym,
)
from .models import ParameterSchedule, PlantParams, params_at
from .policy import SaturationSpec, control, utility_closed, utility_quadrature
from .sim import ProbeSpec, RunRecord, RunSetup, SimConfig, run

__version__ = "0.1.0"

__all__ = [
    "BASES",
    "ConfigError",
    "CriticBasis",
    "DomainError",
    "GainConfig",
    "IdentifierBasis",
    "IdentifierState",
    "NumericalError",
    "ParameterSchedule",
    "PlantParams",
    "ProbeSpec",
    "ReplayStack",
    "RunRecord",
    "RunSetup",
    "SPRING_DAMPER_CUBIC",
    "SaturationSpec",
    "SimConfig",
    "TRACKING_POLY7",
    "check_gains",
    "control",
    "min_eig_sym",
    "params_at",
    "run",
    "uub_gamma",
    "utility_closed",
    "utility_quadrature",
    "__version__",
]
