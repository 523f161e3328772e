"""Neural-surrogate optimal control with the discrete-time Pontryagin principle."""

__version__ = "0.1.0"

from .dynamics import AnalyticModel, DynamicsModel, SurrogateAdditive, SurrogateControlAffine
from .errors import (ConvergenceError, DegenerateSecantError, SingularCostateError,
                     TrainingDivergedError, ValidationError)
from .neural import MlpNetwork, MlpSpec, TrainConfig, mlp_init, train
from .pmp import Free, OcpDefinition, TerminalCost, TerminalTarget, Trajectory, fbs_solve, rollout
from .problems import BatteryParams, MartianParams, build_battery_ocp, build_martian_ocp
from .shooting import ShootingConfig, shoot

__all__ = [
    "AnalyticModel", "BatteryParams", "ConvergenceError", "DegenerateSecantError",
    "DynamicsModel", "Free", "MartianParams", "MlpNetwork", "MlpSpec", "OcpDefinition",
    "ShootingConfig", "SingularCostateError", "SurrogateAdditive", "SurrogateControlAffine",
    "TerminalCost", "TerminalTarget", "TrainConfig", "TrainingDivergedError", "Trajectory",
    "ValidationError", "build_battery_ocp", "build_martian_ocp", "fbs_solve", "mlp_init",
    "rollout", "shoot", "train",
]
