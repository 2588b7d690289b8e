"""Congestion management of a grid zone with batteries and curtailment under delays."""

from .dynamics import DelayConfig, OrderBuffer, StateSpaceModel, SystemState, build_model, step
from .limits import DeviceBounds, LimitMode, LimitProfile, build_constraints, limit_at
from .mpc import MPCController, MpcSolveError
from .qp import QpInstance, QpResult, QpStatus
from .simulator import RunLog, Scenario, compare, run, score
from .zone import DCFlowModel, Line, NetworkError, Zone, compute_ptdf, validate_zone

__all__ = [
    "DCFlowModel", "DelayConfig", "DeviceBounds", "LimitMode", "LimitProfile", "Line",
    "MPCController", "MpcSolveError", "NetworkError", "OrderBuffer", "QpInstance", "QpResult",
    "QpStatus", "RunLog", "Scenario", "StateSpaceModel", "SystemState", "Zone",
    "build_constraints", "build_model", "compare", "compute_ptdf", "limit_at", "run", "score",
    "step", "validate_zone",
]
__version__ = "0.1.0"
