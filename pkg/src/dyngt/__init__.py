"""Dynamic two-stage group testing over epidemic populations."""
from .engine import Cca, Dorfman, IidParams, run_batch, run_trajectory
from .epidemic import PopulationState, SbmParams
from .objectives import CostParams
from .protocols import CcaConfig, QuarantinePolicy

__all__ = [
    "Cca",
    "CcaConfig",
    "CostParams",
    "Dorfman",
    "IidParams",
    "PopulationState",
    "QuarantinePolicy",
    "SbmParams",
    "run_batch",
    "run_trajectory",
]
