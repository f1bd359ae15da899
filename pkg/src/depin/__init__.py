"""Fronts driven through random obstacle fields: simulation, critical forces and certified bounds."""
from __future__ import annotations

__version__ = "0.1.0"

from .obstacle_field import ObstacleField, ObstacleParams  # noqa: E402
from .front_dynamics import FrontState, KineticRelation, Outcome, SimConfig, Tag, run  # noqa: E402
from .depinning import (  # noqa: E402
    BisectionConfig,
    CriticalEstimate,
    ScalingStudy,
    certificate_sandwich,
    estimate_critical,
    fit_power_law,
    scaling_sweep,
)
from .certificates import (  # noqa: E402
    analytic_bounds,
    best_lower_certificate,
    best_upper_certificate,
    build_barrier,
    construct_path_evolution,
    find_free_path,
)
from .kernels import BACKEND  # noqa: E402

__all__ = [
    "BACKEND", "BisectionConfig", "CriticalEstimate", "FrontState", "KineticRelation",
    "ObstacleField", "ObstacleParams", "Outcome", "ScalingStudy", "SimConfig", "Tag",
    "analytic_bounds", "best_lower_certificate", "best_upper_certificate", "build_barrier",
    "certificate_sandwich", "construct_path_evolution", "estimate_critical", "find_free_path",
    "fit_power_law", "run", "scaling_sweep",
]
