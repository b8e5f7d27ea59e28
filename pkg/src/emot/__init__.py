"""Entropic martingale optimal transport via martingale Sinkhorn iterations."""

from .dual import (
    DualPotentials,
    TransportPlan,
    apply_invariant_transform,
    dual_objective,
    induced_plan,
    normalize,
    relative_entropy,
)
from .measures import (
    CostTensor,
    DiscreteMeasure,
    ProblemInstance,
    center_means,
    check_instance,
    reference_measure,
    reference_measure_density,
    validate_instance,
)
from .sinkhorn import SolverConfig, SolveResult, SolveTrace, fit_convergence_rate, iterate

__version__ = "0.1.0"
