"""Memory-layout autotuning for containerized JVM analytics workloads."""

from .core import (
    ClusterSpec,
    InvariantViolation,
    MemoryLayout,
    PoolRequirements,
    enumerate_container_configs,
    validate_layout,
)
from .gbo import QFeatures, gbo_loop, white_box_q
from .gp import (
    BoResult,
    Dimension,
    GpModel,
    Observation,
    SearchSpace,
    StoppingRule,
    bo_loop,
    default_search_space,
    expected_improvement,
    gp_fit,
    gp_posterior,
    lhs_sample,
    suggest_next,
)
from .profiles import (
    NoFullGcError,
    Profile,
    ProfileStats,
    derive_statistics,
    estimate_unmanaged,
    parse_profile,
    percentile_nearest_rank,
    reprofile_hint,
)
from .relm import (
    AllCandidatesInfeasibleError,
    InsufficientMemoryError,
    Recommendation,
    arbitrate,
    initialize,
    tune,
)
from .simulator import (
    GridSpec,
    Outcome,
    StageSpec,
    WorkloadSpec,
    exhaustive_grid,
    simulate,
    synth_profile,
)

__version__ = "0.1.0"

__all__ = [
    "ClusterSpec",
    "InvariantViolation",
    "MemoryLayout",
    "PoolRequirements",
    "enumerate_container_configs",
    "validate_layout",
    "QFeatures",
    "gbo_loop",
    "white_box_q",
    "BoResult",
    "Dimension",
    "GpModel",
    "Observation",
    "SearchSpace",
    "StoppingRule",
    "bo_loop",
    "default_search_space",
    "expected_improvement",
    "gp_fit",
    "gp_posterior",
    "lhs_sample",
    "suggest_next",
    "NoFullGcError",
    "Profile",
    "ProfileStats",
    "derive_statistics",
    "estimate_unmanaged",
    "parse_profile",
    "percentile_nearest_rank",
    "reprofile_hint",
    "AllCandidatesInfeasibleError",
    "InsufficientMemoryError",
    "Recommendation",
    "arbitrate",
    "initialize",
    "tune",
    "GridSpec",
    "Outcome",
    "StageSpec",
    "WorkloadSpec",
    "exhaustive_grid",
    "simulate",
    "synth_profile",
]
