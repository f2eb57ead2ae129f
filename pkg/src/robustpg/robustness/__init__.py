"""Loop-closure outlier rejection: GNC and PCM."""

from .clique import greedy_clique, max_clique
from .gnc import GncConfig, GncResult, GncState, gnc_optimize, gnc_weight_update
from .pcm import (
    IncrementalPcm,
    OdometryChain,
    PcmConfig,
    consistency_matrix,
    cycle_error,
    pcm_odometry_check,
    pcm_pairwise_consistent,
    pcm_select,
)

__all__ = [
    "GncConfig", "GncResult", "GncState", "gnc_optimize", "gnc_weight_update",
    "IncrementalPcm", "OdometryChain", "PcmConfig", "consistency_matrix", "cycle_error",
    "pcm_odometry_check", "pcm_pairwise_consistent", "pcm_select",
    "greedy_clique", "max_clique",
]
