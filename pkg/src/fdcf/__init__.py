"""Full-duplex cell-free massive MIMO simulator and optimizer."""

from .config import SystemConfig, ConfigError, db_to_linear, dbm_to_watts
from .scenario import (
    ChannelSet,
    LargeScale,
    Topology,
    large_scale,
    path_loss_db,
    sample_channels,
    sample_topology,
)
from .pilots import (
    Heap,
    PilotAssignment,
    assign_pilots_heap,
    assign_pilots_naive,
    assign_pilots_random,
    assignment_cost,
    brute_force_optimal,
    effective_weights,
    heap_fd_strategy,
    heap_hd_strategy,
)
from .estimation import (
    EstimateSet,
    error_variances_fd,
    error_variances_hd,
    estimate_fd,
    estimate_hd,
    nmse,
    nmse_db,
    nmse_per_ue,
)
from .zf import (
    BeamformerSet,
    ZfConditioningError,
    ZfOperators,
    dl_sinr_general,
    dl_sinr_zf,
    mrt_mrc_beams,
    per_ap_power,
    ul_sinr_general,
    ul_sinr_zf,
    zf_operators,
)
from .solver import ConvexProgram, InfeasibleProgramError, solve
from .optimizer import (
    Association,
    InitializationError,
    SolveState,
    associate,
    build_subproblem,
    effective_se,
    initialize_feasible,
    refine_with_association,
    run_sca,
    spectral_efficiency,
    surrogate_fr,
    surrogate_qu,
)
from .harness import Scheme, TrialRecord, nmse_sweep, run_trial, se_sweep, service_map

__version__ = "0.1.0"
