"""Budget-paced repeated auctions: simulation, adversary bounds, and dynamics analytics."""
from .adversary import (
    AdversaryProblem,
    LagrangianCertificate,
    WinSequence,
    dp_optimal,
    enumerate_optimal,
    interval_lagrangian_bound,
    lagrangian_value,
    match_bids_reduction,
    win_cap_bound,
    win_sequence,
)
from .dynamics import (
    HYPOTHESIS_NOT_MET,
    ConvergenceMilestones,
    PotentialState,
    RoundRobinReport,
    WindowStats,
    check_avg_inequality,
    check_descent_inequality,
    detect_round_robin,
    milestones,
    potential,
    round_robin_condition,
    sum_bound_check,
    verify_subgradient_step,
    window_discrepancy,
    wins_floor,
)
from .engine import (
    FIRST_PRICE,
    SECOND_PRICE,
    AgentSpec,
    AgentState,
    AuctionFormat,
    FavorAgent,
    HighestIndex,
    LowestIndex,
    MarketConfig,
    MatchLearner,
    PrimalPacing,
    RoundRecord,
    Scripted,
    SeededRandom,
    Trace,
    pacing_update,
    payment_identity,
    resolve_round,
    simulate,
)
from .errors import (
    ConfigError,
    GridOverflow,
    InstanceTooLarge,
    InvalidInput,
    PacingDynError,
    ReductionViolation,
    ScheduleExceedsHorizon,
)
from .experiments import ExperimentConfig, RunRecord, load_config, run
from .traceio import read_trace, write_trace

__version__ = "0.1.0"
