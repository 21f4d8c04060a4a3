"""Sequential auxiliary-dataset selection with a non-stationary UCB bandit.

Pick which auxiliary dataset to train on at every step: arms are datasets,
the reward blends the negated auxiliary loss with the cosine between the
auxiliary and target gradients, and selection follows an upper confidence
bound over exponentially smoothed estimates.
"""

from .bandit import (
    ArmStats,
    PolicyState,
    checkpoint,
    new_policy_state,
    restore,
    select_arm,
    ucb_score,
    update_estimate,
)
from .driver import RunConfig, Trace, TurnRecord, run, run_baseline
from .environment import (
    EnvironmentConfig,
    SyntheticTask,
    gradient,
    joint_step,
    loss,
    make_aligned_suite,
    make_switching_suite,
)
from .errors import (
    AsapError,
    CheckpointError,
    ConfigError,
    ConstructionError,
    DimensionError,
    DivergenceError,
    ProtocolError,
    RewardDomainError,
)
from .rewards import (
    AlphaSchedule,
    GradientSummary,
    RewardComponents,
    alignment_reward,
    alpha_at,
    combine,
    convergence_reward,
    summarize_gradients,
)

__version__ = "0.1.0"

__all__ = [
    "AlphaSchedule",
    "ArmStats",
    "AsapError",
    "CheckpointError",
    "ConfigError",
    "ConstructionError",
    "DimensionError",
    "DivergenceError",
    "EnvironmentConfig",
    "GradientSummary",
    "PolicyState",
    "ProtocolError",
    "RewardComponents",
    "RewardDomainError",
    "RunConfig",
    "SyntheticTask",
    "Trace",
    "TurnRecord",
    "alignment_reward",
    "alpha_at",
    "checkpoint",
    "combine",
    "convergence_reward",
    "gradient",
    "joint_step",
    "loss",
    "make_aligned_suite",
    "make_switching_suite",
    "new_policy_state",
    "restore",
    "run",
    "run_baseline",
    "select_arm",
    "summarize_gradients",
    "ucb_score",
    "update_estimate",
]
