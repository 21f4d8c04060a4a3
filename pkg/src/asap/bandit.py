"""Upper-confidence-bound policy over a fixed pool of arms.

Each arm keeps a play count and an exponentially smoothed reward estimate,
so the policy tracks non-stationary rewards: the estimate update is

    estimate <- (1 - beta) * estimate + beta * observed

and the selection score at turn ``t`` for an arm played ``n`` times is

    estimate + sqrt(2 * ln(t) / n)      (infinite while n == 0)

The policy is reward-source agnostic; composing the observed reward from
losses and gradient statistics lives in :mod:`asap.rewards`.

State is stored as flat arrays and scored through a compiled kernel: the
per-turn scheduler cost must stay negligible against the training step it
schedules, even at desk scale where that step is only a few numpy calls.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import ucb_fill
from .errors import CheckpointError, ConfigError, RewardDomainError

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class ArmStats:
    """Play count and smoothed reward estimate for one arm."""

    plays: int = 0
    estimate: float = 0.0


@dataclass
class RunningMinMax:
    """Tracks the range of observed rewards for optional [-1, 1] rescaling.

    The UCB confidence bonus is derived under a bounded-reward assumption;
    raw rewards here include negated losses, which are unbounded. Enabling
    this tracker restores boundedness by mapping each observation through
    the running min/max seen so far.
    """

    lo: float | None = None
    hi: float | None = None

    def observe(self, value: float) -> float:
        if self.lo is None or value < self.lo:
            self.lo = value
        if self.hi is None or value > self.hi:
            self.hi = value
        if self.hi == self.lo:
            return 0.0
        return -1.0 + 2.0 * (value - self.lo) / (self.hi - self.lo)


@dataclass(eq=False)
class PolicyState:
    """Mutable bandit state: per-arm arrays plus the turn counter.

    Single-owner value: one decision loop reads and writes it sequentially.
    ``turn`` is the loop turn currently being played (0 before the first).
    ``plays`` holds integral values in a float array for the score kernel.
    """

    estimates: np.ndarray
    plays: np.ndarray
    turn: int = 0
    horizon: int = 1
    smoothing: float = 0.1
    normalize: bool = False
    reward_range: RunningMinMax = field(default_factory=RunningMinMax)
    _scratch: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.estimates = np.asarray(self.estimates, dtype=float)
        self.plays = np.asarray(self.plays, dtype=float)
        if self.estimates.shape != self.plays.shape or self.estimates.ndim != 1:
            raise ConfigError("estimates and plays must be 1-d arrays of equal length")
        self._scratch = np.empty_like(self.estimates)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolicyState):
            return NotImplemented
        return (
            np.array_equal(self.estimates, other.estimates)
            and np.array_equal(self.plays, other.plays)
            and self.turn == other.turn
            and self.horizon == other.horizon
            and self.smoothing == other.smoothing
            and self.normalize == other.normalize
            and self.reward_range == other.reward_range
        )

    @property
    def num_arms(self) -> int:
        return self.estimates.shape[0]

    def arm(self, index: int) -> ArmStats:
        """Snapshot of one arm's statistics (a copy, not a live view)."""
        return ArmStats(plays=int(self.plays[index]), estimate=float(self.estimates[index]))

    @property
    def arms(self) -> list[ArmStats]:
        """Snapshot of all arms, in index order."""
        return [self.arm(i) for i in range(self.num_arms)]


def new_policy_state(
    num_arms: int,
    horizon: int,
    smoothing: float = 0.1,
    normalize: bool = False,
    initial_plays: int = 1,
) -> PolicyState:
    """Fresh state with every arm at ``initial_plays`` plays and estimate 0."""
    if num_arms < 1:
        raise ConfigError("arm pool must contain at least one arm")
    if horizon < 0:
        raise ConfigError(f"horizon must be non-negative, got {horizon}")
    if not 0.0 <= smoothing <= 1.0:
        raise ConfigError(f"smoothing factor must lie in [0, 1], got {smoothing}")
    return PolicyState(
        estimates=np.zeros(num_arms),
        plays=np.full(num_arms, float(initial_plays)),
        turn=0,
        horizon=horizon,
        smoothing=smoothing,
        normalize=normalize,
    )


def ucb_score(stats: ArmStats, turn: int) -> float:
    """Selection score for one arm at loop turn ``turn`` (1-based).

    Unplayed arms score +inf so they are probed before any replay.
    """
    if turn < 1:
        raise ConfigError(f"turn counter must be >= 1, got {turn}")
    if stats.plays == 0:
        return math.inf
    return stats.estimate + math.sqrt((2.0 * math.log(turn)) / stats.plays)


def select_with_scores(state: PolicyState) -> tuple[int, np.ndarray]:
    """Best arm at ``state.turn`` plus the full score vector.

    The returned array is a reusable scratch buffer: copy it (or ``tolist``
    it) before the next selection on the same state.
    """
    if state.turn < 1:
        raise ConfigError(f"turn counter must be >= 1, got {state.turn}")
    best = ucb_fill(state.estimates, state.plays, state.turn, state._scratch)
    return int(best), state._scratch


def ucb_scores(state: PolicyState) -> list[float]:
    """Scores for every arm at ``state.turn``, in arm-index order."""
    _, scores = select_with_scores(state)
    return scores.tolist()


def argmax_lowest_index(scores) -> int:
    """Index of the maximum; ties broken by the lowest index."""
    best = 0
    best_score = scores[0]
    for i in range(1, len(scores)):
        if scores[i] > best_score:
            best = i
            best_score = scores[i]
    return best


def select_arm(state: PolicyState) -> int:
    """Arm with the highest UCB score at the current turn.

    Pure with respect to ``state``; deterministic tie-break on lowest index.
    """
    if state.num_arms < 1:
        raise ConfigError("cannot select from an empty arm pool")
    best, _ = select_with_scores(state)
    return best


def update_estimate(state: PolicyState, arm: int, observed: float) -> None:
    """Fold one observed reward into the pulled arm's estimate.

    Increments the arm's play count and applies the smoothing update;
    every other arm is untouched (only the pulled arm's reward is seen).
    With ``state.normalize`` set, the observation first passes through the
    running min-max rescaler.
    """
    if not 0 <= arm < state.num_arms:
        raise ConfigError(f"arm index {arm} out of range for {state.num_arms} arms")
    if not math.isfinite(observed):
        raise RewardDomainError(
            f"observed reward for arm {arm} is not finite ({observed}); "
            "upstream loss has likely diverged"
        )
    if state.normalize:
        observed = state.reward_range.observe(observed)
    beta = state.smoothing
    estimates = state.estimates
    estimates[arm] = (1.0 - beta) * estimates[arm] + beta * observed
    state.plays[arm] += 1.0


def checkpoint(state: PolicyState) -> bytes:
    """Serialize the full policy state to a versioned JSON blob.

    Floats round-trip exactly (shortest-repr encoding), so
    ``restore(checkpoint(s))`` is field-for-field identical to ``s``.
    """
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "k": state.num_arms,
        "turn": state.turn,
        "horizon": state.horizon,
        "beta": state.smoothing,
        "normalize": state.normalize,
        "reward_lo": state.reward_range.lo,
        "reward_hi": state.reward_range.hi,
        "arms": [
            [int(state.plays[i]), float(state.estimates[i])]
            for i in range(state.num_arms)
        ],
    }
    return json.dumps(payload, sort_keys=True).encode("utf-8")


def restore(blob: bytes) -> PolicyState:
    """Rebuild a PolicyState from a checkpoint blob.

    Raises CheckpointError on malformed payloads or unknown format versions;
    never returns partially decoded state.
    """
    try:
        payload = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"checkpoint blob is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise CheckpointError("checkpoint blob must decode to an object")
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {version!r} "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    try:
        arms_raw = payload["arms"]
        if len(arms_raw) != payload["k"]:
            raise CheckpointError(
                f"arm count {len(arms_raw)} does not match k={payload['k']}"
            )
        state = PolicyState(
            estimates=np.array([float(e) for _, e in arms_raw]),
            plays=np.array([float(int(p)) for p, _ in arms_raw]),
            turn=int(payload["turn"]),
            horizon=int(payload["horizon"]),
            smoothing=float(payload["beta"]),
            normalize=bool(payload["normalize"]),
            reward_range=RunningMinMax(lo=payload["reward_lo"], hi=payload["reward_hi"]),
        )
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint blob is missing or corrupt: {exc}") from exc
    return state
