"""End-to-end scheduling loop.

One run proceeds as: probe every arm once at the starting parameters to
seed its estimate (no parameter update), then for each turn select an arm
by UCB score, evaluate the target and selected-arm gradients, apply one
joint descent step, compose the reward, fold it into the arm's estimate,
and release the auxiliary gradient. Every turn is recorded in full so a
trace can be audited offline.

The loop talks to the environment through a small adapter interface
(losses, gradients, step, checkout/release of auxiliary gradients), so the
same orchestration runs against the synthetic quadratic suite, a canned
reward table, or a phase-switching pool.

Baselines reuse the identical loop with selection overridden: uniform
random, round robin, the best arm of the initial probe held fixed (pure
exploitation), and an all-arms gradient mixture (pure exploration).
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import traceio
from ._kernels import ALPHA_KIND_CODES, pack_reward_consts, turn_reward
from .bandit import (
    PolicyState,
    argmax_lowest_index,
    new_policy_state,
    select_with_scores,
    update_estimate,
)
from .environment import EnvironmentConfig, SyntheticEnvironment
from .errors import ConfigError, DivergenceError, RewardDomainError
from .rewards import (
    ZERO_NORM_EPS,
    AlphaSchedule,
    RewardComponents,
    alignment_reward,
    alpha_at,
    combine,
    convergence_reward,
    summarize_gradients,
)

BASELINE_POLICIES = ("uniform_random", "round_robin", "fixed_best_initial", "all_mixed")

# Sentinel arm index recorded when no single arm was pulled (all_mixed).
NO_ARM = -1


@dataclass
class RunConfig:
    """Everything needed to reproduce one run byte for byte."""

    horizon: int
    environment: Any
    beta: float = 0.1
    alpha_schedule: AlphaSchedule = field(default_factory=AlphaSchedule)
    pm_eval: str = "pre_update"  # pre_update | post_update
    normalization: str = "raw"  # raw | running_minmax
    seed: int = 0
    trace_path: str | Path | None = None

    def __post_init__(self):
        if self.horizon < 0:
            raise ConfigError(f"horizon must be non-negative, got {self.horizon}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if self.pm_eval not in ("pre_update", "post_update"):
            raise ConfigError(f"unknown pm_eval mode {self.pm_eval!r}")
        if self.normalization not in ("raw", "running_minmax"):
            raise ConfigError(f"unknown normalization mode {self.normalization!r}")


@dataclass
class InitRecord:
    """One arm's probe at the starting parameters."""

    arm: int
    loss: float
    cosine: float
    estimate0: float


@dataclass
class TurnRecord:
    """Full audit of one turn."""

    turn: int
    ucb_scores: list[float]
    selected: int
    loss_target: float
    loss_aux: float
    reward: RewardComponents
    estimate_after: float
    plays_after: int
    target_loss_after_step: float


@dataclass
class Trace:
    """Ordered per-turn records plus the probe results and config digest."""

    config_digest: str
    policy: str
    init_records: list[InitRecord] = field(default_factory=list)
    records: list[TurnRecord] = field(default_factory=list)
    completed: bool = True
    # Wall-clock totals per bucket, never serialized (would break
    # byte-identical traces); used by the overhead tests.
    timing: dict = field(default_factory=dict)


def make_environment(environment: Any):
    """Resolve the environment field of a RunConfig to a live adapter."""
    if isinstance(environment, EnvironmentConfig):
        return SyntheticEnvironment(environment)
    if environment == "external":
        raise ConfigError(
            "this run config is for an external client; use the protocol server"
        )
    required = (
        "num_arms",
        "theta0",
        "target_loss",
        "aux_loss",
        "target_gradient",
        "aux_gradient",
        "release_aux_gradient",
        "step",
        "describe",
    )
    if all(hasattr(environment, attr) for attr in required):
        return environment
    raise ConfigError(f"cannot build an environment from {type(environment).__name__}")


def config_digest(config: RunConfig, env) -> str:
    """Content hash of the run configuration (canonical JSON, sha256)."""
    payload = {
        "horizon": config.horizon,
        "beta": config.beta,
        "alpha_schedule": {
            "kind": config.alpha_schedule.kind,
            "alpha0": config.alpha_schedule.alpha0,
            "alpha_min": config.alpha_schedule.alpha_min,
            "decay": config.alpha_schedule.decay,
        },
        "pm_eval": config.pm_eval,
        "normalization": config.normalization,
        "seed": config.seed,
        "environment": env.describe(),
    }
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _check_finite(value: float, what: str, turn: int, arm: int) -> None:
    if not math.isfinite(value):
        raise DivergenceError(
            f"{what} is not finite ({value}) at turn {turn}, arm {arm}",
            turn=turn,
            arm=arm,
        )


def _check_vector_finite(vec: np.ndarray, what: str, turn: int, arm: int) -> None:
    if not np.isfinite(vec).all():
        raise DivergenceError(
            f"{what} has non-finite entries at turn {turn}, arm {arm}",
            turn=turn,
            arm=arm,
        )


def _summarize_checked(grad_aux, grad_target, turn: int, arm: int):
    # The entries can be finite while their dot product overflows; that is
    # still a runaway run, so surface it as divergence with a location.
    try:
        return summarize_gradients(grad_aux, grad_target)
    except RewardDomainError as exc:
        raise DivergenceError(
            f"gradient statistics overflowed at turn {turn}, arm {arm}: {exc}",
            turn=turn,
            arm=arm,
        ) from exc


def initialize(config: RunConfig, env=None) -> tuple[PolicyState, np.ndarray, Trace]:
    """Probe every arm once at theta0 and seed the policy estimates.

    Each arm starts with one play and estimate 0.5*(-probe loss) +
    0.5*(probe gradient cosine). Parameters are not updated and the turn
    counter stays at zero; the probes are recorded in the trace.
    """
    if env is None:
        env = make_environment(config.environment)
    state = new_policy_state(
        num_arms=env.num_arms,
        horizon=config.horizon,
        smoothing=config.beta,
        normalize=config.normalization == "running_minmax",
    )
    theta = np.asarray(env.theta0, dtype=float)
    trace = Trace(config_digest=config_digest(config, env), policy="ucb")

    grad_target = env.target_gradient(theta, 0)
    _check_vector_finite(grad_target, "target gradient", 0, NO_ARM)
    for arm in range(env.num_arms):
        loss_aux = env.aux_loss(arm, theta, 0)
        _check_finite(loss_aux, "auxiliary probe loss", 0, arm)
        grad_aux = env.aux_gradient(arm, theta, 0)
        _check_vector_finite(grad_aux, "auxiliary probe gradient", 0, arm)
        summary = _summarize_checked(grad_aux, grad_target, 0, arm)
        env.release_aux_gradient(grad_aux)
        pm0 = convergence_reward(loss_aux)
        pt0 = alignment_reward(summary)
        estimate0 = 0.5 * pm0 + 0.5 * pt0
        state.estimates[arm] = estimate0
        if state.normalize:
            # Probe rewards are legitimate observations: let them open the
            # reward range so the first loop turn is not forced to zero.
            state.reward_range.observe(estimate0)
        trace.init_records.append(
            InitRecord(arm=arm, loss=loss_aux, cosine=pt0, estimate0=estimate0)
        )
    return state, theta, trace


def run_turn(
    state: PolicyState,
    theta: np.ndarray,
    env,
    config: RunConfig,
    turn: int,
    selected: int | None = None,
    timing: dict | None = None,
    reward_consts: np.ndarray | None = None,
) -> tuple[np.ndarray, TurnRecord]:
    """Execute one turn; mutates ``state`` and returns the new parameters.

    ``selected`` overrides UCB selection for the baselines; ``NO_ARM``
    requests the all-arms gradient mixture, which observes no single-arm
    reward and therefore leaves the policy state untouched. When ``timing``
    is given, per-bucket wall-clock totals are accumulated into it.
    ``reward_consts`` carries the packed per-run kernel constants; the loop
    builds them once.
    """
    if reward_consts is None:
        reward_consts = _pack_consts(config, state)
    t_sel0 = time.perf_counter()
    state.turn = turn
    best, scores = select_with_scores(state)
    if selected is None:
        selected = best
    t_env0 = time.perf_counter()

    if selected == NO_ARM:
        theta_next, record = _mixed_turn(state, theta, env, config, turn, scores.tolist())
        return theta_next, record
    if not 0 <= selected < state.num_arms:
        raise ConfigError(
            f"forced arm {selected} out of range for {state.num_arms} arms"
        )

    loss_target = env.target_loss(theta, turn)
    loss_aux = env.aux_loss(selected, theta, turn)
    _check_finite(loss_target, "target loss", turn, selected)
    _check_finite(loss_aux, "auxiliary loss", turn, selected)

    grad_target = env.target_gradient(theta, turn)
    _check_vector_finite(grad_target, "target gradient", turn, selected)
    grad_aux = env.aux_gradient(selected, theta, turn)
    _check_vector_finite(grad_aux, "auxiliary gradient", turn, selected)

    summary = _summarize_checked(grad_aux, grad_target, turn, selected)
    theta_next = env.step(theta, grad_target, grad_aux)
    env.release_aux_gradient(grad_aux)
    del grad_aux  # only one auxiliary gradient is ever resident
    _check_vector_finite(theta_next, "updated parameters", turn, selected)

    if config.pm_eval == "post_update":
        loss_for_pm = env.aux_loss(selected, theta_next, turn)
        _check_finite(loss_for_pm, "post-update auxiliary loss", turn, selected)
    else:
        loss_for_pm = loss_aux
    target_loss_after = env.target_loss(theta_next, turn)
    _check_finite(target_loss_after, "post-update target loss", turn, selected)

    t_reward0 = time.perf_counter()
    if state.normalize:
        pm = convergence_reward(loss_for_pm)
        pt = alignment_reward(summary)
        alpha = alpha_at(config.alpha_schedule, turn, config.horizon)
        combined = combine(pm, pt, alpha)
        update_estimate(state, selected, combined)
        estimate_after = float(state.estimates[selected])
    else:
        # Fused kernel over the same arithmetic; parity with the public
        # ops above is bit-exact (see the kernel parity tests).
        pm, pt, alpha, combined, estimate_after, ok = turn_reward(
            state.estimates,
            state.plays,
            selected,
            loss_for_pm,
            summary.dot,
            summary.norm_aux,
            summary.norm_target,
            turn,
            reward_consts,
        )
        if not ok:
            raise RewardDomainError(
                f"combined reward for arm {selected} is not finite at turn {turn}"
            )
    t_record0 = time.perf_counter()

    record = TurnRecord(
        turn=turn,
        ucb_scores=scores.tolist(),
        selected=selected,
        loss_target=loss_target,
        loss_aux=loss_aux,
        reward=RewardComponents(pm=pm, pt=pt, alpha=alpha, combined=combined),
        estimate_after=float(estimate_after),
        plays_after=int(state.plays[selected]),
        target_loss_after_step=target_loss_after,
    )
    t_end = time.perf_counter()
    if timing is not None:
        timing["scheduler_s"] += (t_env0 - t_sel0) + (t_record0 - t_reward0)
        timing["environment_s"] += t_reward0 - t_env0
        timing["record_s"] += t_end - t_record0
        timing["turns"] += 1
    return theta_next, record


def _mixed_turn(state, theta, env, config, turn, scores):
    """All-arms turn: descend on the mean auxiliary gradient.

    Auxiliary gradients are checked out one at a time and folded into an
    accumulator, so the one-resident-gradient contract still holds.
    """
    k = env.num_arms
    loss_target = env.target_loss(theta, turn)
    _check_finite(loss_target, "target loss", turn, NO_ARM)
    grad_target = env.target_gradient(theta, turn)
    _check_vector_finite(grad_target, "target gradient", turn, NO_ARM)

    loss_sum = 0.0
    grad_mix = np.zeros_like(np.asarray(theta, dtype=float))
    for arm in range(k):
        loss_sum += env.aux_loss(arm, theta, turn)
        g = env.aux_gradient(arm, theta, turn)
        _check_vector_finite(g, "auxiliary gradient", turn, arm)
        grad_mix += g
        env.release_aux_gradient(g)
    loss_aux = loss_sum / k
    grad_mix /= k
    _check_finite(loss_aux, "mean auxiliary loss", turn, NO_ARM)

    summary = _summarize_checked(grad_mix, grad_target, turn, NO_ARM)
    theta_next = env.step(theta, grad_target, grad_mix)
    _check_vector_finite(theta_next, "updated parameters", turn, NO_ARM)

    if config.pm_eval == "post_update":
        loss_for_pm = sum(env.aux_loss(a, theta_next, turn) for a in range(k)) / k
    else:
        loss_for_pm = loss_aux
    target_loss_after = env.target_loss(theta_next, turn)

    pm = convergence_reward(loss_for_pm)
    pt = alignment_reward(summary)
    alpha = alpha_at(config.alpha_schedule, turn, config.horizon)
    reward = RewardComponents(pm=pm, pt=pt, alpha=alpha, combined=combine(pm, pt, alpha))
    record = TurnRecord(
        turn=turn,
        ucb_scores=scores,
        selected=NO_ARM,
        loss_target=loss_target,
        loss_aux=loss_aux,
        reward=reward,
        estimate_after=math.nan,
        plays_after=0,
        target_loss_after_step=target_loss_after,
    )
    return theta_next, record


def _write_if_requested(trace: Trace, config: RunConfig) -> None:
    if config.trace_path is not None:
        traceio.write_trace(trace, config, Path(config.trace_path))


def _pack_consts(config: RunConfig, state: PolicyState) -> np.ndarray:
    sched = config.alpha_schedule
    return pack_reward_consts(
        ZERO_NORM_EPS,
        config.horizon,
        ALPHA_KIND_CODES[sched.kind],
        sched.alpha0,
        sched.alpha_min,
        sched.decay,
        state.smoothing,
    )


def _run_loop(config: RunConfig, select_override=None, policy_name: str = "ucb") -> Trace:
    env = make_environment(config.environment)
    state, theta, trace = initialize(config, env)
    trace.policy = policy_name
    acc = {"scheduler_s": 0.0, "environment_s": 0.0, "record_s": 0.0,
           "loop_s": 0.0, "turns": 0}
    consts = _pack_consts(config, state)
    t_loop0 = time.perf_counter()
    try:
        for turn in range(1, config.horizon + 1):
            forced = None if select_override is None else select_override(state, turn)
            theta, record = run_turn(
                state, theta, env, config, turn,
                selected=forced, timing=acc, reward_consts=consts,
            )
            trace.records.append(record)
    except DivergenceError:
        trace.completed = False
        _write_if_requested(trace, config)
        raise
    acc["loop_s"] = time.perf_counter() - t_loop0
    trace.timing = acc
    trace.completed = True
    _write_if_requested(trace, config)
    return trace


def run(config: RunConfig) -> Trace:
    """Run the UCB scheduler for the configured horizon.

    Deterministic: an identical config (seed included) produces a
    byte-identical trace file. On divergence the partial trace is flushed
    before the error propagates.
    """
    return _run_loop(config)


def run_baseline(config: RunConfig, policy: str) -> Trace:
    """Run the same loop with selection replaced by a reference policy."""
    if policy not in BASELINE_POLICIES:
        raise ConfigError(
            f"unknown baseline policy {policy!r}; expected one of {BASELINE_POLICIES}"
        )
    if policy == "uniform_random":
        rng = np.random.default_rng(np.random.SeedSequence(config.seed))

        def override(state, turn):
            return int(rng.integers(0, state.num_arms))

    elif policy == "round_robin":

        def override(state, turn):
            return (turn - 1) % state.num_arms

    elif policy == "fixed_best_initial":
        chosen: list[int] = []

        def override(state, turn):
            if not chosen:
                chosen.append(argmax_lowest_index(state.estimates.tolist()))
            return chosen[0]

    else:  # all_mixed

        def override(state, turn):
            return NO_ARM

    return _run_loop(config, select_override=override, policy_name=policy)
