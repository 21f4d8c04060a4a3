"""Compiled hot path for per-turn scoring.

The selection contract is per-turn overhead that vanishes next to the
model work it schedules, so the score-and-argmax loop is JIT-compiled when
numba is available. The fallback is the identical loop in Python. Both
paths evaluate estimate + sqrt((2*ln turn)/plays) with the same operation
order, and libm log/sqrt are used either way, so scores match the scalar
reference bit for bit.
"""

from __future__ import annotations

import math

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dep of the hot path
    numba = None


def _ucb_fill_py(estimates: np.ndarray, plays: np.ndarray, turn: int, out: np.ndarray) -> int:
    two_ln_t = 2.0 * math.log(turn)
    best = 0
    best_score = -math.inf
    for i in range(estimates.shape[0]):
        if plays[i] == 0.0:
            score = math.inf
        else:
            score = estimates[i] + math.sqrt(two_ln_t / plays[i])
        out[i] = score
        if score > best_score:
            best_score = score
            best = i
    return best


# Alpha schedule kinds, encoded for the fused kernel.
ALPHA_CONSTANT = 0
ALPHA_LINEAR = 1
ALPHA_EXPONENTIAL = 2
ALPHA_KIND_CODES = {
    "constant": ALPHA_CONSTANT,
    "linear": ALPHA_LINEAR,
    "exponential": ALPHA_EXPONENTIAL,
}


def pack_reward_consts(
    zero_eps: float,
    horizon: int,
    kind: int,
    alpha0: float,
    alpha_min: float,
    decay: float,
    beta: float,
) -> np.ndarray:
    """Per-run constants for the fused reward kernel, packed once."""
    return np.array(
        [zero_eps, float(horizon), float(kind), alpha0, alpha_min, decay, beta]
    )


def _turn_reward_py(
    estimates: np.ndarray,
    plays: np.ndarray,
    arm: int,
    loss_pm: float,
    dot: float,
    norm_aux: float,
    norm_target: float,
    turn: int,
    consts: np.ndarray,
):
    """Whole per-turn reward composition and estimate update in one pass.

    Must stay operation-for-operation identical to convergence_reward /
    alignment_reward / alpha_at / combine / update_estimate so that traces
    written through this path replay bit-exactly against the public ops
    (enforced by the kernel parity tests).
    """
    pm = -loss_pm
    if norm_aux < consts[0] or norm_target < consts[0]:
        pt = 0.0
    else:
        pt = dot / (norm_aux * norm_target)
        if pt > 1.0:
            pt = 1.0
        elif pt < -1.0:
            pt = -1.0
    kind = consts[2]
    alpha0 = consts[3]
    alpha_min = consts[4]
    if kind == ALPHA_CONSTANT:
        alpha = alpha0
    elif kind == ALPHA_LINEAR:
        alpha = alpha0 * (1.0 - turn / consts[1])
        if alpha < alpha_min:
            alpha = alpha_min
    else:
        # float exponent: keeps pow on the libm path, matching alpha_at
        alpha = alpha0 * consts[5] ** float(turn)
        if alpha < alpha_min:
            alpha = alpha_min
    combined = alpha * pm + (1.0 - alpha) * pt
    if not math.isfinite(combined):
        return pm, pt, alpha, combined, math.nan, False
    beta = consts[6]
    estimate = (1.0 - beta) * estimates[arm] + beta * combined
    estimates[arm] = estimate
    plays[arm] += 1.0
    return pm, pt, alpha, combined, estimate, True


if numba is not None:
    ucb_fill = numba.njit(cache=True)(_ucb_fill_py)
    turn_reward = numba.njit(cache=True)(_turn_reward_py)
else:
    ucb_fill = _ucb_fill_py
    turn_reward = _turn_reward_py
