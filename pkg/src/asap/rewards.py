"""Composite reward: negated loss blended with gradient cosine alignment.

Two signals are computed for the pulled arm each turn:

* convergence reward, the negated auxiliary loss (lower loss, higher reward);
* alignment reward, the cosine between the auxiliary and target gradients.

They are mixed as ``alpha * convergence + (1 - alpha) * alignment`` where
``alpha`` decays over the run, shifting weight from raw-loss progress toward
directional agreement with the target task.

Gradients enter only through their sufficient statistics (dot product and
the two Euclidean norms), so callers with large parameter vectors can reduce
locally and ship three numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, RewardDomainError

# Norms below this are treated as vanished gradients: no alignment signal.
ZERO_NORM_EPS = 1e-12

# Slack for |dot| <= norm_aux * norm_target on summaries reduced externally.
CAUCHY_SCHWARZ_TOL = 1e-9


@dataclass(frozen=True)
class GradientSummary:
    """Sufficient statistics of an (auxiliary, target) gradient pair.

    ``dot`` is the inner product, the norms are Euclidean. Vectors over
    structured parameters must be flattened in a fixed order (concatenation
    in parameter-registration order) before reduction so that independent
    producers agree.
    """

    dot: float
    norm_aux: float
    norm_target: float

    def __post_init__(self):
        for name in ("dot", "norm_aux", "norm_target"):
            if not math.isfinite(getattr(self, name)):
                raise RewardDomainError(f"gradient summary field {name} is not finite")
        if self.norm_aux < 0.0 or self.norm_target < 0.0:
            raise RewardDomainError("gradient norms must be non-negative")
        if abs(self.dot) > self.norm_aux * self.norm_target + CAUCHY_SCHWARZ_TOL:
            raise RewardDomainError(
                "inconsistent gradient summary: |dot| exceeds the product of norms"
            )


@dataclass(frozen=True)
class RewardComponents:
    """One turn's reward pieces for the pulled arm.

    ``combined`` is always recomputable as ``alpha*pm + (1-alpha)*pt``.
    """

    pm: float
    pt: float
    alpha: float
    combined: float

    def __post_init__(self):
        if not -1.0 <= self.pt <= 1.0:
            raise RewardDomainError(f"alignment component must lie in [-1, 1], got {self.pt}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.combined != self.alpha * self.pm + (1.0 - self.alpha) * self.pt:
            raise RewardDomainError("combined reward does not match its components")


@dataclass(frozen=True)
class AlphaSchedule:
    """Decay schedule for the convergence-vs-alignment mixing weight."""

    kind: str = "linear"  # linear | exponential | constant
    alpha0: float = 0.5
    alpha_min: float = 0.0
    decay: float = 0.99  # per-turn rate, exponential kind only

    def __post_init__(self):
        if self.kind not in ("linear", "exponential", "constant"):
            raise ConfigError(f"unknown alpha schedule kind {self.kind!r}")
        if not 0.0 <= self.alpha0 <= 1.0:
            raise ConfigError(f"alpha0 must lie in [0, 1], got {self.alpha0}")
        if not 0.0 <= self.alpha_min <= self.alpha0:
            raise ConfigError(
                f"alpha_min must lie in [0, alpha0={self.alpha0}], got {self.alpha_min}"
            )
        if not 0.0 < self.decay <= 1.0:
            raise ConfigError(f"decay must lie in (0, 1], got {self.decay}")


def convergence_reward(loss: float) -> float:
    """Negated loss: positive reward for a converging model."""
    if not math.isfinite(loss):
        raise RewardDomainError(f"loss is not finite ({loss})")
    return -loss


def alignment_reward(g: GradientSummary) -> float:
    """Cosine of the angle between auxiliary and target gradients.

    Clamped to [-1, 1] to absorb floating-point excess from externally
    reduced summaries. A vanished gradient on either side carries no
    alignment information and maps to 0.0.
    """
    norm_aux = g.norm_aux
    norm_target = g.norm_target
    if norm_aux < ZERO_NORM_EPS or norm_target < ZERO_NORM_EPS:
        return 0.0
    cos = g.dot / (norm_aux * norm_target)
    if cos > 1.0:
        return 1.0
    if cos < -1.0:
        return -1.0
    return cos


def summarize_gradients(grad_aux, grad_target) -> GradientSummary:
    """Reduce two same-length gradient vectors to their summary statistics."""
    a = np.asarray(grad_aux, dtype=float)
    t = np.asarray(grad_target, dtype=float)
    if a.ndim != 1 or t.ndim != 1:
        raise DimensionError("gradients must be flat 1-d vectors")
    if a.shape != t.shape:
        raise DimensionError(
            f"gradient length mismatch: {a.shape[0]} vs {t.shape[0]}"
        )
    if a.shape[0] < 1:
        raise DimensionError("gradients must have at least one entry")
    if not (np.isfinite(a).all() and np.isfinite(t).all()):
        raise RewardDomainError("gradient vectors contain non-finite entries")
    return GradientSummary(
        dot=float(np.dot(a, t)),
        norm_aux=float(np.linalg.norm(a)),
        norm_target=float(np.linalg.norm(t)),
    )


def alpha_at(schedule: AlphaSchedule, turn: int, horizon: int) -> float:
    """Mixing weight at a given turn; non-increasing in ``turn``.

    linear:      max(alpha_min, alpha0 * (1 - turn/horizon))
    exponential: max(alpha_min, alpha0 * decay**turn)
    constant:    alpha0
    """
    if horizon < 1:
        raise ConfigError(f"horizon must be positive, got {horizon}")
    if turn < 0 or turn > horizon:
        raise ConfigError(f"turn {turn} outside [0, horizon={horizon}]")
    if schedule.kind == "constant":
        return schedule.alpha0
    if schedule.kind == "linear":
        return max(schedule.alpha_min, schedule.alpha0 * (1.0 - turn / horizon))
    return max(schedule.alpha_min, schedule.alpha0 * schedule.decay**turn)


def combine(pm: float, pt: float, alpha: float) -> float:
    """Blend convergence and alignment rewards with weight ``alpha``."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    if not (math.isfinite(pm) and math.isfinite(pt)):
        raise RewardDomainError("reward components must be finite")
    return alpha * pm + (1.0 - alpha) * pt


def make_components(pm: float, pt: float, alpha: float) -> RewardComponents:
    """Bundle the turn's reward pieces with their combination."""
    return RewardComponents(pm=pm, pt=pt, alpha=alpha, combined=combine(pm, pt, alpha))
