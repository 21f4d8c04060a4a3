"""Synthetic differentiable stand-in for "model + datasets".

A task is a diagonal convex quadratic: loss(theta) = 0.5 * sum_i lam_i *
(theta_i - c_i)^2 with analytic gradient lam * (theta - c). Diagonal
curvature keeps gradients exact, makes the safe-step-size bound trivial to
check, and is expressive enough to realize any pairwise gradient-cosine
pattern at the starting point, which is all the scheduler verification
needs.

Besides the plain task algebra this module provides the driver-facing
adapters (synthetic, reward-table, phase-switching) and the seeded suite
constructors used by the experiments.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ConstructionError, DimensionError
from .rewards import alignment_reward, summarize_gradients

DEFAULT_LEARNING_RATE = 0.05


@dataclass(frozen=True)
class SyntheticTask:
    """Diagonal quadratic objective with an analytic gradient."""

    center: np.ndarray
    curvature: np.ndarray
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "curvature", np.asarray(self.curvature, dtype=float))
        if self.center.ndim != 1 or self.curvature.ndim != 1:
            raise DimensionError("task center and curvature must be 1-d vectors")
        if self.center.shape != self.curvature.shape:
            raise DimensionError(
                f"task {self.label!r}: center dim {self.center.shape[0]} != "
                f"curvature dim {self.curvature.shape[0]}"
            )
        if not (np.isfinite(self.center).all() and np.isfinite(self.curvature).all()):
            raise ConfigError(f"task {self.label!r} has non-finite parameters")
        if (self.curvature < 0).any():
            raise ConfigError(f"task {self.label!r} has negative curvature entries")
        if not (self.curvature > 0).any():
            raise ConfigError(f"task {self.label!r} must have at least one positive curvature")

    @property
    def dim(self) -> int:
        return self.center.shape[0]


def loss(task: SyntheticTask, theta: np.ndarray) -> float:
    """0.5 * sum_i lam_i * (theta_i - c_i)^2; zero exactly at the center."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != task.center.shape:
        raise DimensionError(
            f"theta dim {theta.shape} does not match task dim {task.center.shape}"
        )
    diff = theta - task.center
    return 0.5 * float(np.dot(task.curvature * diff, diff))


def gradient(task: SyntheticTask, theta: np.ndarray) -> np.ndarray:
    """Exact gradient lam * (theta - c)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != task.center.shape:
        raise DimensionError(
            f"theta dim {theta.shape} does not match task dim {task.center.shape}"
        )
    return task.curvature * (theta - task.center)


@dataclass
class EnvironmentConfig:
    """Target task, auxiliary pool, and the shared descent settings."""

    target: SyntheticTask
    auxiliaries: list[SyntheticTask]
    learning_rate: float = DEFAULT_LEARNING_RATE
    theta0: np.ndarray | None = None
    seed: int = 0
    noise_std: float = 0.0

    def __post_init__(self):
        if not self.auxiliaries:
            raise ConfigError("auxiliary pool must contain at least one task")
        d = self.target.dim
        for task in self.auxiliaries:
            if task.dim != d:
                raise DimensionError(
                    f"auxiliary {task.label!r} dim {task.dim} != target dim {d}"
                )
        if self.theta0 is None:
            self.theta0 = np.zeros(d)
        self.theta0 = np.asarray(self.theta0, dtype=float)
        if self.theta0.shape != (d,):
            raise DimensionError(f"theta0 must have dim {d}")
        if not np.isfinite(self.theta0).all():
            raise ConfigError("theta0 has non-finite entries")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be non-negative, got {self.noise_std}")
        # Descent of the joint objective is guaranteed below the inverse of
        # the worst-case summed curvature; above it the run may oscillate.
        worst = max(
            float((self.target.curvature + aux.curvature).max())
            for aux in self.auxiliaries
        )
        if worst > 0 and self.learning_rate >= 1.0 / worst:
            warnings.warn(
                f"learning rate {self.learning_rate} is not below 1/{worst:.4g}; "
                "joint descent is no longer guaranteed",
                stacklevel=2,
            )

    @property
    def dim(self) -> int:
        return self.target.dim

    @property
    def num_arms(self) -> int:
        return len(self.auxiliaries)


def joint_step(
    config: EnvironmentConfig,
    theta: np.ndarray,
    grad_target: np.ndarray,
    grad_aux: np.ndarray,
) -> np.ndarray:
    """One gradient-descent step on the summed target + auxiliary gradient."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != grad_target.shape or theta.shape != grad_aux.shape:
        raise DimensionError("theta and gradients must share one dimension")
    return theta - config.learning_rate * (grad_target + grad_aux)


@dataclass(frozen=True)
class SuiteCertificate:
    """Achieved gradient cosines at theta0, one per auxiliary arm."""

    aligned_index: int
    requested_cos: float
    cosines: tuple[float, ...]


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    while True:
        v = rng.standard_normal(dim)
        n = np.linalg.norm(v)
        if n > 1e-8:
            return v / n


def _unit_orthogonal(rng: np.random.Generator, u: np.ndarray) -> np.ndarray:
    while True:
        w = rng.standard_normal(u.shape[0])
        w -= np.dot(w, u) * u
        n = np.linalg.norm(w)
        if n > 1e-8:
            return w / n


def make_aligned_suite(
    dim: int,
    num_aux: int,
    aligned_index: int = 0,
    alignment_cos: float = 0.9,
    seed: int = 0,
    learning_rate: float = DEFAULT_LEARNING_RATE,
    noise_std: float = 0.0,
    radius: float = 2.0,
    curvature: float = 1.0,
) -> tuple[EnvironmentConfig, SuiteCertificate]:
    """Target plus ``num_aux`` auxiliaries with a known alignment pattern.

    At theta0 the designated arm's gradient has cosine ``alignment_cos``
    with the target gradient (within 1e-6) and every other arm's cosine is
    strictly negative. Construction is deterministic given ``seed``; the
    returned certificate holds the achieved cosines, re-derived from the
    actual task gradients.

    ``curvature`` sets the isotropic task curvature, which fixes the
    optimization timescale: one joint step contracts toward its equilibrium
    by 1 - learning_rate*2*curvature, so curvature ~ 1/(learning_rate *
    horizon) keeps training ongoing for a whole run. Isotropic scaling
    leaves every gradient cosine at theta0 unchanged.
    """
    if dim < 2:
        raise ConstructionError(f"need dim >= 2 to place misaligned arms, got {dim}")
    if num_aux < 1:
        raise ConstructionError(f"num_aux must be positive, got {num_aux}")
    if not 0 <= aligned_index < num_aux:
        raise ConstructionError(
            f"aligned_index {aligned_index} out of range for {num_aux} arms"
        )
    if not 0.0 < alignment_cos <= 1.0:
        raise ConstructionError(f"alignment_cos must lie in (0, 1], got {alignment_cos}")
    if curvature <= 0:
        raise ConstructionError(f"curvature must be positive, got {curvature}")

    rng = np.random.default_rng(seed)
    theta0 = np.zeros(dim)
    lam = np.full(dim, float(curvature))

    target_dir = _unit(rng, dim)
    target = SyntheticTask(center=radius * target_dir, curvature=lam, label="target")
    grad_dir = -target_dir  # gradient of the target at theta0 points here

    auxiliaries = []
    for j in range(num_aux):
        if j == aligned_index:
            cos_j = alignment_cos
        else:
            cos_j = float(rng.uniform(-0.8, -0.2))
        ortho = _unit_orthogonal(rng, grad_dir)
        g_dir = cos_j * grad_dir + math.sqrt(max(0.0, 1.0 - cos_j * cos_j)) * ortho
        grad_j = radius * g_dir
        auxiliaries.append(
            SyntheticTask(center=theta0 - grad_j, curvature=lam.copy(), label=f"aux{j}")
        )

    config = EnvironmentConfig(
        target=target,
        auxiliaries=auxiliaries,
        learning_rate=learning_rate,
        theta0=theta0,
        seed=seed,
        noise_std=noise_std,
    )

    g_t = gradient(target, theta0)
    achieved = tuple(
        alignment_reward(summarize_gradients(gradient(a, theta0), g_t))
        for a in auxiliaries
    )
    if abs(achieved[aligned_index] - alignment_cos) > 1e-6:
        raise ConstructionError(
            f"aligned arm cosine {achieved[aligned_index]} misses request {alignment_cos}"
        )
    for j, c in enumerate(achieved):
        if j != aligned_index and c > 0.0:
            raise ConstructionError(f"arm {j} cosine {c} is not non-positive")
    return config, SuiteCertificate(
        aligned_index=aligned_index, requested_cos=alignment_cos, cosines=achieved
    )


class SyntheticEnvironment:
    """Driver-facing adapter over an EnvironmentConfig.

    Evaluates task losses and gradients at the current parameters, applies
    the joint descent step, and optionally perturbs gradients with seeded
    zero-mean Gaussian noise (a stand-in for minibatch noise). Auxiliary
    gradients are handed out through a checkout/release pair so the driver's
    one-resident-gradient contract is observable in tests.
    """

    def __init__(self, config: EnvironmentConfig):
        self.config = config
        self._rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
        self._resident_aux = 0
        self.peak_resident_aux_gradients = 0

    @property
    def num_arms(self) -> int:
        return self.config.num_arms

    @property
    def theta0(self) -> np.ndarray:
        return self.config.theta0.copy()

    def _noise(self, dim: int) -> np.ndarray | None:
        if self.config.noise_std > 0.0:
            return self._rng.normal(0.0, self.config.noise_std, dim)
        return None

    def _aux_task(self, arm: int, turn: int) -> SyntheticTask:
        return self.config.auxiliaries[arm]

    def target_loss(self, theta: np.ndarray, turn: int) -> float:
        return loss(self.config.target, theta)

    def aux_loss(self, arm: int, theta: np.ndarray, turn: int) -> float:
        return loss(self._aux_task(arm, turn), theta)

    def target_gradient(self, theta: np.ndarray, turn: int) -> np.ndarray:
        g = gradient(self.config.target, theta)
        noise = self._noise(g.shape[0])
        if noise is not None:
            g = g + noise
        return g

    def aux_gradient(self, arm: int, theta: np.ndarray, turn: int) -> np.ndarray:
        g = gradient(self._aux_task(arm, turn), theta)
        noise = self._noise(g.shape[0])
        if noise is not None:
            g = g + noise
        self._resident_aux += 1
        self.peak_resident_aux_gradients = max(
            self.peak_resident_aux_gradients, self._resident_aux
        )
        return g

    def release_aux_gradient(self, grad: np.ndarray) -> None:
        if self._resident_aux <= 0:
            raise RuntimeError("release without a checked-out auxiliary gradient")
        self._resident_aux -= 1

    def step(
        self, theta: np.ndarray, grad_target: np.ndarray, grad_aux: np.ndarray
    ) -> np.ndarray:
        return joint_step(self.config, theta, grad_target, grad_aux)

    def describe(self) -> dict:
        c = self.config
        return {
            "kind": "synthetic",
            "dim": c.dim,
            "learning_rate": c.learning_rate,
            "seed": c.seed,
            "noise_std": c.noise_std,
            "theta0": c.theta0.tolist(),
            "target": {
                "label": c.target.label,
                "center": c.target.center.tolist(),
                "curvature": c.target.curvature.tolist(),
            },
            "auxiliaries": [
                {
                    "label": a.label,
                    "center": a.center.tolist(),
                    "curvature": a.curvature.tolist(),
                }
                for a in c.auxiliaries
            ],
        }


class SwitchingEnvironment(SyntheticEnvironment):
    """Synthetic environment whose auxiliary arms are re-labelled mid-run.

    From ``switch_turn`` on, arm ``a`` serves the task at
    ``permutation[a]``, so which arm is best-aligned changes while the
    underlying geometry stays fixed. Models a non-stationary pool.
    """

    def __init__(self, config: EnvironmentConfig, permutation: list[int], switch_turn: int):
        super().__init__(config)
        if sorted(permutation) != list(range(config.num_arms)):
            raise ConfigError("permutation must rearrange all arm indices exactly once")
        if switch_turn < 1:
            raise ConfigError(f"switch_turn must be >= 1, got {switch_turn}")
        self.permutation = list(permutation)
        self.switch_turn = switch_turn

    def _aux_task(self, arm: int, turn: int) -> SyntheticTask:
        if turn >= self.switch_turn:
            arm = self.permutation[arm]
        return self.config.auxiliaries[arm]

    def describe(self) -> dict:
        d = super().describe()
        d["kind"] = "switching"
        d["permutation"] = self.permutation
        d["switch_turn"] = self.switch_turn
        return d


def make_switching_suite(
    dim: int,
    num_aux: int,
    first_aligned: int,
    second_aligned: int,
    switch_turn: int,
    alignment_cos: float = 0.9,
    seed: int = 0,
    learning_rate: float = DEFAULT_LEARNING_RATE,
    noise_std: float = 0.0,
    curvature: float = 1.0,
) -> tuple[SwitchingEnvironment, SuiteCertificate]:
    """Aligned suite whose best arm moves from one index to another mid-run.

    Before ``switch_turn`` arm ``first_aligned`` is the aligned one; from
    then on the aligned task is served by arm ``second_aligned`` (the two
    arms swap tasks). The certificate describes the phase-one geometry.
    """
    if first_aligned == second_aligned:
        raise ConstructionError("switch requires two distinct arm indices")
    if not 0 <= second_aligned < num_aux:
        raise ConstructionError(
            f"second_aligned {second_aligned} out of range for {num_aux} arms"
        )
    config, cert = make_aligned_suite(
        dim=dim,
        num_aux=num_aux,
        aligned_index=first_aligned,
        alignment_cos=alignment_cos,
        seed=seed,
        learning_rate=learning_rate,
        noise_std=noise_std,
        curvature=curvature,
    )
    permutation = list(range(num_aux))
    permutation[first_aligned] = second_aligned
    permutation[second_aligned] = first_aligned
    return SwitchingEnvironment(config, permutation, switch_turn), cert


class RewardTableEnvironment:
    """Degenerate environment with canned per-arm rewards.

    Used to verify the selection policy against hand-checkable reward
    schedules: auxiliary losses are the negated table rewards, all gradients
    vanish (so the alignment component is 0), and parameters never move.
    Run it with a constant alpha schedule at 1.0 to make the observed
    combined reward equal the table entry.

    ``rewards[arm]`` may be a scalar (stationary) or a per-turn sequence
    indexed by ``turn - 1``. Probe-time losses are chosen so each arm's
    initial estimate equals ``init_estimates[arm]`` (default 0).
    """

    def __init__(self, rewards, init_estimates=None):
        self.rewards = list(rewards)
        if not self.rewards:
            raise ConfigError("reward table must cover at least one arm")
        if init_estimates is None:
            init_estimates = [0.0] * len(self.rewards)
        if len(init_estimates) != len(self.rewards):
            raise ConfigError("init_estimates must match the reward table length")
        self.init_estimates = [float(e) for e in init_estimates]
        self._resident_aux = 0
        self.peak_resident_aux_gradients = 0

    @property
    def num_arms(self) -> int:
        return len(self.rewards)

    @property
    def theta0(self) -> np.ndarray:
        return np.zeros(1)

    def _reward(self, arm: int, turn: int) -> float:
        entry = self.rewards[arm]
        if np.isscalar(entry):
            return float(entry)
        return float(entry[turn - 1])

    def target_loss(self, theta: np.ndarray, turn: int) -> float:
        return 0.0

    def aux_loss(self, arm: int, theta: np.ndarray, turn: int) -> float:
        if turn == 0:
            # Probed before the loop; the 0.5/0.5 probe mix with a zero
            # alignment term lands the initial estimate on init_estimates.
            return -2.0 * self.init_estimates[arm]
        return -self._reward(arm, turn)

    def target_gradient(self, theta: np.ndarray, turn: int) -> np.ndarray:
        return np.zeros(1)

    def aux_gradient(self, arm: int, theta: np.ndarray, turn: int) -> np.ndarray:
        self._resident_aux += 1
        self.peak_resident_aux_gradients = max(
            self.peak_resident_aux_gradients, self._resident_aux
        )
        return np.zeros(1)

    def release_aux_gradient(self, grad: np.ndarray) -> None:
        self._resident_aux -= 1

    def step(
        self, theta: np.ndarray, grad_target: np.ndarray, grad_aux: np.ndarray
    ) -> np.ndarray:
        return theta

    def describe(self) -> dict:
        return {
            "kind": "reward_table",
            "rewards": [
                list(map(float, r)) if not np.isscalar(r) else float(r)
                for r in self.rewards
            ],
            "init_estimates": self.init_estimates,
        }
