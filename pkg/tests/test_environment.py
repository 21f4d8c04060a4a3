"""Tests for the synthetic quadratic environment."""

import math
import warnings

import numpy as np
import pytest

from asap.driver import RunConfig, run
from asap.environment import (
    EnvironmentConfig,
    RewardTableEnvironment,
    SuiteCertificate,
    SyntheticEnvironment,
    SyntheticTask,
    gradient,
    joint_step,
    loss,
    make_aligned_suite,
    make_switching_suite,
)
from asap.errors import ConfigError, ConstructionError, DimensionError
from asap.rewards import alignment_reward, summarize_gradients


def quad(center, curvature, label="t"):
    return SyntheticTask(center=np.array(center, float), curvature=np.array(curvature, float), label=label)


class TestLossAndGradient:
    def test_zero_at_minimum(self):
        task = quad([0.0, 0.0], [1.0, 1.0])
        assert loss(task, np.zeros(2)) == 0.0

    def test_flat_coordinate_ignored(self):
        task = quad([1.0, 5.0], [2.0, 0.0])
        assert loss(task, np.zeros(2)) == pytest.approx(1.0, abs=1e-12)

    def test_hand_computed_loss(self):
        task = quad([3.0, 4.0], [1.0, 1.0])
        assert loss(task, np.zeros(2)) == pytest.approx(12.5, abs=1e-12)

    def test_gradient_zero_at_center(self):
        task = quad([1.0, -2.0], [1.0, 3.0])
        assert gradient(task, task.center).tolist() == [0.0, 0.0]

    def test_identity_curvature_gradient(self):
        task = quad([0.0, 0.0], [1.0, 1.0])
        assert gradient(task, np.array([3.0, 4.0])).tolist() == [3.0, 4.0]

    def test_elementwise_gradient(self):
        task = quad([1.0, 1.0], [2.0, 1.0])
        assert gradient(task, np.array([2.0, 3.0])).tolist() == [2.0, 2.0]

    def test_dimension_mismatch(self):
        task = quad([0.0, 0.0], [1.0, 1.0])
        with pytest.raises(DimensionError):
            loss(task, np.zeros(3))
        with pytest.raises(DimensionError):
            gradient(task, np.zeros(3))

    def test_loss_non_negative_random(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            d = int(rng.integers(1, 10))
            task = quad(rng.normal(size=d), rng.uniform(0.1, 3.0, size=d))
            assert loss(task, rng.normal(size=d) * 5) >= 0.0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        h = 1e-5
        for _ in range(100):
            d = int(rng.integers(1, 12))
            task = quad(rng.normal(size=d), rng.uniform(0.0, 4.0, size=d))
            theta = rng.normal(size=d) * 2
            g = gradient(task, theta)
            for i in range(d):
                e = np.zeros(d)
                e[i] = h
                fd = (loss(task, theta + e) - loss(task, theta - e)) / (2 * h)
                assert fd == pytest.approx(g[i], rel=1e-6, abs=1e-8)

    def test_task_validation(self):
        with pytest.raises(ConfigError):
            quad([0.0], [-1.0])  # negative curvature
        with pytest.raises(ConfigError):
            quad([0.0, 0.0], [0.0, 0.0])  # no curvature at all
        with pytest.raises(DimensionError):
            quad([0.0, 0.0], [1.0])


class TestJointStep:
    def make_config(self, eta=0.1):
        return EnvironmentConfig(
            target=quad([0.0], [1.0]),
            auxiliaries=[quad([1.0], [1.0])],
            learning_rate=eta,
        )

    def test_fixed_point_at_zero_gradients(self):
        cfg = self.make_config()
        theta = np.array([0.7])
        out = joint_step(cfg, theta, np.zeros(1), np.zeros(1))
        assert out.tolist() == [0.7]

    def test_hand_computed_step(self):
        cfg = self.make_config(eta=0.1)
        out = joint_step(cfg, np.array([1.0]), np.array([2.0]), np.array([3.0]))
        assert out.tolist() == pytest.approx([0.5], abs=1e-12)

    def test_descent_on_joint_objective(self):
        rng = np.random.default_rng(3)
        target = quad(rng.normal(size=4), rng.uniform(0.5, 2.0, size=4))
        aux = quad(rng.normal(size=4), rng.uniform(0.5, 2.0, size=4))
        cfg = EnvironmentConfig(target=target, auxiliaries=[aux], learning_rate=0.1)
        theta = rng.normal(size=4) * 3
        for _ in range(50):
            g_t, g_a = gradient(target, theta), gradient(aux, theta)
            if np.linalg.norm(g_t + g_a) < 1e-12:
                break
            new = joint_step(cfg, theta, g_t, g_a)
            assert loss(target, new) + loss(aux, new) < loss(target, theta) + loss(aux, theta)
            theta = new

    def test_unsafe_learning_rate_warns(self):
        with pytest.warns(UserWarning, match="descent"):
            EnvironmentConfig(
                target=quad([0.0], [10.0]),
                auxiliaries=[quad([1.0], [10.0])],
                learning_rate=0.1,  # 1/(10+10) = 0.05 bound
            )


class TestAlignedSuite:
    def test_certificate_matches_request(self):
        cfg, cert = make_aligned_suite(
            dim=8, num_aux=8, aligned_index=3, alignment_cos=0.9, seed=123
        )
        assert isinstance(cert, SuiteCertificate)
        assert cert.cosines[3] == pytest.approx(0.9, abs=1e-6)
        for j, c in enumerate(cert.cosines):
            if j != 3:
                assert c <= 0.0

    def test_certificate_self_verifies(self):
        cfg, cert = make_aligned_suite(dim=5, num_aux=4, aligned_index=2,
                                       alignment_cos=0.7, seed=9)
        g_t = gradient(cfg.target, cfg.theta0)
        for j, aux in enumerate(cfg.auxiliaries):
            cos = alignment_reward(summarize_gradients(gradient(aux, cfg.theta0), g_t))
            assert cos == pytest.approx(cert.cosines[j], abs=1e-6)

    def test_colinear_construction(self):
        cfg, cert = make_aligned_suite(dim=2, num_aux=1, aligned_index=0,
                                       alignment_cos=1.0, seed=0)
        assert cert.cosines[0] == pytest.approx(1.0, abs=1e-6)

    def test_deterministic_given_seed(self):
        a, _ = make_aligned_suite(dim=4, num_aux=3, seed=77)
        b, _ = make_aligned_suite(dim=4, num_aux=3, seed=77)
        assert np.array_equal(a.target.center, b.target.center)
        for x, y in zip(a.auxiliaries, b.auxiliaries):
            assert np.array_equal(x.center, y.center)

    def test_infeasible_requests_rejected(self):
        with pytest.raises(ConstructionError):
            make_aligned_suite(dim=1, num_aux=2)
        with pytest.raises(ConstructionError):
            make_aligned_suite(dim=4, num_aux=2, aligned_index=5)
        with pytest.raises(ConstructionError):
            make_aligned_suite(dim=4, num_aux=2, alignment_cos=0.0)
        with pytest.raises(ConstructionError):
            make_aligned_suite(dim=4, num_aux=2, alignment_cos=1.5)


class TestSwitchingSuite:
    def test_arms_swap_at_switch_turn(self):
        env, cert = make_switching_suite(
            dim=6, num_aux=4, first_aligned=0, second_aligned=3,
            switch_turn=10, alignment_cos=0.9, seed=5,
        )
        theta = env.theta0
        g_t = env.target_gradient(theta, 1)
        before = env.aux_gradient(0, theta, 9)
        env.release_aux_gradient(before)
        after = env.aux_gradient(3, theta, 10)
        env.release_aux_gradient(after)
        assert np.array_equal(before, after)  # arm 3 serves arm 0's old task

    def test_identity_before_switch(self):
        env, cert = make_switching_suite(
            dim=6, num_aux=4, first_aligned=1, second_aligned=2,
            switch_turn=5, seed=8,
        )
        cfg_static, cert_static = make_aligned_suite(dim=6, num_aux=4,
                                                     aligned_index=1, seed=8)
        assert cert.cosines == cert_static.cosines


class TestRewardTableEnvironment:
    def test_probe_losses_land_on_init_estimates(self):
        from conftest import table_config
        from asap.driver import initialize

        cfg = table_config([1.0, -1.0], init_estimates=[0.25, -0.5])
        state, _, trace = initialize(cfg)
        assert state.estimates.tolist() == [0.25, -0.5]
        assert [p.estimate0 for p in trace.init_records] == [0.25, -0.5]

    def test_stationary_and_per_turn_rewards(self):
        env = RewardTableEnvironment([1.0, [0.1, 0.2, 0.3]])
        assert env.aux_loss(0, env.theta0, 2) == -1.0
        assert env.aux_loss(1, env.theta0, 2) == -0.2

    def test_parameters_never_move(self):
        from conftest import table_config
        cfg = table_config([0.5, 0.0], horizon=5)
        trace = run(cfg)
        assert all(r.loss_target == 0.0 for r in trace.records)
        assert all(r.reward.pt == 0.0 for r in trace.records)
