"""Environment determinism, observation layout, reward arithmetic, termination."""

import copy

import numpy as np
import pytest

from throwcatch.config import Config, WorldConfig
from throwcatch.env import (
    FEATURE_DIM,
    REWARD_WEIGHTS,
    ThrowCatchEnv,
    combine_reward,
    oracle_features,
    reward_terms,
)
from throwcatch.errors import ContractViolation


def make_env(seed=0, **world_kwargs):
    world = WorldConfig(**world_kwargs)
    return ThrowCatchEnv(world, feature_fn=oracle_features, seed=seed)


# -- reward arithmetic -----------------------------------------------------


def test_distance_term_at_zero():
    terms = reward_terms(0.0, 0.0, 1.0, False, np.zeros(8), np.zeros(8))
    assert terms["r_dist"] == 1.0
    assert terms["r_obj"] == 1.0


def test_distance_term_tenth():
    # 0.23026 rounds ln(10)/10, so the term is 0.1 only to ~1.5e-6.
    terms = reward_terms(0.23026, 0.23026, 1.0, False, np.zeros(8), np.zeros(8))
    assert abs(terms["r_dist"] - 0.1) < 2e-6
    assert abs(terms["r_obj"] - 0.1) < 2e-6


def test_zero_torque_zero_action_penalty():
    terms = reward_terms(0.1, 0.1, 1.0, False, np.zeros(8), np.ones(8))
    assert terms["p_action"] == 0.0


def test_contact_term_binary():
    off = reward_terms(0.1, 0.1, 1.0, False, np.zeros(8), np.zeros(8))
    on = reward_terms(0.1, 0.1, 1.0, True, np.zeros(8), np.zeros(8))
    assert off["r_contact"] == 0.0 and on["r_contact"] == 1.0


def test_reward_weights_frozen():
    assert REWARD_WEIGHTS == {
        "r_dist": 4.0,
        "r_obj": 0.5,
        "r_contact": 1.0,
        "p_action": 0.0001,
        "p_hand": 1.0,
    }


def test_recombination_matches_manual_sum():
    rng = np.random.default_rng(0)
    for _ in range(20):
        terms = reward_terms(
            rng.uniform(0, 1),
            rng.uniform(0, 1),
            rng.uniform(0, 1),
            bool(rng.integers(2)),
            rng.normal(size=8),
            rng.normal(size=8),
        )
        manual = (
            4.0 * terms["r_dist"]
            + 0.5 * terms["r_obj"]
            + 1.0 * terms["r_contact"]
            + 0.0001 * terms["p_action"]
            + 1.0 * terms["p_hand"]
        )
        assert abs(combine_reward(terms) - manual) < 1e-12


def test_hand_penalty_negative():
    terms = reward_terms(0.1, 0.1, 0.0, False, np.zeros(8), np.zeros(8))
    assert terms["p_hand"] == -1.0


# -- observation layout ----------------------------------------------------


def test_observation_shapes():
    env = make_env()
    o_throw, o_catch, s = env.reset()
    assert o_throw.shape == (14,)
    assert o_catch.shape == (54,)
    assert s.shape == (80,)


def test_catch_observation_holds_feature_history():
    env = make_env()
    _, o_catch, _ = env.reset()
    assert o_catch[6:].shape == (6 * FEATURE_DIM,)


def test_step_returns_fresh_observations():
    env = make_env()
    env.reset()
    outcome, o_throw, o_catch, s = env.step(np.zeros(4), np.zeros(4))
    assert o_throw.shape == (14,) and o_catch.shape == (54,) and s.shape == (80,)
    assert np.isfinite(outcome.reward)


# -- determinism -----------------------------------------------------------


def _rollout(seed, n=25):
    env = make_env(seed=seed)
    env.reset()
    rng = np.random.default_rng(7)
    trace = []
    for _ in range(n):
        outcome, o_t, o_c, s = env.step(rng.uniform(-1, 1, 4), rng.uniform(-1, 1, 4))
        trace.append((outcome.reward, o_t.copy(), o_c.copy(), s.copy()))
        if outcome.terminated:
            break
    return trace


def test_bitwise_deterministic_given_seed():
    a = _rollout(3)
    b = _rollout(3)
    assert len(a) == len(b)
    for (ra, ota, oca, sa), (rb, otb, ocb, sb) in zip(a, b):
        assert ra == rb
        assert np.array_equal(ota, otb)
        assert np.array_equal(oca, ocb)
        assert np.array_equal(sa, sb)


def test_different_seeds_diverge():
    a = _rollout(3)
    b = _rollout(4)
    assert not np.array_equal(a[0][3], b[0][3])


# -- lifecycle and termination ---------------------------------------------


def test_step_before_reset_raises():
    env = make_env()
    with pytest.raises(ContractViolation):
        env.step(np.zeros(4), np.zeros(4))


def test_step_after_termination_raises():
    env = make_env()
    env.reset()
    for _ in range(1000):
        outcome, *_ = env.step(np.zeros(4), np.zeros(4))
        if outcome.terminated:
            break
    assert outcome.terminated
    with pytest.raises(ContractViolation):
        env.step(np.zeros(4), np.zeros(4))


def test_passive_episode_reaches_a_failure_cause():
    env = make_env()
    env.reset()
    for _ in range(1000):
        outcome, *_ = env.step(np.zeros(4), np.zeros(4))
        if outcome.terminated:
            break
    assert outcome.failure_cause in {
        "numeric-fault",
        "object-fell",
        "goal-deviation",
        "hands-too-close",
        "unexpected-contact",
        "out-of-view",
        "timeout",
    }


def test_episode_randomization_sampled_per_reset():
    env = make_env()
    env.reset()
    mass_a = env.state.obj.mass
    colors = [env.state.obj.color.copy()]
    for _ in range(5):
        env.reset()
        colors.append(env.state.obj.color.copy())
    assert len({tuple(c) for c in colors}) > 1
    assert 0.0 < mass_a


def test_randomization_disabled_is_nominal():
    world = WorldConfig()
    world.randomization = copy.deepcopy(world.randomization)
    world.randomization.enabled = False
    env = ThrowCatchEnv(world, feature_fn=oracle_features, seed=0)
    env.reset()
    assert env.state.rand.background_noise is None
    assert np.all(env.state.rand.obs_bias == 0.0)
    a = _env_state_vector(env)
    env2 = ThrowCatchEnv(world, feature_fn=oracle_features, seed=0)
    env2.reset()
    assert np.array_equal(a, _env_state_vector(env2))


def _env_state_vector(env):
    st = env.state
    return np.concatenate([st.thrower.q, st.catcher.q, st.obj.p, st.obj.v])


def test_actions_clipped():
    env = make_env()
    env.reset()
    outcome, *_ = env.step(np.full(4, 10.0), np.full(4, -10.0))
    w = env.world
    assert np.all(np.abs(env.state.thrower.cmd_qdot) <= w.arm_vel_scale + 1e-9)
    assert 0.0 <= env.state.catcher.cmd_grip <= w.grip_max_aperture
