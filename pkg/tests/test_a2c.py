import numpy as np
import pytest

from marketforge.agents import A2cConfig, A2cPolicy, Transition, returns_to_go
from marketforge.errors import EmptyRollout


def test_returns_to_go_geometric_sum():
    g = returns_to_go([1.0, 1.0, 1.0], [False, False, False], gamma=0.5)
    np.testing.assert_allclose(g, [1.75, 1.5, 1.0])


def test_returns_to_go_resets_at_done():
    g = returns_to_go([1.0, 1.0, 1.0, 1.0], [False, True, False, False], gamma=0.5)
    np.testing.assert_allclose(g, [1.5, 1.0, 1.5, 1.0])


def test_zero_advantage_leaves_actor_unchanged():
    cfg = A2cConfig(action_kind="discrete", entropy_beta=0.0, gamma=0.9, hidden=(8,))
    policy = A2cPolicy(state_dim=2, action_dim=2, config=cfg, seed=0)
    # zero critic output and zero rewards force G = V = 0 exactly
    policy.critic.set_parameters([np.zeros_like(p) for p in policy.critic.parameters()])
    before = [p.copy() for p in policy.actor.parameters()]
    rollout = [
        Transition(np.ones(2), 0, 0.0, np.ones(2), False),
        Transition(np.ones(2), 1, 0.0, np.ones(2), True),
    ]
    policy.learn(rollout)
    for a, b in zip(before, policy.actor.parameters()):
        np.testing.assert_array_equal(a, b)


def test_bandit_converges_to_better_arm():
    # one state, two actions, rewards (1, 0); updates every step
    cfg = A2cConfig(action_kind="discrete", gamma=0.9, lr=0.05, entropy_beta=0.01,
                    rollout_len=1, hidden=(8,))
    policy = A2cPolicy(state_dim=1, action_dim=2, config=cfg, seed=3)
    state = np.ones(1)
    for step in range(2000):
        a = policy.act(state, explore=True)
        reward = 1.0 if a == 0 else 0.0
        policy.observe(Transition(state, a, reward, state, True))
        policy.maybe_learn(step)
    logits = policy.actor.forward(state)
    probs = np.exp(logits - logits.max())
    probs /= probs.sum()
    assert probs[0] > 0.95


def test_continuous_actions_squash_into_box():
    cfg = A2cConfig(action_kind="continuous", hidden=(8,))
    policy = A2cPolicy(state_dim=3, action_dim=2, config=cfg, seed=1)
    state = np.random.default_rng(0).normal(size=3)
    for explore in (False, True):
        env_action = policy.to_env_action(policy.act(state, explore=explore))
        assert np.all(env_action >= -1.0) and np.all(env_action <= 1.0)
    # greedy action is deterministic
    assert np.array_equal(policy.act(state), policy.act(state))


def test_continuous_learning_moves_mean_toward_rewarded_side():
    cfg = A2cConfig(action_kind="continuous", lr=0.05, entropy_beta=0.0,
                    rollout_len=8, hidden=(8,), init_log_std=-0.3)
    policy = A2cPolicy(state_dim=1, action_dim=1, config=cfg, seed=5)
    state = np.ones(1)
    for step in range(1500):
        u = policy.act(state, explore=True)
        reward = float(np.tanh(u)[0])  # reward grows with the squashed action
        policy.observe(Transition(state, u, reward, state, True))
        policy.maybe_learn(step)
    assert policy.actor.forward(state)[0] > 0.5


def test_learn_empty_rollout_raises():
    policy = A2cPolicy(1, 2, A2cConfig(action_kind="discrete"), seed=0)
    with pytest.raises(EmptyRollout):
        policy.learn()


def test_losses_returned():
    policy = A2cPolicy(2, 2, A2cConfig(action_kind="discrete", hidden=(4,)), seed=0)
    rollout = [Transition(np.ones(2), 0, 1.0, np.ones(2), True)]
    policy_loss, value_loss = policy.learn(rollout)
    assert np.isfinite(policy_loss) and np.isfinite(value_loss)


def test_blob_round_trip_continuous():
    cfg = A2cConfig(action_kind="continuous", hidden=(6,))
    policy = A2cPolicy(4, 2, cfg, seed=9)
    policy.log_std[:] = [-0.25, 0.15]
    blob = policy.save_blob()
    twin = A2cPolicy(4, 2, cfg, seed=77)
    twin.load_blob(blob)
    s = np.random.default_rng(2).normal(size=4)
    assert np.array_equal(policy.act(s), twin.act(s))
    assert np.array_equal(policy.log_std, twin.log_std)
