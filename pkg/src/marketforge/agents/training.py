"""The act -> step -> observe -> learn interaction loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..envs.vector import episode_seed
from ..seeds import derive_seed
from .policy import Policy, Transition


def state_vector(state) -> np.ndarray:
    if isinstance(state, np.ndarray):
        return state
    return state.as_vector()


def trading_observation_scale(dataset, config) -> np.ndarray:
    """Per-dimension affine scale for trading-env observations.

    Balance and holdings are expressed as fractions of initial capital,
    prices relative to the first bar, and each panel column by its max
    absolute value over the given rows. Fit this on the training slice only
    so nothing from validation or test leaks into the agent.
    """
    p0 = dataset.closes[0]
    col_scale = 1.0 / np.maximum(np.abs(dataset.values).max(axis=0), 1e-9)  # (N, F)
    return np.concatenate(
        [
            [1.0 / config.initial_capital],
            p0 / config.initial_capital,
            1.0 / p0,
            col_scale.ravel(),
            [1.0 / dataset.n_rows],
        ]
    )


@dataclass
class TrainResult:
    policy: Policy
    episode_returns: list[float] = field(default_factory=list)
    losses: list = field(default_factory=list)
    steps: int = 0


def train_agent(policy: Policy, env, steps: int, seed: int = 0) -> TrainResult:
    """Run the interaction loop for ``steps`` environment steps.

    Fully deterministic per seed: the policy's exploration stream is reseeded
    from ``seed`` and each episode's reset seed is derived from (seed,
    episode index). With steps=0 the policy is returned untouched.
    """
    result = TrainResult(policy=policy)
    if steps <= 0:
        return result
    policy.reseed(derive_seed(seed, "policy"))
    episode = 0
    state = env.reset(episode_seed(seed, episode))
    ep_return = 0.0
    for step_index in range(1, steps + 1):
        obs = state_vector(state)
        action = policy.act(obs, explore=True)
        res = env.step(policy.to_env_action(action))
        policy.observe(
            Transition(
                state=obs,
                action=action,
                reward=float(np.asarray(res.reward).sum()),
                next_state=state_vector(res.state),
                done=res.done,
            )
        )
        loss = policy.maybe_learn(step_index)
        if loss is not None:
            result.losses.append(loss)
        ep_return += float(np.asarray(res.reward).sum())
        if res.done:
            result.episode_returns.append(ep_return)
            ep_return = 0.0
            episode += 1
            state = env.reset(episode_seed(seed, episode))
        else:
            state = res.state
        result.steps = step_index
    return result
