"""Advantage actor-critic with explicit gradients.

Discrete mode uses a categorical head; continuous mode uses a Gaussian with a
state-independent learned log-std, squashed by tanh into the [-1, 1] action
box on the way to the environment. Returns-to-go are plain discounted sums
within the collected segment (no bootstrap), resetting at episode ends.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import EmptyRollout
from .mlp import (
    Mlp,
    mlp_from_blob,
    mlp_to_blob,
    sgd_step,
    vector_from_blob,
    vector_to_blob,
)
from .policy import Policy, Transition

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class A2cConfig:
    action_kind: str = "continuous"  # or "discrete"
    gamma: float = 0.99
    lr: float = 3e-3
    entropy_beta: float = 0.01
    rollout_len: int = 32
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    init_log_std: float = -0.5

    def __post_init__(self):
        if self.action_kind not in ("discrete", "continuous"):
            raise ValueError("action_kind must be discrete or continuous")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")


def returns_to_go(rewards, dones, gamma: float) -> np.ndarray:
    """Discounted suffix sums, restarting after terminal transitions."""
    out = np.empty(len(rewards))
    acc = 0.0
    for i in reversed(range(len(rewards))):
        acc = rewards[i] + gamma * acc * (0.0 if dones[i] else 1.0)
        out[i] = acc
    return out


class A2cPolicy(Policy):
    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        config: A2cConfig = A2cConfig(),
        seed: int = 0,
        obs_scale: np.ndarray | None = None,
    ):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.config = config
        self.obs_scale = None if obs_scale is None else np.asarray(obs_scale, dtype=np.float64)
        self.actor = Mlp([state_dim, *config.hidden, action_dim], config.activation, seed=seed)
        self.critic = Mlp([state_dim, *config.hidden, 1], config.activation, seed=seed + 1)
        self.log_std = np.full(action_dim, config.init_log_std) if config.action_kind == "continuous" else None
        self._rng = np.random.Generator(np.random.Philox(key=seed))
        self._rollout: list[Transition] = []
        self._pending_done = False

    def _obs(self, state) -> np.ndarray:
        state = np.asarray(state, dtype=np.float64)
        return state if self.obs_scale is None else state * self.obs_scale

    # ------------------------------------------------------------------ acting

    def _probs(self, logits: np.ndarray) -> np.ndarray:
        z = logits - logits.max()
        e = np.exp(z)
        return e / e.sum()

    def act(self, state, explore: bool = False):
        out = self.actor.forward(self._obs(state))
        if self.config.action_kind == "discrete":
            if explore:
                p = self._probs(out)
                return int(self._rng.choice(self.action_dim, p=p))
            return int(np.argmax(out))
        if explore:
            return out + np.exp(self.log_std) * self._rng.standard_normal(self.action_dim)
        return out.copy()

    def to_env_action(self, action):
        if self.config.action_kind == "continuous":
            return np.tanh(action)
        return action

    # ---------------------------------------------------------------- learning

    def observe(self, tr: Transition) -> None:
        self._rollout.append(tr)
        self._pending_done = tr.done

    def learn(self, rollout: list[Transition] | None = None):
        transitions = self._rollout if rollout is None else list(rollout)
        if not transitions:
            raise EmptyRollout("no transitions collected")
        cfg = self.config
        b = len(transitions)
        states = np.stack([self._obs(tr.state) for tr in transitions])
        rewards = [tr.reward for tr in transitions]
        dones = [tr.done for tr in transitions]
        goals = returns_to_go(rewards, dones, cfg.gamma)

        values = self.critic.forward(states).reshape(b)
        advantages = goals - values

        value_err = values - goals
        value_loss = float((value_err * value_err).mean())
        gw, gb, _ = self.critic.backward((2.0 * value_err / b)[:, None])
        sgd_step(self.critic, gw, gb, cfg.lr)

        if cfg.action_kind == "discrete":
            logits = self.actor.forward(states)
            actions = np.array([tr.action for tr in transitions], dtype=np.int64)
            shifted = logits - logits.max(axis=1, keepdims=True)
            expd = np.exp(shifted)
            probs = expd / expd.sum(axis=1, keepdims=True)
            log_probs = shifted - np.log(expd.sum(axis=1, keepdims=True))
            entropy = -(probs * log_probs).sum(axis=1)
            policy_loss = float(
                -(advantages * log_probs[np.arange(b), actions]).mean() - cfg.entropy_beta * entropy.mean()
            )
            onehot = np.zeros_like(probs)
            onehot[np.arange(b), actions] = 1.0
            upstream = (advantages[:, None] * (probs - onehot)) / b
            upstream += cfg.entropy_beta * probs * (log_probs + entropy[:, None]) / b
            gw, gb, _ = self.actor.backward(upstream)
            sgd_step(self.actor, gw, gb, cfg.lr)
        else:
            mean = self.actor.forward(states)
            samples = np.stack([np.asarray(tr.action, dtype=np.float64) for tr in transitions])
            std = np.exp(self.log_std)
            zscore = (samples - mean) / std
            log_prob = (-0.5 * zscore**2 - self.log_std - 0.5 * LOG_2PI).sum(axis=1)
            entropy = float((self.log_std + 0.5 * (LOG_2PI + 1.0)).sum())
            policy_loss = float(-(advantages * log_prob).mean() - cfg.entropy_beta * entropy)
            upstream = -(advantages[:, None] * zscore / std) / b
            grad_log_std = -(advantages[:, None] * (zscore**2 - 1.0)).mean(axis=0) - cfg.entropy_beta
            gw, gb, _ = self.actor.backward(upstream)
            sgd_step(self.actor, gw, gb, cfg.lr, extra=[(self.log_std, grad_log_std)])

        if rollout is None:
            self._rollout = []
            self._pending_done = False
        return policy_loss, value_loss

    def maybe_learn(self, step_index: int):
        if self._rollout and (len(self._rollout) >= self.config.rollout_len or self._pending_done):
            return self.learn()
        return None

    # ------------------------------------------------------------------- misc

    def reseed(self, seed: int) -> None:
        self._rng = np.random.Generator(np.random.Philox(key=seed))

    def save_blob(self) -> bytes:
        blob = mlp_to_blob(self.actor) + mlp_to_blob(self.critic)
        if self.log_std is not None:
            blob += vector_to_blob(self.log_std)
        return blob

    def load_blob(self, blob: bytes) -> None:
        offset = mlp_from_blob(blob, 0, self.actor)
        offset = mlp_from_blob(blob, offset, self.critic)
        if self.log_std is not None:
            self.log_std, _ = vector_from_blob(blob, offset)
