"""Deep Q-learning with a replay buffer, epsilon-greedy exploration, and a
hard-synced target network.

Action handling for the share-trading environment: for up to 3 assets the
discrete space is the full cartesian product of per-asset levels (one flat
argmax); for wider universes one shared network emits per-asset heads and the
argmax runs per asset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import BufferTooSmall
from .mlp import Mlp, mlp_from_blob, mlp_to_blob, sgd_step
from .policy import Policy, ReplayBuffer, Transition


@dataclass(frozen=True)
class DqnConfig:
    action_levels: tuple[float, ...] = (-1.0, 0.0, 1.0)
    gamma: float = 0.99
    lr: float = 1e-3
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 2000
    target_sync_every: int = 100
    batch_size: int = 32
    buffer_capacity: int = 20_000
    learn_every: int = 1
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "relu"

    def __post_init__(self):
        # gamma 0 is allowed here: it turns the target into the raw reward
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        for eps in (self.epsilon_start, self.epsilon_end):
            if not 0.0 <= eps <= 1.0:
                raise ValueError("epsilon must be in [0, 1]")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    def epsilon_at(self, step: int) -> float:
        if self.epsilon_decay_steps <= 0:
            return self.epsilon_end
        frac = min(step / self.epsilon_decay_steps, 1.0)
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac


class DqnPolicy(Policy):
    def __init__(
        self,
        state_dim: int,
        n_actions: int,
        config: DqnConfig = DqnConfig(),
        seed: int = 0,
        heads: int = 1,
        joint_assets: int = 0,
        obs_scale: np.ndarray | None = None,
    ):
        self.state_dim = state_dim
        self.n_actions = n_actions
        self.heads = heads
        self.joint_assets = joint_assets  # >0: flat index decodes to a level tuple
        self.config = config
        self.obs_scale = None if obs_scale is None else np.asarray(obs_scale, dtype=np.float64)
        self.net = Mlp([state_dim, *config.hidden, heads * n_actions], config.activation, seed=seed)
        self.target = self.net.clone()
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self._rng = np.random.Generator(np.random.Philox(key=seed))
        self._explore_steps = 0
        self._learn_calls = 0

    def _obs(self, state: np.ndarray) -> np.ndarray:
        state = np.asarray(state, dtype=np.float64)
        return state if self.obs_scale is None else state * self.obs_scale

    # -------------------------------------------------------------- factories

    @classmethod
    def discrete(cls, state_dim: int, n_actions: int, config: DqnConfig = DqnConfig(), seed: int = 0):
        """Flat discrete action space (generic MDPs)."""
        return cls(state_dim, n_actions, config, seed)

    @classmethod
    def for_trading(
        cls,
        state_dim: int,
        n_assets: int,
        config: DqnConfig = DqnConfig(),
        seed: int = 0,
        obs_scale: np.ndarray | None = None,
    ):
        """Level-grid actions for the trading env; joint up to 3 assets, factored beyond."""
        n_levels = len(config.action_levels)
        if n_assets <= 3:
            return cls(state_dim, n_levels**n_assets, config, seed, joint_assets=n_assets, obs_scale=obs_scale)
        return cls(state_dim, n_levels, config, seed, heads=n_assets, obs_scale=obs_scale)

    # ------------------------------------------------------------------ acting

    def q_values(self, state: np.ndarray) -> np.ndarray:
        """(heads, n_actions) action-value estimates for one state."""
        out = self.net.forward(self._obs(state))
        return out.reshape(self.heads, self.n_actions)

    def act(self, state, explore: bool = False):
        if explore:
            eps = self.config.epsilon_at(self._explore_steps)
            self._explore_steps += 1
            action = act_epsilon_greedy(self, state, eps)
        else:
            action = act_epsilon_greedy(self, state, 0.0)
        return action

    def to_env_action(self, action):
        levels = self.config.action_levels
        if self.joint_assets > 0:
            idx, digits = int(action), []
            for _ in range(self.joint_assets):
                digits.append(levels[idx % len(levels)])
                idx //= len(levels)
            return np.array(digits)
        if self.heads > 1:
            return np.array([levels[i] for i in np.atleast_1d(action)])
        return action

    # ---------------------------------------------------------------- learning

    def observe(self, tr: Transition) -> None:
        self.buffer.add(tr)

    def learn(self) -> float:
        cfg = self.config
        if len(self.buffer) < cfg.batch_size:
            raise BufferTooSmall(f"{len(self.buffer)} < {cfg.batch_size}")
        batch = self.buffer.sample(cfg.batch_size, self._rng)
        b = cfg.batch_size
        states = np.stack([self._obs(tr.state) for tr in batch])
        next_states = np.stack([self._obs(tr.next_state) for tr in batch])
        rewards = np.array([tr.reward for tr in batch], dtype=np.float64)
        dones = np.array([tr.done for tr in batch], dtype=np.float64)
        actions = np.stack([np.atleast_1d(np.asarray(tr.action, dtype=np.int64)) for tr in batch])

        q_next = self.target.forward(next_states).reshape(b, self.heads, self.n_actions)
        best_next = q_next.max(axis=2)  # (B, heads)
        targets = rewards[:, None] + cfg.gamma * best_next * (1.0 - dones[:, None])

        q_all = self.net.forward(states).reshape(b, self.heads, self.n_actions)
        rows = np.arange(b)[:, None]
        cols = np.arange(self.heads)[None, :]
        q_sel = q_all[rows, cols, actions]
        td = q_sel - targets
        loss = float((td * td).mean())

        upstream = np.zeros_like(q_all)
        upstream[rows, cols, actions] = 2.0 * td / (b * self.heads)
        grad_w, grad_b, _ = self.net.backward(upstream.reshape(b, self.heads * self.n_actions))
        sgd_step(self.net, grad_w, grad_b, cfg.lr)

        self._learn_calls += 1
        if self._learn_calls % cfg.target_sync_every == 0:
            self.target.copy_parameters_from(self.net)
        return loss

    def maybe_learn(self, step_index: int):
        if len(self.buffer) >= self.config.batch_size and step_index % self.config.learn_every == 0:
            return self.learn()
        return None

    # ------------------------------------------------------------------- misc

    def reseed(self, seed: int) -> None:
        self._rng = np.random.Generator(np.random.Philox(key=seed))

    def save_blob(self) -> bytes:
        return mlp_to_blob(self.net) + mlp_to_blob(self.target)

    def load_blob(self, blob: bytes) -> None:
        offset = mlp_from_blob(blob, 0, self.net)
        mlp_from_blob(blob, offset, self.target)


def act_epsilon_greedy(policy: DqnPolicy, state, epsilon: float):
    """Uniform action with probability epsilon, else argmax with lowest-index
    tie-break; applied per head for factored action spaces."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    q = policy.q_values(state)
    choices = np.empty(policy.heads, dtype=np.int64)
    for h in range(policy.heads):
        if epsilon > 0.0 and policy._rng.random() < epsilon:
            choices[h] = policy._rng.integers(0, policy.n_actions)
        else:
            choices[h] = int(np.argmax(q[h]))
    return int(choices[0]) if policy.heads == 1 else choices
