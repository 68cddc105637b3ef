"""The plug-and-play policy contract, transitions, and the replay buffer."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any

import numpy as np

from ..errors import BufferTooSmall


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: Any  # discrete index/indices or a continuous pre-squash sample
    reward: float
    next_state: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring buffer; batches sample uniformly without replacement."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._storage: list[Transition] = []
        self._cursor = 0

    def add(self, tr: Transition) -> None:
        if len(self._storage) < self.capacity:
            self._storage.append(tr)
        else:
            self._storage[self._cursor] = tr
        self._cursor = (self._cursor + 1) % self.capacity

    def __len__(self) -> int:
        return len(self._storage)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        if len(self._storage) < batch_size:
            raise BufferTooSmall(f"{len(self._storage)} < {batch_size}")
        idx = rng.choice(len(self._storage), size=batch_size, replace=False)
        return [self._storage[i] for i in idx]


class Policy(ABC):
    """Common contract every agent and baseline strategy implements.

    ``act`` with explore=False must be a deterministic function of the
    parameters; learning state (replay contents, schedules) must not leak
    into greedy action choice.
    """

    @abstractmethod
    def act(self, state: np.ndarray, explore: bool = False):
        """Native action for this state (index, index vector, or sample)."""

    def to_env_action(self, action):
        """Translate a native action into what the environment consumes."""
        return action

    def observe(self, tr: Transition) -> None:
        """Record one transition; baselines ignore it."""

    def learn(self):
        """One learning update; returns loss value(s) or None."""
        return None

    def maybe_learn(self, step_index: int):
        """Hook for the training loop; policies apply their own schedule."""
        return None

    def reseed(self, seed: int) -> None:
        """Re-seed exploration/sampling streams (parameters untouched)."""

    def save_blob(self) -> bytes:
        return b""

    def load_blob(self, blob: bytes) -> None:
        if blob:
            raise ValueError("this policy has no parameters to load")


class RandomTradingPolicy(Policy):
    """Uniform random action over the discrete level grid; the no-skill baseline."""

    def __init__(self, n_assets: int, levels=(-1.0, 0.0, 1.0), seed: int = 0):
        self.n_assets = n_assets
        self.levels = tuple(levels)
        self._rng = np.random.Generator(np.random.Philox(key=seed))

    def act(self, state, explore: bool = False):
        idx = self._rng.integers(0, len(self.levels), size=self.n_assets)
        return np.array([self.levels[i] for i in idx])

    def reseed(self, seed: int) -> None:
        self._rng = np.random.Generator(np.random.Philox(key=seed))


class ConstantActionPolicy(Policy):
    """Always emits the same action; handy for planted ensemble candidates
    (always-buy, always-sell, hold)."""

    def __init__(self, action):
        self.action = np.asarray(action, dtype=np.float64)

    def act(self, state, explore: bool = False):
        return self.action.copy()
