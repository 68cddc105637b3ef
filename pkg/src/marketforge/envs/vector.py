"""Deterministic vectorized runner over K independent environment instances.

Stepping through the vector wrapper is bit-identical to stepping the K
environments one by one with the same seeds and actions; finished slots
auto-reset with a sub-seed derived from the slot's base seed and episode
count so replays stay reproducible.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

from ..errors import ShapeMismatch
from ..seeds import derive_seed
from .config import StepResult


def episode_seed(base_seed: int, episode: int) -> int:
    """Seed for the episode-th auto-reset of a slot (episode 0 = base seed)."""
    if episode == 0:
        return base_seed
    return derive_seed(base_seed, "episode", episode)


class VectorEnv:
    def __init__(self, envs: Sequence, n_workers: int = 1):
        if not envs:
            raise ValueError("need at least one environment")
        self.envs = list(envs)
        self.n_workers = max(1, int(n_workers))
        self._pool = ThreadPoolExecutor(self.n_workers) if self.n_workers > 1 else None
        self._base_seeds: list[int] = []
        self._episodes: list[int] = []
        self.states: list = []
        self.last_steps_per_sec = 0.0

    @property
    def n_envs(self) -> int:
        return len(self.envs)

    def reset(self, seeds: Sequence[int]) -> list:
        if len(seeds) != self.n_envs:
            raise ShapeMismatch(f"need {self.n_envs} seeds")
        self._base_seeds = [int(s) for s in seeds]
        self._episodes = [0] * self.n_envs
        self.states = [env.reset(seed) for env, seed in zip(self.envs, self._base_seeds)]
        return list(self.states)

    def step(self, actions: Sequence) -> list[StepResult]:
        if len(actions) != self.n_envs:
            raise ShapeMismatch(f"need {self.n_envs} actions")
        started = time.perf_counter()
        if self._pool is not None:
            results = list(self._pool.map(lambda ea: ea[0].step(ea[1]), zip(self.envs, actions)))
            for k, res in enumerate(results):
                self._after_step(k, res)
        else:
            results = []
            for k, env in enumerate(self.envs):
                res = env.step(actions[k])
                results.append(res)
                self._after_step(k, res)
        elapsed = time.perf_counter() - started
        self.last_steps_per_sec = self.n_envs / elapsed if elapsed > 0 else float("inf")
        return results

    def _after_step(self, k: int, res: StepResult) -> None:
        if res.done:
            self._episodes[k] += 1
            self.states[k] = self.envs[k].reset(
                episode_seed(self._base_seeds[k], self._episodes[k])
            )
        else:
            self.states[k] = res.state

    def close(self):
        if self._pool is not None:
            self._pool.shutdown(wait=True)

    vec_reset = reset
    vec_step = step
