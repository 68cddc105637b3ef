"""Sequential liquidation environment: one or two agents sell down a block
of shares over N periods against permanent and temporary price impact.

Per period k with total sale n_k:
    market price   P_k   = P_{k-1} + sigma*sqrt(tau)*xi_k - gamma_p * n_k
    execution      Pexec = P_{k-1} - eps*sign(n_k) - (eta/tau) * n_k
Agent j captures n_{j,k} * Pexec and is rewarded the negative incremental
shortfall n_{j,k}*(Pexec - P_0), minus lambda*(remaining*sigma*sqrt(tau))^2
inventory risk when risk aversion is positive.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import EpisodeFinished, FractionOutOfRange, ShapeMismatch
from .config import LiquidationConfig, LiquidationState, StepResult


class LiquidationEnv:
    def __init__(self, config: LiquidationConfig):
        self.config = config
        self._remaining: list[float] = []
        self._capture: list[float] = []
        self._price = config.initial_price
        self._k = 0
        self._done = True
        self._rng = None

    @property
    def nonconvex_regime(self) -> bool:
        return not self.config.convex_regime

    def _state(self) -> LiquidationState:
        return LiquidationState(remaining=tuple(self._remaining), price=self._price, k=self._k)

    def reset(self, seed: int = 0) -> LiquidationState:
        cfg = self.config
        self._rng = np.random.Generator(np.random.Philox(key=seed))
        per_agent = cfg.total_shares / cfg.n_agents
        self._remaining = [per_agent] * cfg.n_agents
        self._capture = [0.0] * cfg.n_agents
        self._price = cfg.initial_price
        self._k = 0
        self._done = False
        return self._state()

    def step(self, fractions) -> StepResult:
        if self._done:
            raise EpisodeFinished("liquidation finished; call reset()")
        cfg = self.config
        fr = np.atleast_1d(np.asarray(fractions, dtype=np.float64))
        if fr.shape != (cfg.n_agents,):
            raise ShapeMismatch(f"need {cfg.n_agents} fraction(s)")
        if np.any(~np.isfinite(fr)) or np.any(fr < 0.0) or np.any(fr > 1.0):
            raise FractionOutOfRange(str(fractions))

        k = self._k
        last_period = k == cfg.n_periods - 1
        sold = [rem if last_period else f * rem for f, rem in zip(fr, self._remaining)]
        n_total = sum(sold)

        tau = cfg.period_length
        sqrt_tau = math.sqrt(tau)
        xi = float(self._rng.standard_normal())  # drawn every step to keep streams aligned
        prev_price = self._price
        price = prev_price + cfg.volatility * sqrt_tau * xi - cfg.permanent_impact * n_total
        exec_price = (
            prev_price
            - cfg.fixed_cost * math.copysign(1.0, n_total) * (n_total != 0)
            - (cfg.temporary_impact / tau) * n_total
        )

        rewards = []
        for j in range(cfg.n_agents):
            self._capture[j] += sold[j] * exec_price
            self._remaining[j] = max(self._remaining[j] - sold[j], 0.0)
            reward = sold[j] * exec_price - sold[j] * cfg.initial_price
            if cfg.risk_aversion > 0.0:
                reward -= cfg.risk_aversion * (self._remaining[j] * cfg.volatility * sqrt_tau) ** 2
            rewards.append(reward)

        self._price = price
        self._k = k + 1
        self._done = self._k == cfg.n_periods

        info = {
            "sold": tuple(sold),
            "exec_price": exec_price,
            "price": price,
            "capture": tuple(self._capture),
            "nonconvex_regime": self.nonconvex_regime,
        }
        if self._done:
            per_share = cfg.total_shares / cfg.n_agents
            info["shortfall"] = tuple(per_share * cfg.initial_price - c for c in self._capture)
            info["total_shortfall"] = cfg.total_shares * cfg.initial_price - sum(self._capture)

        reward = rewards[0] if cfg.n_agents == 1 else np.array(rewards)
        return StepResult(state=self._state(), reward=reward, done=self._done, info=info)
