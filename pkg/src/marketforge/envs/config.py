"""Environment configuration and the state/result types shared by all
market environments."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

REWARD_KINDS = ("delta_value", "log_return")
RISK_INDICATORS = ("none", "turbulence", "vix")


@dataclass(frozen=True)
class EnvConfig:
    """Shared parameterization of the trading and portfolio environments."""

    initial_capital: float = 1_000_000.0
    hmax: int = 100  # max shares traded per asset per step
    cost_rate: float = 0.001  # fraction of trade notional, both sides
    reward_kind: str = "delta_value"
    reward_scale: float = 1e-4
    risk_indicator: str = "none"
    risk_threshold: float = float("inf")
    allow_short: bool = False
    allow_margin: bool = False
    gamma: float = 0.99  # agent-side discount, recorded with the env

    def __post_init__(self):
        if self.initial_capital <= 0:
            raise ValueError("initial_capital must be positive")
        if self.hmax < 1:
            raise ValueError("hmax must be >= 1")
        if not 0.0 <= self.cost_rate <= 0.1:
            raise ValueError("cost_rate must be in [0, 0.1]")
        if self.reward_kind not in REWARD_KINDS:
            raise ValueError(f"reward_kind must be one of {REWARD_KINDS}")
        if self.reward_scale <= 0:
            raise ValueError("reward_scale must be positive")
        if self.risk_indicator not in RISK_INDICATORS:
            raise ValueError(f"risk_indicator must be one of {RISK_INDICATORS}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")


@dataclass(frozen=True)
class TradingState:
    """Agent-visible state of the share-trading environment."""

    balance: float
    shares: np.ndarray  # integer holdings, length N
    prices: np.ndarray  # close of the current bar, length N
    features: np.ndarray  # all panel columns for the current bar, flattened
    t: int

    @property
    def value(self) -> float:
        return self.balance + float(self.shares @ self.prices)

    def as_vector(self) -> np.ndarray:
        """[balance, shares (N), prices (N), features (N*F), t]."""
        return np.concatenate(
            [[self.balance], self.shares.astype(np.float64), self.prices, self.features, [float(self.t)]]
        )


@dataclass(frozen=True)
class PortfolioState:
    """Agent-visible state of the portfolio-allocation environment.

    ``weights`` has the cash weight at index 0 followed by asset weights, and
    reflects drift since the last rebalance (it sums to one).
    """

    value: float
    weights: np.ndarray  # length N+1, cash first
    prices: np.ndarray
    features: np.ndarray
    t: int

    def as_vector(self) -> np.ndarray:
        """[value, weights (N+1), prices (N), features (N*F), t]."""
        return np.concatenate([[self.value], self.weights, self.prices, self.features, [float(self.t)]])


@dataclass(frozen=True)
class StepResult:
    state: Any
    reward: Any  # float, or an array of per-agent rewards
    done: bool
    info: dict


@dataclass(frozen=True)
class LiquidationConfig:
    """Discrete-time optimal-execution market with permanent and temporary
    price impact and an optional inventory-risk penalty."""

    total_shares: float
    n_periods: int
    period_length: float = 1.0
    initial_price: float = 50.0
    volatility: float = 0.0  # price std per sqrt(time unit)
    permanent_impact: float = 0.0
    temporary_impact: float = 0.0
    fixed_cost: float = 0.0
    risk_aversion: float = 0.0
    n_agents: int = 1

    def __post_init__(self):
        if self.total_shares <= 0:
            raise ValueError("total_shares must be positive")
        if self.n_periods < 1:
            raise ValueError("n_periods must be >= 1")
        if self.period_length <= 0:
            raise ValueError("period_length must be positive")
        if self.initial_price <= 0:
            raise ValueError("initial_price must be positive")
        for name in ("volatility", "permanent_impact", "temporary_impact", "fixed_cost", "risk_aversion"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.n_agents not in (1, 2):
            raise ValueError("n_agents must be 1 or 2")

    @property
    def convex_regime(self) -> bool:
        # temporary impact must dominate for the expected-shortfall objective
        # to be strictly convex in the schedule
        return self.temporary_impact / self.period_length > self.permanent_impact * self.period_length / 2.0


@dataclass(frozen=True)
class LiquidationState:
    remaining: tuple[float, ...]  # per-agent inventory
    price: float  # latest market price
    k: int  # period index

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.remaining, [self.price, float(self.k)]])
