from .config import (
    EnvConfig,
    LiquidationConfig,
    LiquidationState,
    PortfolioState,
    StepResult,
    TradingState,
)
from .liquidation import LiquidationEnv
from .portfolio import PortfolioEnv, softmax_weights
from .trading import TradingEnv
from .vector import VectorEnv, episode_seed

__all__ = [
    "EnvConfig",
    "LiquidationConfig",
    "LiquidationState",
    "LiquidationEnv",
    "PortfolioEnv",
    "PortfolioState",
    "softmax_weights",
    "StepResult",
    "TradingEnv",
    "TradingState",
    "VectorEnv",
    "episode_seed",
]
