"""Portfolio-allocation environment: actions are scores softmaxed into
weights over cash plus N assets, with turnover costs against the drifted
previous allocation."""

from __future__ import annotations

import numpy as np

from ..errors import EpisodeFinished, NonFiniteAction, ShapeMismatch
from ..marketdata import MarketDataset
from .config import EnvConfig, PortfolioState, StepResult


def softmax_weights(scores: np.ndarray) -> np.ndarray:
    """Map scores to simplex weights; -inf entries pin a weight to zero."""
    scores = np.asarray(scores, dtype=np.float64)
    if np.any(np.isnan(scores)) or np.any(scores == np.inf):
        raise NonFiniteAction(str(scores))
    top = scores.max()
    if top == -np.inf:
        raise NonFiniteAction("all scores are -inf")
    with np.errstate(invalid="ignore"):
        shifted = np.where(scores == -np.inf, -np.inf, scores - top)
    expd = np.exp(shifted)
    return expd / expd.sum()


class PortfolioEnv:
    """Fractional reallocation over cash + N assets each bar.

    The score vector has the cash slot first. Turnover cost is
    ``cost_rate * value * sum_i |w_i - drifted_i|`` over the asset slots, and
    the next value is ``(value - cost) * (1 + sum_i w_i * y_i)`` with y the
    simple return of each asset into the next bar (cash returns 0).
    """

    def __init__(self, dataset: MarketDataset, config: EnvConfig = EnvConfig()):
        if dataset.n_rows < 2:
            raise ValueError("dataset must have at least 2 rows")
        self.dataset = dataset
        self.config = config
        self.n_assets = dataset.n_tickers
        self._closes = dataset.closes
        self._t = 0
        self._value = 0.0
        self._weights = None  # drifted weights, cash first
        self._done = True
        self._rng = None

    @property
    def observation_dim(self) -> int:
        n, f = self.n_assets, len(self.dataset.columns)
        return 1 + (n + 1) + n + n * f + 1

    @property
    def action_dim(self) -> int:
        return self.n_assets + 1

    def _state(self) -> PortfolioState:
        t = self._t
        return PortfolioState(
            value=self._value,
            weights=self._weights.copy(),
            prices=self._closes[t].copy(),
            features=self.dataset.values[t].ravel().copy(),
            t=t,
        )

    def reset(self, seed: int = 0) -> PortfolioState:
        self._rng = np.random.Generator(np.random.Philox(key=seed))
        self._t = 0
        self._value = float(self.config.initial_capital)
        self._weights = np.zeros(self.n_assets + 1)
        self._weights[0] = 1.0  # start fully in cash
        self._done = False
        return self._state()

    def step(self, scores) -> StepResult:
        if self._done:
            raise EpisodeFinished("episode is over; call reset()")
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (self.n_assets + 1,):
            raise ShapeMismatch(f"scores must have shape ({self.n_assets + 1},)")
        w = softmax_weights(scores)

        cfg = self.config
        t = self._t
        v_t = self._value
        turnover = float(np.abs(w[1:] - self._weights[1:]).sum())
        cost = cfg.cost_rate * v_t * turnover

        y = self._closes[t + 1] / self._closes[t] - 1.0
        growth = 1.0 + float(w[1:] @ y)
        v_next = (v_t - cost) * growth

        drifted = np.empty_like(w)
        drifted[0] = w[0] / growth
        drifted[1:] = w[1:] * (1.0 + y) / growth

        self._t = t + 1
        self._value = v_next
        self._weights = drifted
        if cfg.reward_kind == "delta_value":
            reward = (v_next - v_t) * cfg.reward_scale
        else:
            reward = float(np.log(v_next / v_t))

        self._done = self._t == self.dataset.n_rows - 1
        info = {
            "weights": w,
            "cost": cost,
            "risk_triggered": False,
            "v": v_t,
            "v_next": v_next,
        }
        return StepResult(state=self._state(), reward=reward, done=self._done, info=info)

    step_portfolio = step
