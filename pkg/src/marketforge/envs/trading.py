"""Multi-stock trading environment with transaction costs, flexible account
constraints, and indicator-driven crash protection."""

from __future__ import annotations

import numpy as np

from ..errors import EpisodeFinished, NonFiniteAction, ShapeMismatch
from ..marketdata import MarketDataset
from .config import EnvConfig, StepResult, TradingState


class TradingEnv:
    """Gym-contract environment trading integer share lots of N assets.

    Actions are vectors in [-1, 1]^N; entry i maps to a desired share delta
    of round(action_i * hmax). Sells execute before buys; buys run in
    ascending asset order and are clipped to available cash when margin is
    disallowed. All fills price at the current bar's close with
    ``cost_rate`` of notional charged on every trade.
    """

    def __init__(self, dataset: MarketDataset, config: EnvConfig = EnvConfig()):
        if dataset.n_rows < 2:
            raise ValueError("dataset must have at least 2 rows")
        self.dataset = dataset
        self.config = config
        self.n_assets = dataset.n_tickers
        self._closes = dataset.closes
        self._risk_values = None
        if config.risk_indicator != "none":
            col = dataset.column(config.risk_indicator)
            self._risk_values = col[:, 0]  # market-wide, broadcast across tickers
        self._t = 0
        self._balance = 0.0
        self._shares = np.zeros(self.n_assets, dtype=np.int64)
        self._done = True
        self._rng = None

    @property
    def observation_dim(self) -> int:
        n, f = self.n_assets, len(self.dataset.columns)
        return 1 + n + n + n * f + 1

    @property
    def action_dim(self) -> int:
        return self.n_assets

    def _state(self) -> TradingState:
        t = self._t
        return TradingState(
            balance=self._balance,
            shares=self._shares.copy(),
            prices=self._closes[t].copy(),
            features=self.dataset.values[t].ravel().copy(),
            t=t,
        )

    def reset(self, seed: int = 0) -> TradingState:
        self._rng = np.random.Generator(np.random.Philox(key=seed))
        self._t = 0
        self._balance = float(self.config.initial_capital)
        self._shares = np.zeros(self.n_assets, dtype=np.int64)
        self._done = False
        return self._state()

    def step(self, action) -> StepResult:
        if self._done:
            raise EpisodeFinished("episode is over; call reset()")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.n_assets,):
            raise ShapeMismatch(f"action must have shape ({self.n_assets},)")
        if not np.all(np.isfinite(action)):
            raise NonFiniteAction(str(action))

        cfg = self.config
        t = self._t
        prices = self._closes[t]
        desired = np.rint(np.clip(action, -1.0, 1.0) * cfg.hmax).astype(np.int64)

        risk_triggered = False
        if self._risk_values is not None and self._risk_values[t] > cfg.risk_threshold:
            desired = -self._shares.copy()  # liquidate everything, block buys
            risk_triggered = True

        v_t = self._balance + float(self._shares @ prices)
        executed = np.zeros(self.n_assets, dtype=np.int64)
        cost_paid = 0.0

        # sells first, freeing cash for the buy pass
        for i in range(self.n_assets):
            if desired[i] >= 0:
                continue
            qty = -int(desired[i])
            if not cfg.allow_short:
                qty = min(qty, int(self._shares[i]))
            if qty <= 0:
                continue
            self._balance += qty * prices[i] * (1.0 - cfg.cost_rate)
            cost_paid += qty * prices[i] * cfg.cost_rate
            self._shares[i] -= qty
            executed[i] = -qty

        # buys in ascending index, greedily clipped to cash
        for i in range(self.n_assets):
            if desired[i] <= 0:
                continue
            qty = int(desired[i])
            unit = prices[i] * (1.0 + cfg.cost_rate)
            if not cfg.allow_margin:
                affordable = int(self._balance // unit)
                while affordable > 0 and affordable * unit > self._balance:
                    affordable -= 1
                qty = min(qty, max(affordable, 0))
            if qty <= 0:
                continue
            self._balance -= qty * unit
            cost_paid += qty * prices[i] * cfg.cost_rate
            self._shares[i] += qty
            executed[i] = qty

        self._t = t + 1
        next_prices = self._closes[self._t]
        v_next = self._balance + float(self._shares @ next_prices)
        if cfg.reward_kind == "delta_value":
            reward = (v_next - v_t) * cfg.reward_scale
        else:
            reward = float(np.log(v_next / v_t))

        self._done = self._t == self.dataset.n_rows - 1
        info = {
            "executed": executed,
            "cost": cost_paid,
            "risk_triggered": risk_triggered,
            "v": v_t,
            "v_next": v_next,
        }
        return StepResult(state=self._state(), reward=reward, done=self._done, info=info)
