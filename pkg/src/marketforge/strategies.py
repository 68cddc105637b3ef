"""Classical baselines and the long-only mean-/min-variance optimizer,
exposed through the same policy contract as the learning agents so
backtests compare them head to head.

All portfolio policies act on the allocation environment: they read the
current drifted weights out of the observation vector and emit log-weight
scores, so holding a position costs no turnover and target weights pass
through the softmax unchanged.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .agents.policy import Policy
from .errors import WindowTooShort
from .marketdata import MarketDataset

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class WeightVector:
    """Portfolio weights on the simplex; index 0 is cash."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        object.__setattr__(self, "w", w)
        if w.ndim != 1 or len(w) < 2:
            raise ValueError("weights must be a vector over cash plus assets")
        if np.any(w < -SIMPLEX_TOL):
            raise ValueError("weights must be non-negative")
        if abs(w.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"weights sum to {w.sum()}, not 1")

    @classmethod
    def from_assets(cls, asset_weights, cash: float = 0.0) -> "WeightVector":
        return cls(np.concatenate([[cash], np.asarray(asset_weights, dtype=np.float64)]))

    @property
    def cash(self) -> float:
        return float(self.w[0])

    @property
    def assets(self) -> np.ndarray:
        return self.w[1:]


@dataclass(frozen=True)
class MomentEstimate:
    mu: np.ndarray  # per-period mean simple returns, length N
    sigma: np.ndarray  # N x N covariance, ridged PSD
    window: int


@dataclass(frozen=True)
class OptimizerConfig:
    risk_aversion: float = 1.0
    max_iters: int = 5000
    step_size: float | None = None  # None: 1/L from the curvature
    tolerance: float = 1e-10
    ridge: float = 1e-6

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.risk_aversion < 0:
            raise ValueError("risk_aversion must be >= 0")


@dataclass(frozen=True)
class OptimizeResult:
    weights: WeightVector
    converged: bool
    iterations: int
    objective: float
    objectives: tuple[float, ...]  # per-iteration trajectory


# ----------------------------------------------------------------- primitives


def project_to_simplex(x: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {w >= 0, sum w = 1} by sort-and-threshold."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("input must be finite")
    u = np.sort(x)[::-1]
    cumsum = np.cumsum(u)
    rho = 0
    for j in range(len(x)):
        if u[j] + (1.0 - cumsum[j]) / (j + 1) > 0:
            rho = j
    theta = (cumsum[rho] - 1.0) / (rho + 1)
    return np.maximum(x - theta, 0.0)


def estimate_moments(prices, window: int, end: int | None = None, ridge: float = 1e-6) -> MomentEstimate:
    """Sample mean and ridged sample covariance of trailing simple returns.

    ``prices`` is a (T, N) close matrix or a dataset; the window covers the
    ``window`` returns ending with the move into bar ``end`` (default: the
    last bar), so nothing after ``end`` is touched.
    """
    closes = prices.closes if isinstance(prices, MarketDataset) else np.asarray(prices, dtype=np.float64)
    if closes.ndim == 1:
        closes = closes[:, None]
    t_len, n = closes.shape
    if window < n + 2:
        raise WindowTooShort(f"window {window} < N+2 = {n + 2}")
    end = t_len - 1 if end is None else end
    if end - window < 0 or end >= t_len:
        raise WindowTooShort(f"window {window} does not fit before bar {end}")
    segment = closes[end - window : end + 1]
    returns = segment[1:] / segment[:-1] - 1.0
    mu = returns.mean(axis=0)
    sigma = np.cov(returns, rowvar=False, ddof=1).reshape(n, n)
    sigma = sigma + (ridge * np.trace(sigma) / n) * np.eye(n)
    return MomentEstimate(mu=mu, sigma=sigma, window=window)


def _projected_gradient(objective, gradient, n: int, cfg: OptimizerConfig, lipschitz: float) -> OptimizeResult:
    if cfg.step_size is not None:
        step = cfg.step_size
    elif lipschitz > 0:
        step = 1.0 / lipschitz
    else:
        step = 1.0
    w = np.full(n, 1.0 / n)
    trajectory = [objective(w)]
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iters + 1):
        w_next = project_to_simplex(w + step * gradient(w))
        trajectory.append(objective(w_next))
        delta = np.abs(w_next - w).max()
        w = w_next
        if delta < cfg.tolerance:
            converged = True
            break
    if not converged:
        warnings.warn("projected gradient did not converge; returning best iterate", RuntimeWarning)
    return OptimizeResult(
        weights=WeightVector.from_assets(w),
        converged=converged,
        iterations=iterations,
        objective=trajectory[-1],
        objectives=tuple(trajectory),
    )


def mean_variance_objective(w: np.ndarray, m: MomentEstimate, risk_aversion: float) -> float:
    return float(m.mu @ w - risk_aversion * w @ m.sigma @ w)


def mean_variance_optimize(m: MomentEstimate, cfg: OptimizerConfig = OptimizerConfig()) -> OptimizeResult:
    """max_w mu'w - lambda w'Sigma w over the long-only fully-invested simplex."""
    lam = cfg.risk_aversion
    sigma_norm = float(np.linalg.eigvalsh(m.sigma).max()) if lam > 0 else 0.0
    lipschitz = 2.0 * lam * sigma_norm
    if lipschitz == 0.0:
        # linear objective: any positive step reaches a vertex, scale to mu
        lipschitz = float(np.abs(m.mu).max()) or 1.0
    return _projected_gradient(
        objective=lambda w: mean_variance_objective(w, m, lam),
        gradient=lambda w: m.mu - 2.0 * lam * (m.sigma @ w),
        n=len(m.mu),
        cfg=cfg,
        lipschitz=lipschitz,
    )


def min_variance_optimize(m: MomentEstimate, cfg: OptimizerConfig = OptimizerConfig()) -> OptimizeResult:
    """min_w w'Sigma w over the same constraint set (the risk_aversion -> inf limit)."""
    sigma_norm = float(np.linalg.eigvalsh(m.sigma).max())
    return _projected_gradient(
        objective=lambda w: -float(w @ m.sigma @ w),
        gradient=lambda w: -2.0 * (m.sigma @ w),
        n=len(m.mu),
        cfg=cfg,
        lipschitz=2.0 * sigma_norm,
    )


# -------------------------------------------------------------- policy helpers


def scores_from_weights(w: np.ndarray) -> np.ndarray:
    """Scores whose softmax reproduces w exactly (zeros map to -inf)."""
    w = np.asarray(w, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.where(w > 0.0, np.log(np.maximum(w, 1e-300)), -np.inf)


def _split_portfolio_vector(x: np.ndarray, n_assets: int):
    """Inverse of PortfolioState.as_vector: (value, weights, prices, t)."""
    value = x[0]
    weights = x[1 : n_assets + 2]
    prices = x[n_assets + 2 : 2 * n_assets + 2]
    return value, weights, prices, int(x[-1])


class PassiveHoldPolicy(Policy):
    """Buy a fixed allocation on the first bar and never trade again."""

    def __init__(self, allocation: WeightVector, n_assets: int):
        if len(allocation.w) != n_assets + 1:
            raise ValueError("allocation length must be n_assets + 1")
        self.allocation = allocation
        self.n_assets = n_assets

    def act(self, state, explore: bool = False):
        _, weights, _, t = _split_portfolio_vector(np.asarray(state), self.n_assets)
        if t == 0:
            return scores_from_weights(self.allocation.w)
        return scores_from_weights(weights)


class EqualWeightPolicy(Policy):
    """1/N across assets, zero cash, rebalanced every bar."""

    def __init__(self, n_assets: int):
        self.n_assets = n_assets
        target = np.full(n_assets, 1.0 / n_assets)
        self._scores = scores_from_weights(np.concatenate([[0.0], target]))

    def act(self, state, explore: bool = False):
        return self._scores.copy()


class RebalancingPolicy(Policy):
    """Re-optimize weights every k bars from trailing moments only.

    Price history accumulates from observed states (optionally seeded with
    pre-episode bars), so the optimizer can never see ahead of the current
    bar. Before the estimation window fills, the policy holds cash.
    """

    def __init__(
        self,
        n_assets: int,
        optimizer: str = "mean_variance",  # or "min_variance"
        window: int = 252,
        every_k_bars: int | None = 21,
        cfg: OptimizerConfig = OptimizerConfig(),
        history: np.ndarray | None = None,
    ):
        if optimizer not in ("mean_variance", "min_variance"):
            raise ValueError("optimizer must be mean_variance or min_variance")
        self.n_assets = n_assets
        self.optimizer = optimizer
        self.window = window
        self.every_k_bars = every_k_bars
        self.cfg = cfg
        self.history = None if history is None else np.asarray(history, dtype=np.float64)
        self._prices: list[np.ndarray] = []
        self._bars_since_rebalance = None

    def _reset_episode(self):
        self._prices = [] if self.history is None else [row for row in self.history]
        self._bars_since_rebalance = None

    def act(self, state, explore: bool = False):
        _, weights, prices, t = _split_portfolio_vector(np.asarray(state), self.n_assets)
        if t == 0:
            self._reset_episode()
        self._prices.append(prices.copy())

        can_estimate = len(self._prices) >= self.window + 1
        due = False
        if can_estimate:
            if self._bars_since_rebalance is None:
                due = True
            else:
                self._bars_since_rebalance += 1
                due = (
                    self.every_k_bars is not None
                    and self._bars_since_rebalance >= self.every_k_bars
                )
        if due:
            moments = estimate_moments(np.vstack(self._prices), self.window, ridge=self.cfg.ridge)
            solve = mean_variance_optimize if self.optimizer == "mean_variance" else min_variance_optimize
            result = solve(moments, self.cfg)
            self._bars_since_rebalance = 0
            return scores_from_weights(result.weights.w)
        return scores_from_weights(weights)


def write_weights_csv(rows, path) -> None:
    """Export optimized allocations as ``timestamp,ticker,weight`` rows.

    ``rows`` is an iterable of (timestamp, tickers, WeightVector); the cash
    slot is written under the reserved ticker name CASH.
    """
    import csv

    from .marketdata import format_timestamp

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "ticker", "weight"])
        for timestamp, tickers, wv in rows:
            ts = format_timestamp(timestamp)
            writer.writerow([ts, "CASH", repr(wv.cash)])
            for ticker, weight in zip(tickers, wv.assets):
                writer.writerow([ts, ticker, repr(float(weight))])


def passive_hold(allocation: WeightVector, n_assets: int) -> PassiveHoldPolicy:
    return PassiveHoldPolicy(allocation, n_assets)


def equal_weight(n_assets: int) -> EqualWeightPolicy:
    return EqualWeightPolicy(n_assets)


def rebalancing_policy(n_assets: int, **kwargs) -> RebalancingPolicy:
    return RebalancingPolicy(n_assets, **kwargs)
