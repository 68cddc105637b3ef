"""Performance metrics, the backtest engine, and the comparison report.

Metric conventions: cumulative return is (v_final - v_0)/v_0; annualized
return compounds it with a configurable day count over the number of trading
periods; the headline Sharpe is the per-period ratio scaled by
sqrt(periods_per_year); volatility is reported both as the per-period standard
deviation scaled to a year and, when at least two calendar years are present,
as the standard deviation of yearly returns. Undefined metrics (zero
volatility, zero drawdown) are reported as None, never as infinities.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import Sequence

import numpy as np

from .agents.training import state_vector
from .errors import TooFewYears, ZeroVolatility

PERIODS_PER_YEAR = {"1d": 252, "1h": 252 * 7, "5m": 252 * 7 * 12, "1m": 252 * 7 * 60}


@dataclass(frozen=True)
class EquityCurve:
    timestamps: tuple[datetime, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if len(self.timestamps) != len(values):
            raise ValueError("timestamps and values must have equal length")
        if len(values) == 0:
            raise ValueError("curve is empty")
        if np.any(values <= 0):
            raise ValueError("portfolio values must stay positive")

    @property
    def returns(self) -> np.ndarray:
        return self.values[1:] / self.values[:-1] - 1.0

    @property
    def n_periods(self) -> int:
        return len(self.values) - 1


@dataclass(frozen=True)
class MetricsReport:
    cumulative_return: float
    annualized_return: float
    annual_volatility: float | None  # per-period std scaled by sqrt(ppy)
    yearly_volatility: float | None  # std of calendar-year returns, needs >= 2 years
    sharpe: float | None  # annualized headline
    sharpe_per_period: float | None
    calmar: float | None
    max_drawdown: float
    n_periods: int
    periods_per_year: int
    risk_free_rate: float
    day_count: int

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------- metrics


def cumulative_return(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        raise ValueError("empty curve")
    return float((values[-1] - values[0]) / values[0])


def annualized_return(cum_return: float, t_days: int, day_count: int = 365) -> float:
    if cum_return <= -1.0:
        raise ValueError("cumulative return must exceed -1")
    if t_days <= 0:
        raise ValueError("t_days must be positive")
    return float((1.0 + cum_return) ** (day_count / t_days) - 1.0)


def annualized_volatility(yearly: Sequence[float]) -> float:
    """Sample standard deviation (n-1) of the yearly return series."""
    yearly = np.asarray(yearly, dtype=np.float64)
    if len(yearly) < 2:
        raise TooFewYears("need at least two yearly returns")
    return float(yearly.std(ddof=1))


def sharpe_ratio(returns, risk_free: float = 0.0, periods_per_year: int = 252) -> float:
    """Annualized Sharpe: per-period (mean - r_f)/std scaled by sqrt(ppy)."""
    returns = np.asarray(returns, dtype=np.float64)
    if len(returns) < 2:
        raise ValueError("need at least two returns")
    std = returns.std(ddof=1)
    if std == 0.0:
        raise ZeroVolatility("constant return series")
    per_period = (returns.mean() - risk_free) / std
    return float(per_period * np.sqrt(periods_per_year))


def max_drawdown(values) -> float:
    """min over t of v_t / max_{s<=t} v_s - 1; zero for monotone curves."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        raise ValueError("empty curve")
    peaks = np.maximum.accumulate(values)
    return float(np.min(values / peaks - 1.0))


def yearly_returns(curve: EquityCurve) -> list[float]:
    """Compounded return per calendar year present in the curve."""
    out = []
    year = curve.timestamps[0].year
    start_value = prev_value = curve.values[0]
    for ts, value in zip(curve.timestamps, curve.values):
        if ts.year != year:
            out.append(float(prev_value / start_value - 1.0))
            start_value = prev_value
            year = ts.year
        prev_value = value
    out.append(float(curve.values[-1] / start_value - 1.0))
    return out


def compute_metrics(
    curve: EquityCurve,
    periods_per_year: int = 252,
    risk_free: float = 0.0,
    day_count: int = 365,
) -> MetricsReport:
    cum = cumulative_return(curve.values)
    n = curve.n_periods
    annual = annualized_return(cum, max(n, 1), day_count)
    returns = curve.returns

    sharpe_pp = None
    sharpe_annual = None
    vol_scaled = None
    if n >= 2:
        std = returns.std(ddof=1)
        vol_scaled = float(std * np.sqrt(periods_per_year))
        if std > 0.0:
            sharpe_pp = float((returns.mean() - risk_free) / std)
            sharpe_annual = float(sharpe_pp * np.sqrt(periods_per_year))

    try:
        yearly_vol = annualized_volatility(yearly_returns(curve))
    except TooFewYears:
        yearly_vol = None

    mdd = max_drawdown(curve.values)
    calmar = annual / abs(mdd) if mdd != 0.0 else None
    return MetricsReport(
        cumulative_return=cum,
        annualized_return=annual,
        annual_volatility=vol_scaled,
        yearly_volatility=yearly_vol,
        sharpe=sharpe_annual,
        sharpe_per_period=sharpe_pp,
        calmar=calmar,
        max_drawdown=mdd,
        n_periods=n,
        periods_per_year=periods_per_year,
        risk_free_rate=risk_free,
        day_count=day_count,
    )


# ------------------------------------------------------------------- backtest


@dataclass(frozen=True)
class BacktestResult:
    name: str
    curve: EquityCurve
    metrics: MetricsReport
    trades: tuple[dict, ...]
    config: dict
    seed: int


def backtest(
    policy,
    env,
    seed: int = 0,
    name: str = "strategy",
    risk_free: float = 0.0,
    day_count: int = 365,
    periods_per_year: int | None = None,
) -> BacktestResult:
    """One full greedy episode; records the equity curve and metric bundle."""
    dataset = env.dataset
    if periods_per_year is None:
        periods_per_year = PERIODS_PER_YEAR.get(dataset.interval, 252)
    state = env.reset(seed)
    values = [float(env.config.initial_capital)]
    trades = []
    timestamps = [dataset.timestamps[0]]
    while True:
        action = policy.act(state_vector(state), explore=False)
        res = env.step(policy.to_env_action(action))
        values.append(res.info["v_next"])
        timestamps.append(dataset.timestamps[res.state.t])
        executed = res.info.get("executed", res.info.get("weights"))
        trades.append(
            {
                "t": res.state.t,
                "v": res.info["v_next"],
                "reward": float(np.asarray(res.reward).sum()),
                "action": np.asarray(executed, dtype=np.float64).tolist(),
                "cost": res.info["cost"],
                "risk_triggered": bool(res.info["risk_triggered"]),
            }
        )
        if res.done:
            break
        state = res.state
    curve = EquityCurve(tuple(timestamps), np.array(values))
    metrics = compute_metrics(curve, periods_per_year, risk_free, day_count)
    return BacktestResult(
        name=name,
        curve=curve,
        metrics=metrics,
        trades=tuple(trades),
        config=asdict(env.config),
        seed=seed,
    )


def write_trajectory_csv(result: BacktestResult, path) -> None:
    """Export one episode as ``t,v,reward,action_json,risk_triggered`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "v", "reward", "action_json", "risk_triggered"])
        for row in result.trades:
            writer.writerow(
                [
                    row["t"],
                    repr(row["v"]),
                    repr(row["reward"]),
                    json.dumps(row["action"]),
                    str(row["risk_triggered"]).lower(),
                ]
            )


def write_curve_csv(curve: EquityCurve, path) -> None:
    """Export ``timestamp,value,return`` rows for any plotting tool."""
    from .marketdata import format_timestamp

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "value", "return"])
        returns = np.concatenate([[np.nan], curve.returns])
        for ts, value, ret in zip(curve.timestamps, curve.values, returns):
            writer.writerow([format_timestamp(ts), repr(float(value)), "" if np.isnan(ret) else repr(float(ret))])


# ------------------------------------------------------------------ comparison


@dataclass(frozen=True)
class StrategyMetrics:
    """The comparison-grid row: the headline numbers for one strategy."""

    name: str
    annual_return: float
    annual_volatility: float | None
    sharpe: float | None
    calmar: float | None
    max_drawdown: float
    n_periods: int


@dataclass(frozen=True)
class ComparisonReport:
    strategies: tuple[StrategyMetrics, ...]
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "strategies": [asdict(s) for s in self.strategies],
            "meta": self.meta,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        lines = ["name,annual_return,annual_volatility,sharpe,calmar,max_drawdown,n_periods"]
        for s in self.strategies:
            cells = [
                s.name,
                _csv_num(s.annual_return),
                _csv_num(s.annual_volatility),
                _csv_num(s.sharpe),
                _csv_num(s.calmar),
                _csv_num(s.max_drawdown),
                str(s.n_periods),
            ]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        rows = [
            ("Annual Return", [_pct(s.annual_return) for s in self.strategies]),
            ("Annual Volatility", [_pct(s.annual_volatility) for s in self.strategies]),
            ("Sharpe Ratio", [_ratio(s.sharpe) for s in self.strategies]),
            ("Calmar Ratio", [_ratio(s.calmar) for s in self.strategies]),
            ("Max Drawdown", [_pct(s.max_drawdown) for s in self.strategies]),
        ]
        label_width = max(len(label) for label, _ in rows)
        col_widths = [
            max(len(s.name), max(len(row[1][i]) for row in rows))
            for i, s in enumerate(self.strategies)
        ]
        header = "Metric".ljust(label_width) + "".join(
            "  " + s.name.rjust(w) for s, w in zip(self.strategies, col_widths)
        )
        lines = [header]
        for label, cells in rows:
            lines.append(
                label.ljust(label_width)
                + "".join("  " + cell.rjust(w) for cell, w in zip(cells, col_widths))
            )
        return "\n".join(lines) + "\n"


def _pct(x: float | None) -> str:
    return "n/a" if x is None else f"{x * 100:.1f}%"


def _ratio(x: float | None) -> str:
    return "n/a" if x is None else f"{x:.2f}"


def _csv_num(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def strategy_metrics(result: BacktestResult) -> StrategyMetrics:
    m = result.metrics
    return StrategyMetrics(
        name=result.name,
        annual_return=m.annualized_return,
        annual_volatility=m.annual_volatility,
        sharpe=m.sharpe,
        calmar=m.calmar,
        max_drawdown=m.max_drawdown,
        n_periods=m.n_periods,
    )


def compare(results: Sequence, meta: dict | None = None) -> ComparisonReport:
    """Build the comparison grid from backtest results or prebuilt rows."""
    if not results:
        raise ValueError("need at least one result")
    rows = []
    for r in results:
        rows.append(strategy_metrics(r) if isinstance(r, BacktestResult) else r)
    return ComparisonReport(strategies=tuple(rows), meta=dict(meta or {}))
