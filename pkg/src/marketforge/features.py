"""Feature engineering on an aligned dataset: technical indicators computed
from OHLCV, the turbulence risk index, and externally supplied series
(VIX, sentiment, fundamentals) merged without lookahead.

Indicator columns come with a companion ``<name>__ok`` validity-mask column;
:func:`build_feature_panel` drops the warm-up rows and the masks so downstream
environments only ever see fully defined values.
"""

from __future__ import annotations

import csv
from bisect import bisect_right
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Sequence

import numpy as np

from .errors import NameCollision, WindowTooLarge
from .marketdata import MarketDataset, parse_timestamp

INDICATOR_KINDS = ("sma", "ema", "macd", "rsi", "cci", "adx")

# conventional defaults; macd takes (fast, slow, signal)
DEFAULT_WINDOWS = {
    "sma": (20,),
    "ema": (20,),
    "macd": (12, 26, 9),
    "rsi": (14,),
    "cci": (20,),
    "adx": (14,),
}


@dataclass(frozen=True)
class IndicatorSpec:
    kind: str
    windows: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in INDICATOR_KINDS:
            raise ValueError(f"unknown indicator {self.kind!r}")
        windows = self.windows or DEFAULT_WINDOWS[self.kind]
        object.__setattr__(self, "windows", tuple(int(w) for w in windows))
        n_expected = 3 if self.kind == "macd" else 1
        if len(self.windows) != n_expected:
            raise ValueError(f"{self.kind} takes {n_expected} window(s)")
        if any(w < 1 for w in self.windows):
            raise ValueError("windows must be >= 1")

    @property
    def name(self) -> str:
        return f"{self.kind}_" + "_".join(str(w) for w in self.windows)


@dataclass(frozen=True)
class TurbulenceSeries:
    """Mahalanobis distance of daily returns from their trailing distribution.

    ``values[t]`` is NaN until ``lookback`` prior returns exist; ``defined``
    marks the computed entries.
    """

    values: np.ndarray
    defined: np.ndarray
    lookback: int


@dataclass(frozen=True)
class ExogenousSeries:
    """An externally supplied time series, market-wide or tagged to one ticker."""

    timestamps: tuple[datetime, ...]
    values: tuple[float, ...]
    name: str
    ticker: str | None = None  # None = market-wide

    def __post_init__(self):
        if len(self.timestamps) != len(self.values):
            raise ValueError("timestamps and values must have equal length")
        for prev, cur in zip(self.timestamps, self.timestamps[1:]):
            if cur <= prev:
                raise ValueError("series timestamps must be strictly increasing")


@dataclass(frozen=True)
class ExogenousAttachment:
    """How to merge one exogenous series (or a same-name per-ticker group)."""

    series: ExogenousSeries | tuple[ExogenousSeries, ...]
    policy: str = "fill_zero"  # or "forward_fill"
    lag: timedelta = timedelta(0)

    def __post_init__(self):
        if self.policy not in ("fill_zero", "forward_fill"):
            raise ValueError(f"unknown policy {self.policy!r}")


# ------------------------------------------------------------ indicator math
#
# All recursions run per ticker over the time axis. Warm-up entries are 0
# with mask 0; defined entries have mask 1.


def _sma(x: np.ndarray, w: int) -> tuple[np.ndarray, int]:
    out = np.zeros_like(x)
    csum = np.cumsum(x)
    out[w - 1 :] = (csum[w - 1 :] - np.concatenate([[0.0], csum[: -w]])) / w
    return out, w - 1


def _ema(x: np.ndarray, w: int) -> np.ndarray:
    alpha = 2.0 / (w + 1.0)
    out = np.empty_like(x)
    out[0] = x[0]
    for t in range(1, len(x)):
        out[t] = alpha * x[t] + (1.0 - alpha) * out[t - 1]
    return out


def _wilder_smooth(x: np.ndarray, w: int, first: int) -> np.ndarray:
    """Wilder running average: simple mean of the first w terms, then
    s_t = (s_{t-1} * (w-1) + x_t) / w. Values before index first+w-1 are 0."""
    out = np.zeros_like(x)
    start = first + w - 1
    if start >= len(x):
        return out
    out[start] = x[first : first + w].mean()
    for t in range(start + 1, len(x)):
        out[t] = (out[t - 1] * (w - 1) + x[t]) / w
    return out


def _rsi(close: np.ndarray, w: int) -> tuple[np.ndarray, int]:
    t_len = len(close)
    delta = np.diff(close)
    gain = np.where(delta > 0, delta, 0.0)
    loss = np.where(delta < 0, -delta, 0.0)
    # deltas start at bar 1, so averages are aligned to bar index 1 + (w-1)
    avg_gain = _wilder_smooth(np.concatenate([[0.0], gain]), w, first=1)
    avg_loss = np.concatenate([[0.0], loss])
    avg_loss = _wilder_smooth(avg_loss, w, first=1)
    out = np.zeros(t_len)
    first_defined = w  # bar index of the first full delta window
    for t in range(first_defined, t_len):
        g, l = avg_gain[t], avg_loss[t]
        if l == 0.0 and g == 0.0:
            out[t] = 50.0  # no movement over the window: neutral
        elif l == 0.0:
            out[t] = 100.0
        else:
            out[t] = 100.0 - 100.0 / (1.0 + g / l)
    return out, first_defined


def _cci(high: np.ndarray, low: np.ndarray, close: np.ndarray, w: int) -> tuple[np.ndarray, int]:
    tp = (high + low + close) / 3.0
    sma_tp, _ = _sma(tp, w)
    out = np.zeros_like(tp)
    for t in range(w - 1, len(tp)):
        window = tp[t - w + 1 : t + 1]
        dev = np.abs(window - sma_tp[t]).mean()
        out[t] = 0.0 if dev == 0.0 else (tp[t] - sma_tp[t]) / (0.015 * dev)
    return out, w - 1


def _adx(high: np.ndarray, low: np.ndarray, close: np.ndarray, w: int) -> tuple[np.ndarray, int]:
    t_len = len(close)
    up = high[1:] - high[:-1]
    down = low[:-1] - low[1:]
    plus_dm = np.where((up > down) & (up > 0), up, 0.0)
    minus_dm = np.where((down > up) & (down > 0), down, 0.0)
    tr = np.maximum(
        high[1:] - low[1:],
        np.maximum(np.abs(high[1:] - close[:-1]), np.abs(low[1:] - close[:-1])),
    )
    pad = lambda a: np.concatenate([[0.0], a])
    s_tr = _wilder_smooth(pad(tr), w, first=1)
    s_plus = _wilder_smooth(pad(plus_dm), w, first=1)
    s_minus = _wilder_smooth(pad(minus_dm), w, first=1)

    dx = np.zeros(t_len)
    for t in range(w, t_len):
        if s_tr[t] == 0.0:
            dx[t] = 0.0
            continue
        pdi = 100.0 * s_plus[t] / s_tr[t]
        mdi = 100.0 * s_minus[t] / s_tr[t]
        denom = pdi + mdi
        dx[t] = 0.0 if denom == 0.0 else 100.0 * abs(pdi - mdi) / denom

    out = np.zeros(t_len)
    first_defined = 2 * w - 1
    if first_defined < t_len:
        out[first_defined] = dx[w : 2 * w].mean()
        for t in range(first_defined + 1, t_len):
            out[t] = (out[t - 1] * (w - 1) + dx[t]) / w
    return out, first_defined


def indicator_warmup(spec: IndicatorSpec) -> int:
    """Index of the first fully defined value for this indicator."""
    if spec.kind == "sma":
        return spec.windows[0] - 1
    if spec.kind == "ema":
        return 0  # seeded by the first close
    if spec.kind == "macd":
        return 0  # difference of seeded EMAs, plus a seeded signal EMA
    if spec.kind == "rsi":
        return spec.windows[0]
    if spec.kind == "cci":
        return spec.windows[0] - 1
    if spec.kind == "adx":
        return 2 * spec.windows[0] - 1
    raise ValueError(spec.kind)


def compute_indicator(dataset: MarketDataset, spec: IndicatorSpec) -> MarketDataset:
    """Append one indicator (plus its validity mask) per ticker.

    Formulas: SMA = mean of the last w closes; EMA = recursive alpha=2/(w+1)
    seeded by the first close; MACD = EMA(fast) - EMA(slow) with an EMA(signal)
    of the MACD line; RSI = 100 - 100/(1+RS) with Wilder-smoothed gains and
    losses; CCI = (TP - SMA(TP)) / (0.015 * mean deviation); ADX = Wilder ADX
    from +DI/-DI.
    """
    t_len, n = dataset.n_rows, dataset.n_tickers
    if max(spec.windows) >= t_len:
        raise WindowTooLarge(f"{spec.name} needs more than {t_len} rows")
    high, low, close = dataset.column("high"), dataset.column("low"), dataset.column("close")

    warmup = indicator_warmup(spec)
    mask = np.zeros((t_len, n))
    mask[warmup:, :] = 1.0

    if spec.kind == "macd":
        fast, slow, signal = spec.windows
        macd = np.zeros((t_len, n))
        sig = np.zeros((t_len, n))
        for i in range(n):
            line = _ema(close[:, i], fast) - _ema(close[:, i], slow)
            macd[:, i] = line
            sig[:, i] = _ema(line, signal)
        return dataset.with_columns(
            [spec.name, f"{spec.name}_signal", f"{spec.name}__ok"], [macd, sig, mask]
        )

    out = np.zeros((t_len, n))
    for i in range(n):
        if spec.kind == "sma":
            out[:, i], _ = _sma(close[:, i], spec.windows[0])
        elif spec.kind == "ema":
            out[:, i] = _ema(close[:, i], spec.windows[0])
        elif spec.kind == "rsi":
            out[:, i], _ = _rsi(close[:, i], spec.windows[0])
        elif spec.kind == "cci":
            out[:, i], _ = _cci(high[:, i], low[:, i], close[:, i], spec.windows[0])
        elif spec.kind == "adx":
            out[:, i], _ = _adx(high[:, i], low[:, i], close[:, i], spec.windows[0])
    return dataset.with_columns([spec.name, f"{spec.name}__ok"], [out, mask])


# ---------------------------------------------------------------- turbulence


def compute_turbulence(dataset: MarketDataset, lookback: int = 252) -> TurbulenceSeries:
    """Mahalanobis turbulence of single-period returns.

    For each bar t with ``lookback`` prior returns available,
    d_t = (y_t - mu)' Sigma^-1 (y_t - mu) where y_t is the vector of simple
    returns into bar t and mu/Sigma are the mean and sample covariance of the
    trailing ``lookback`` returns (exclusive of y_t). Sigma is ridged with
    eps*I, eps = 1e-8 * trace(Sigma)/N, before the solve.
    """
    n = dataset.n_tickers
    if lookback < n + 2:
        raise ValueError(f"lookback must be >= N+2 = {n + 2}")
    closes = dataset.closes
    t_len = dataset.n_rows
    returns = closes[1:] / closes[:-1] - 1.0  # y_t lives at bar index t = row+1

    values = np.full(t_len, np.nan)
    defined = np.zeros(t_len, dtype=bool)
    for t in range(lookback + 1, t_len):
        window = returns[t - 1 - lookback : t - 1]  # returns into bars t-lookback .. t-1
        y = returns[t - 1]
        mu = window.mean(axis=0)
        sigma = np.cov(window, rowvar=False, ddof=1).reshape(n, n)
        eps = 1e-8 * np.trace(sigma) / n
        sigma = sigma + eps * np.eye(n)
        diff = y - mu
        values[t] = max(float(diff @ np.linalg.solve(sigma, diff)), 0.0)
        defined[t] = True
    return TurbulenceSeries(values=values, defined=defined, lookback=lookback)


def turbulence_series(dataset: MarketDataset, lookback: int = 252) -> ExogenousSeries:
    """Turbulence as a market-wide exogenous series, ready to attach."""
    turb = compute_turbulence(dataset, lookback)
    ts = [dataset.timestamps[t] for t in range(dataset.n_rows) if turb.defined[t]]
    vals = [float(turb.values[t]) for t in range(dataset.n_rows) if turb.defined[t]]
    return ExogenousSeries(tuple(ts), tuple(vals), name="turbulence")


# ----------------------------------------------------------- exogenous series


def attach_exogenous(
    dataset: MarketDataset,
    series: ExogenousSeries | Sequence[ExogenousSeries],
    policy: str = "fill_zero",
    lag: timedelta = timedelta(0),
) -> MarketDataset:
    """Merge an exogenous series as a new column without lookahead.

    Bar t receives the latest series value whose timestamp + lag <= t. Before
    the first effective datum, ``fill_zero`` writes 0 (valid) and
    ``forward_fill`` marks the row invalid in the mask. A market-wide series
    broadcasts across tickers; ticker-tagged series (possibly several sharing
    one name) fill their own ticker's slice.
    """
    group = [series] if isinstance(series, ExogenousSeries) else list(series)
    if not group:
        raise ValueError("no series given")
    name = group[0].name
    if any(s.name != name for s in group):
        raise ValueError("grouped series must share one name")
    if name in dataset.columns:
        raise NameCollision(name)
    if len(group) > 1 and any(s.ticker is None for s in group):
        raise ValueError("a market-wide series cannot be grouped")
    seen_tickers = set()
    for s in group:
        if s.ticker is not None and s.ticker in seen_tickers:
            raise ValueError(f"two series for ticker {s.ticker!r}")
        seen_tickers.add(s.ticker)

    t_len, n = dataset.n_rows, dataset.n_tickers
    col = np.zeros((t_len, n))
    ok = np.ones((t_len, n)) if policy == "fill_zero" else np.zeros((t_len, n))

    for s in group:
        if s.ticker is None:
            targets = range(n)
        else:
            if s.ticker not in dataset.tickers:
                continue
            targets = [dataset.tickers.index(s.ticker)]
        effective = [ts + lag for ts in s.timestamps]
        for t, bar_ts in enumerate(dataset.timestamps):
            idx = bisect_right(effective, bar_ts) - 1
            if idx >= 0:
                for i in targets:
                    col[t, i] = s.values[idx]
                    ok[t, i] = 1.0

    return dataset.with_columns([name, f"{name}__ok"], [col, ok])


def load_exogenous_csv(path) -> list[ExogenousSeries]:
    """Read ``timestamp,name,ticker_or_MARKET,value`` rows into series objects."""
    groups: dict[tuple[str, str | None], list[tuple[datetime, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["timestamp", "name", "ticker_or_MARKET", "value"]:
            raise ValueError(f"unexpected exogenous header {header!r}")
        for rec in reader:
            if not rec:
                continue
            ts = parse_timestamp(rec[0])
            ticker = None if rec[2] == "MARKET" else rec[2]
            groups.setdefault((rec[1], ticker), []).append((ts, float(rec[3])))
    out = []
    for (name, ticker), rows in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1] or "")):
        rows.sort(key=lambda r: r[0])
        out.append(
            ExogenousSeries(
                tuple(ts for ts, _ in rows), tuple(v for _, v in rows), name=name, ticker=ticker
            )
        )
    return out


# ----------------------------------------------------------------- the panel


def build_feature_panel(
    dataset: MarketDataset,
    specs: Sequence[IndicatorSpec] = (),
    exogenous: Sequence[ExogenousAttachment] = (),
) -> MarketDataset:
    """Apply indicators then exogenous merges in declaration order and trim.

    Leading rows where any validity mask is 0 are dropped; mask columns are
    removed so the final panel is fully defined everywhere.
    """
    if not specs and not exogenous:
        raise ValueError("nothing to compute: give specs and/or exogenous")
    out = dataset
    for spec in specs:
        out = compute_indicator(out, spec)
    for att in exogenous:
        out = attach_exogenous(out, att.series, att.policy, att.lag)

    mask_idx = [i for i, c in enumerate(out.columns) if c.endswith("__ok")]
    if mask_idx:
        masks = out.values[:, :, mask_idx]
        row_ok = np.all(masks == 1.0, axis=(1, 2))
        first_ok = int(np.argmax(row_ok)) if row_ok.any() else len(row_ok)
        if first_ok >= out.n_rows:
            raise WindowTooLarge("no row has all features defined")
        if not row_ok[first_ok:].all():
            raise ValueError("validity masks are not monotone; cannot trim from the front")
        out = out.slice_rows(first_ok, out.n_rows)
        out = out.drop_columns([out.columns[i] for i in mask_idx])
    return out
