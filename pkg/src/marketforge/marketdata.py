"""Market data ingestion: CSV files, a generic paginated REST source, and a
synthetic geometric-Brownian-motion generator, all merged into one aligned,
validated dataset.

Every source produces a :class:`RawTable` of per-ticker bars; :func:`align`
merges any number of tables into a single immutable :class:`MarketDataset`
(timestamps x tickers x columns tensor) with gaps forward-filled and a common
start date.
"""

from __future__ import annotations

import csv
import json
import time
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DuplicateKey,
    EmptyInput,
    EmptyResponse,
    HttpError,
    IntervalMismatch,
    MalformedRow,
    NonPsdCorrelation,
    RateLimited,
    SchemaMismatch,
)

INTERVALS = {
    "1m": timedelta(minutes=1),
    "5m": timedelta(minutes=5),
    "1h": timedelta(hours=1),
    "1d": timedelta(days=1),
}

BASE_COLUMNS = ("open", "high", "low", "close", "volume")

CSV_HEADER = ["timestamp", "ticker", "open", "high", "low", "close", "volume"]
CSV_HEADER_ADJ = CSV_HEADER + ["adjusted_close"]


def parse_timestamp(text: str) -> datetime:
    """Parse an ISO-8601 timestamp with explicit offset, normalized to UTC."""
    raw = text.strip()
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    dt = datetime.fromisoformat(raw)
    if dt.tzinfo is None:
        raise ValueError(f"timestamp {text!r} has no UTC offset")
    return dt.astimezone(timezone.utc)


def format_timestamp(dt: datetime) -> str:
    """Canonical ISO-8601 form: UTC with a trailing Z."""
    return dt.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


@dataclass(frozen=True)
class Bar:
    """One OHLCV bar for one asset; timestamp is the bar-open instant (UTC)."""

    timestamp: datetime
    ticker: str
    open: float
    high: float
    low: float
    close: float
    volume: float
    adjusted_close: float | None = None

    def validate(self) -> None:
        prices = (self.open, self.high, self.low, self.close)
        if not all(np.isfinite(p) and p > 0 for p in prices):
            raise ValueError("prices must be finite and positive")
        if self.low > min(self.open, self.close) or self.high < max(self.open, self.close):
            raise ValueError("low/high must bracket open and close")
        if not np.isfinite(self.volume) or self.volume < 0:
            raise ValueError("volume must be non-negative")
        if self.adjusted_close is not None and self.adjusted_close <= 0:
            raise ValueError("adjusted_close must be positive")


@dataclass(frozen=True)
class RawTable:
    """Bars from one source, sorted by (ticker, timestamp), duplicates rejected."""

    rows: tuple[Bar, ...]
    source_id: str
    interval: str

    def __post_init__(self):
        if self.interval not in INTERVALS:
            raise ValueError(f"unknown interval {self.interval!r}")

    @staticmethod
    def from_rows(rows: Iterable[Bar], source_id: str, interval: str) -> "RawTable":
        ordered = sorted(rows, key=lambda b: (b.ticker, b.timestamp))
        for prev, cur in zip(ordered, ordered[1:]):
            if prev.ticker == cur.ticker and prev.timestamp == cur.timestamp:
                raise DuplicateKey(f"{cur.ticker} @ {format_timestamp(cur.timestamp)}")
        return RawTable(tuple(ordered), source_id, interval)

    @property
    def tickers(self) -> tuple[str, ...]:
        seen = {}
        for bar in self.rows:
            seen.setdefault(bar.ticker, None)
        return tuple(seen)


class MarketDataset:
    """Immutable aligned panel: T timestamps x N tickers x F columns.

    The first five columns are always open/high/low/close/volume; feature
    columns are appended after them. The value tensor is read-only and safe
    to share across workers.
    """

    def __init__(
        self,
        timestamps: Sequence[datetime],
        tickers: Sequence[str],
        columns: Sequence[str],
        values: np.ndarray,
        interval: str,
    ):
        self.timestamps: tuple[datetime, ...] = tuple(timestamps)
        self.tickers: tuple[str, ...] = tuple(tickers)
        self.columns: tuple[str, ...] = tuple(columns)
        vals = np.asarray(values, dtype=np.float64)
        if vals.shape != (len(self.timestamps), len(self.tickers), len(self.columns)):
            raise ValueError(f"values shape {vals.shape} does not match axes")
        if interval not in INTERVALS:
            raise ValueError(f"unknown interval {interval!r}")
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("column names must be unique")
        if self.columns[:5] != BASE_COLUMNS:
            raise ValueError(f"first five columns must be {BASE_COLUMNS}")
        for prev, cur in zip(self.timestamps, self.timestamps[1:]):
            if cur <= prev:
                raise ValueError("timestamps must be strictly increasing")
        closes = vals[:, :, 3]
        if not np.all(np.isfinite(closes) & (closes > 0)):
            raise ValueError("close values must be finite and positive")
        vals = vals.copy()
        vals.setflags(write=False)
        self.values = vals
        self.interval = interval

    # -- shape ---------------------------------------------------------------

    @property
    def n_rows(self) -> int:
        return len(self.timestamps)

    @property
    def n_tickers(self) -> int:
        return len(self.tickers)

    def column_index(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise KeyError(f"no column {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        """T x N matrix for one column."""
        return self.values[:, :, self.column_index(name)]

    @property
    def closes(self) -> np.ndarray:
        return self.values[:, :, 3]

    # -- derivation ----------------------------------------------------------

    def with_columns(self, names: Sequence[str], arrays: Sequence[np.ndarray]) -> "MarketDataset":
        """New dataset with extra T x N columns appended (names must be fresh)."""
        for name in names:
            if name in self.columns:
                raise ValueError(f"column {name!r} already exists")
        stacked = [np.asarray(a, dtype=np.float64)[:, :, None] for a in arrays]
        values = np.concatenate([self.values] + stacked, axis=2)
        return MarketDataset(self.timestamps, self.tickers, tuple(self.columns) + tuple(names), values, self.interval)

    def drop_columns(self, names: Sequence[str]) -> "MarketDataset":
        keep = [i for i, c in enumerate(self.columns) if c not in set(names)]
        cols = tuple(self.columns[i] for i in keep)
        return MarketDataset(self.timestamps, self.tickers, cols, self.values[:, :, keep], self.interval)

    def slice_rows(self, start: int, stop: int) -> "MarketDataset":
        return MarketDataset(
            self.timestamps[start:stop], self.tickers, self.columns, self.values[start:stop], self.interval
        )

    def restrict(self, start: datetime, end: datetime) -> "MarketDataset":
        """Rows with start <= timestamp < end."""
        idx = [i for i, ts in enumerate(self.timestamps) if start <= ts < end]
        if not idx:
            raise EmptyInput(f"no rows in [{format_timestamp(start)}, {format_timestamp(end)})")
        return self.slice_rows(idx[0], idx[-1] + 1)

    def to_bars(self) -> list[Bar]:
        bars = []
        for t, ts in enumerate(self.timestamps):
            for n, ticker in enumerate(self.tickers):
                o, h, lo, c, v = self.values[t, n, :5]
                bars.append(Bar(ts, ticker, float(o), float(h), float(lo), float(c), float(v)))
        return bars

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, MarketDataset)
            and self.timestamps == other.timestamps
            and self.tickers == other.tickers
            and self.columns == other.columns
            and self.interval == other.interval
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self) -> str:
        return (
            f"MarketDataset(T={self.n_rows}, N={self.n_tickers}, "
            f"F={len(self.columns)}, interval={self.interval!r})"
        )


# ------------------------------------------------------------------ CSV files


def _parse_float(text: str, what: str) -> float:
    value = float(text)
    if not np.isfinite(value):
        raise ValueError(f"{what} is not finite")
    return value


def load_csv(path, interval: str) -> RawTable:
    """Load bars from a CSV file with the canonical header.

    Header must be ``timestamp,ticker,open,high,low,close,volume`` with an
    optional trailing ``adjusted_close``. Rows violating bar invariants raise
    :class:`MalformedRow` naming the offending line; repeated
    (ticker, timestamp) pairs raise :class:`DuplicateKey`.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch("empty file") from None
        if header == CSV_HEADER:
            has_adj = False
        elif header == CSV_HEADER_ADJ:
            has_adj = True
        else:
            raise SchemaMismatch(f"unexpected header {header!r}")
        rows = []
        for line_no, rec in enumerate(reader, start=2):
            if not rec:
                continue
            expected = 8 if has_adj else 7
            if len(rec) != expected:
                raise MalformedRow(line_no, f"expected {expected} fields, got {len(rec)}")
            try:
                adj = None
                if has_adj and rec[7].strip() != "":
                    adj = _parse_float(rec[7], "adjusted_close")
                bar = Bar(
                    timestamp=parse_timestamp(rec[0]),
                    ticker=rec[1],
                    open=_parse_float(rec[2], "open"),
                    high=_parse_float(rec[3], "high"),
                    low=_parse_float(rec[4], "low"),
                    close=_parse_float(rec[5], "close"),
                    volume=_parse_float(rec[6], "volume"),
                    adjusted_close=adj,
                )
                bar.validate()
            except (ValueError, IndexError) as exc:
                raise MalformedRow(line_no, str(exc)) from None
            rows.append(bar)
    return RawTable.from_rows(rows, source_id=str(path), interval=interval)


def _format_number(x: float) -> str:
    # repr() gives the shortest round-tripping decimal form
    return repr(float(x))


def write_csv(table_or_dataset, path) -> None:
    """Serialize bars in canonical form (sorted, UTC Z timestamps, repr floats)."""
    if isinstance(table_or_dataset, MarketDataset):
        rows = table_or_dataset.to_bars()
        rows.sort(key=lambda b: (b.ticker, b.timestamp))
    else:
        rows = list(table_or_dataset.rows)
    has_adj = any(b.adjusted_close is not None for b in rows)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER_ADJ if has_adj else CSV_HEADER)
        for b in rows:
            rec = [
                format_timestamp(b.timestamp),
                b.ticker,
                _format_number(b.open),
                _format_number(b.high),
                _format_number(b.low),
                _format_number(b.close),
                _format_number(b.volume),
            ]
            if has_adj:
                rec.append("" if b.adjusted_close is None else _format_number(b.adjusted_close))
            writer.writerow(rec)


# ------------------------------------------------------------------ REST source


@dataclass(frozen=True)
class DataSourceSpec:
    """Connection parameters for the generic REST OHLCV source."""

    base_url: str
    auth_token: str | None = None
    rate_limit: float = 5.0  # requests per second
    max_retries: int = 3
    timeout: float = 10.0  # seconds

    def __post_init__(self):
        if self.rate_limit <= 0:
            raise ValueError("rate_limit must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


class RateLimiter:
    """Paces request starts so no 1-second window sees more than `rate` starts.

    Enforces a minimum spacing of 1/rate between consecutive acquisitions.
    One limiter may be shared across concurrent fetches.
    """

    def __init__(self, rate: float, clock: Callable[[], float] = time.monotonic, sleep=time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.min_interval = 1.0 / rate
        self._clock = clock
        self._sleep = sleep
        self._next_allowed = clock()

    def acquire(self) -> None:
        now = self._clock()
        if now < self._next_allowed:
            self._sleep(self._next_allowed - now)
            now = self._next_allowed
        self._next_allowed = now + self.min_interval


def _http_get(url: str, headers: dict, timeout: float) -> tuple[int, bytes]:
    req = urllib.request.Request(url, headers=headers)
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read()


def fetch_http(
    spec: DataSourceSpec,
    tickers: Sequence[str],
    start: datetime,
    end: datetime,
    interval: str,
    limiter: RateLimiter | None = None,
    backoff_base: float = 0.1,
    sleep=time.sleep,
) -> RawTable:
    """Fetch bars from ``{base_url}/ohlcv`` with pagination, pacing, and retry.

    429 and 5xx responses are retried with exponential backoff up to
    ``spec.max_retries`` extra attempts per page; other HTTP failures raise
    immediately. Raises :class:`EmptyResponse` when the full scan yields
    zero bars.
    """
    if not tickers:
        raise ValueError("tickers must be non-empty")
    if start >= end:
        raise ValueError("start must precede end")
    if limiter is None:
        limiter = RateLimiter(spec.rate_limit)
    headers = {"Accept": "application/json"}
    if spec.auth_token:
        headers["Authorization"] = f"Bearer {spec.auth_token}"

    bars: list[Bar] = []
    page: int | None = 0
    while page is not None:
        query = urllib.parse.urlencode(
            {
                "tickers": ",".join(tickers),
                "start": format_timestamp(start),
                "end": format_timestamp(end),
                "interval": interval,
                "page": page,
            }
        )
        url = f"{spec.base_url.rstrip('/')}/ohlcv?{query}"
        payload = None
        last_status = None
        for attempt in range(spec.max_retries + 1):
            limiter.acquire()
            try:
                status, body = _http_get(url, headers, spec.timeout)
            except OSError as exc:  # connection-level failure, retryable
                last_status, body = 0, str(exc).encode()
                status = 0
            else:
                last_status = status
            if status == 200:
                payload = json.loads(body.decode("utf-8"))
                break
            if status == 429 or status >= 500 or status == 0:
                if attempt < spec.max_retries:
                    sleep(backoff_base * (2**attempt))
                continue
            raise HttpError(status, body.decode("utf-8", "replace")[:200])
        if payload is None:
            if last_status == 429:
                raise RateLimited(f"page {page} still throttled after {spec.max_retries + 1} attempts")
            raise HttpError(last_status or 0, f"page {page} failed after {spec.max_retries + 1} attempts")

        for rec in payload.get("bars", []):
            bar = Bar(
                timestamp=parse_timestamp(rec["t"]),
                ticker=rec["ticker"],
                open=float(rec["o"]),
                high=float(rec["h"]),
                low=float(rec["l"]),
                close=float(rec["c"]),
                volume=float(rec["v"]),
            )
            bar.validate()
            bars.append(bar)
        page = payload.get("next_page")

    if not bars:
        raise EmptyResponse(f"{spec.base_url} returned no bars")
    return RawTable.from_rows(bars, source_id=spec.base_url, interval=interval)


# ------------------------------------------------------------ synthetic source


@dataclass(frozen=True)
class GbmParams:
    """Per-ticker geometric Brownian motion parameters (annualized)."""

    s0: float | Sequence[float] = 100.0
    mu: float | Sequence[float] = 0.0
    sigma: float | Sequence[float] = 0.2
    correlation: np.ndarray | None = None  # defaults to identity
    periods_per_year: int = 252

    def __post_init__(self):
        if self.periods_per_year <= 0:
            raise ValueError("periods_per_year must be positive")


def _per_ticker(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"{name} must be scalar or length {n}")
    return arr


def _correlation_cholesky(corr: np.ndarray, n: int) -> np.ndarray:
    if corr is None:
        return np.eye(n)
    c = np.asarray(corr, dtype=np.float64)
    if c.shape != (n, n):
        raise ValueError(f"correlation must be {n}x{n}")
    if not np.allclose(c, c.T, atol=1e-12):
        raise NonPsdCorrelation("correlation matrix is not symmetric")
    if not np.allclose(np.diag(c), 1.0, atol=1e-12):
        raise NonPsdCorrelation("correlation diagonal must be 1")
    try:
        return np.linalg.cholesky(c)
    except np.linalg.LinAlgError:
        eigs = np.linalg.eigvalsh(c)
        if eigs.min() < -1e-10:
            raise NonPsdCorrelation(f"min eigenvalue {eigs.min():.3e}") from None
        jitter = (abs(eigs.min()) + 1e-12) * np.eye(n)
        return np.linalg.cholesky(c + jitter)


def generate_gbm(
    params: GbmParams,
    tickers: Sequence[str],
    t_steps: int,
    seed: int,
    start: datetime | None = None,
    interval: str = "1d",
) -> RawTable:
    """Simulate correlated GBM close paths and wrap them as OHLCV bars.

    Close follows S_{k+1} = S_k * exp((mu - sigma^2/2)*dt + sigma*sqrt(dt)*z)
    with dt = 1/periods_per_year and z correlated across tickers through the
    Cholesky factor of the correlation matrix. Each ticker draws from its own
    counter-based stream, so output is a pure function of (params, tickers,
    t_steps, seed).
    """
    if t_steps < 1:
        raise ValueError("t_steps must be >= 1")
    n = len(tickers)
    s0 = _per_ticker(params.s0, n, "s0")
    mu = _per_ticker(params.mu, n, "mu")
    sigma = _per_ticker(params.sigma, n, "sigma")
    if np.any(s0 <= 0):
        raise ValueError("s0 must be positive")
    if np.any(sigma < 0):
        raise ValueError("sigma must be non-negative")
    chol = _correlation_cholesky(params.correlation, n)

    z = np.empty((t_steps, n))
    hl_noise = np.empty((t_steps, n))
    volume = np.empty((t_steps, n))
    for i in range(n):
        g = np.random.Generator(np.random.Philox(key=seed).jumped(i))
        z[:, i] = g.standard_normal(t_steps)
        hl_noise[:, i] = g.standard_normal(t_steps)
        volume[:, i] = g.lognormal(mean=np.log(1e6), sigma=0.25, size=t_steps)
    z = z @ chol.T

    dt = 1.0 / params.periods_per_year
    drift = (mu - 0.5 * sigma**2) * dt
    shock = sigma * np.sqrt(dt)

    closes = np.empty((t_steps, n))
    closes[0] = s0
    for k in range(1, t_steps):
        closes[k] = closes[k - 1] * np.exp(drift + shock * z[k])

    opens = np.vstack([s0, closes[:-1]])
    eps = np.abs(hl_noise) * 0.002
    highs = np.maximum(opens, closes) * (1.0 + eps)
    lows = np.minimum(opens, closes) * (1.0 - eps)

    if start is None:
        start = datetime(2020, 1, 1, tzinfo=timezone.utc)
    step = INTERVALS[interval]
    bars = []
    for i, ticker in enumerate(tickers):
        for k in range(t_steps):
            bars.append(
                Bar(
                    timestamp=start + k * step,
                    ticker=ticker,
                    open=float(opens[k, i]),
                    high=float(highs[k, i]),
                    low=float(lows[k, i]),
                    close=float(closes[k, i]),
                    volume=float(volume[k, i]),
                )
            )
    return RawTable.from_rows(bars, source_id="gbm", interval=interval)


# ------------------------------------------------------------- binary dataset


def save_dataset(dataset: MarketDataset, path) -> None:
    """Persist a dataset as an .npz archive (timestamps stored as ISO strings)."""
    np.savez_compressed(
        path,
        timestamps=np.array([format_timestamp(ts) for ts in dataset.timestamps]),
        tickers=np.array(dataset.tickers),
        columns=np.array(dataset.columns),
        values=np.asarray(dataset.values),
        interval=np.array(dataset.interval),
    )


def load_dataset(path) -> MarketDataset:
    with np.load(path, allow_pickle=False) as archive:
        timestamps = [parse_timestamp(str(ts)) for ts in archive["timestamps"]]
        return MarketDataset(
            timestamps,
            [str(t) for t in archive["tickers"]],
            [str(c) for c in archive["columns"]],
            archive["values"],
            str(archive["interval"]),
        )


# ------------------------------------------------------------------- merging


def align(tables: Sequence[RawTable]) -> MarketDataset:
    """Merge raw tables into one aligned dataset.

    Timestamps are the union of observed instants from the common start (the
    latest first-observation across tickers) onward. Per-ticker gaps are
    forward-filled from the last observed close with volume 0.
    """
    if not tables:
        raise EmptyInput("no tables to align")
    interval = tables[0].interval
    for t in tables[1:]:
        if t.interval != interval:
            raise IntervalMismatch(f"{t.interval!r} != {interval!r}")

    by_ticker: dict[str, dict[datetime, Bar]] = {}
    for table in tables:
        for bar in table.rows:
            slot = by_ticker.setdefault(bar.ticker, {})
            if bar.timestamp in slot:
                raise DuplicateKey(f"{bar.ticker} @ {format_timestamp(bar.timestamp)}")
            slot[bar.timestamp] = bar
    if not by_ticker:
        raise EmptyInput("tables contain no rows")

    tickers = tuple(sorted(by_ticker))
    common_start = max(min(bars) for bars in by_ticker.values())
    timestamps = sorted({ts for bars in by_ticker.values() for ts in bars if ts >= common_start})

    values = np.empty((len(timestamps), len(tickers), 5))
    for n, ticker in enumerate(tickers):
        bars = by_ticker[ticker]
        # seed the fill with the last observation at or before the common start
        prior = [ts for ts in bars if ts <= common_start]
        last_close = bars[max(prior)].close if prior else None
        for t, ts in enumerate(timestamps):
            bar = bars.get(ts)
            if bar is not None:
                values[t, n] = (bar.open, bar.high, bar.low, bar.close, bar.volume)
                last_close = bar.close
            else:
                if last_close is None:
                    raise EmptyInput(f"{ticker} has no data at or before the common start")
                values[t, n] = (last_close, last_close, last_close, last_close, 0.0)

    return MarketDataset(timestamps, tickers, BASE_COLUMNS, values, interval)
