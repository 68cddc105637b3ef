"""Fixture builders shared across test modules."""

from datetime import datetime, timedelta, timezone

import numpy as np

from marketforge.marketdata import BASE_COLUMNS, MarketDataset

UTC = timezone.utc


def day(k: int, base=datetime(2020, 1, 1, tzinfo=UTC)) -> datetime:
    return base + timedelta(days=k)


def make_dataset(closes, highs=None, lows=None, opens=None, volumes=None, start=None):
    """Build a dataset from a (T, N) close matrix with consistent OHLC."""
    closes = np.atleast_2d(np.asarray(closes, dtype=float))
    if closes.shape[0] == 1:
        closes = closes.T
    t_len, n = closes.shape
    if opens is None:
        opens = np.vstack([closes[:1], closes[:-1]])
    if highs is None:
        highs = np.maximum(opens, closes) * 1.001
    if lows is None:
        lows = np.minimum(opens, closes) * 0.999
    if volumes is None:
        volumes = np.full((t_len, n), 1000.0)
    values = np.stack([opens, highs, lows, closes, volumes], axis=2)
    start = start or datetime(2020, 1, 1, tzinfo=UTC)
    timestamps = [start + timedelta(days=k) for k in range(t_len)]
    tickers = [f"T{i}" for i in range(n)]
    return MarketDataset(timestamps, tickers, BASE_COLUMNS, values, "1d")


def random_ohlc(t_len=500, n=1, seed=0, scale=1.0, drift=0.0, vol=0.02):
    rng = np.random.default_rng(seed)
    closes = 100.0 * scale * np.exp(np.cumsum(rng.normal(drift, vol, size=(t_len, n)), axis=0))
    opens = np.vstack([closes[:1], closes[:-1]])
    jitter = np.abs(rng.normal(0, 0.01, size=(t_len, n)))
    highs = np.maximum(opens, closes) * (1 + jitter)
    lows = np.minimum(opens, closes) * (1 - jitter)
    return make_dataset(closes, highs=highs, lows=lows, opens=opens)
