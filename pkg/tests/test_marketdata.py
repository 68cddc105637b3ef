import math
import threading
import time
from datetime import datetime, timedelta, timezone
from http.server import BaseHTTPRequestHandler, HTTPServer
from urllib.parse import parse_qs, urlparse

import json
import numpy as np
import pytest

from marketforge.errors import (
    DuplicateKey,
    EmptyInput,
    EmptyResponse,
    HttpError,
    IntervalMismatch,
    MalformedRow,
    NonPsdCorrelation,
    SchemaMismatch,
)
from marketforge.marketdata import (
    Bar,
    DataSourceSpec,
    GbmParams,
    RateLimiter,
    RawTable,
    align,
    fetch_http,
    generate_gbm,
    load_csv,
    write_csv,
)

UTC = timezone.utc


def day(k: int) -> datetime:
    return datetime(2020, 7, 1, tzinfo=UTC) + timedelta(days=k)


def make_bar(ts, ticker, close=10.0, volume=100.0):
    return Bar(ts, ticker, open=close, high=close * 1.01, low=close * 0.99, close=close, volume=volume)


# ----------------------------------------------------------------- CSV loading


def test_load_csv_two_tickers_three_days(tmp_path):
    lines = ["timestamp,ticker,open,high,low,close,volume"]
    for k in range(3):
        for ticker in ("AAA", "BBB"):
            lines.append(f"2020-07-0{k+1}T00:00:00Z,{ticker},10.0,10.5,9.5,10.2,1000")
    path = tmp_path / "bars.csv"
    path.write_text("\n".join(lines) + "\n")

    table = load_csv(path, "1d")
    assert len(table.rows) == 6
    keys = [(b.ticker, b.timestamp) for b in table.rows]
    assert keys == sorted(keys)
    assert table.rows[0].ticker == "AAA"
    assert table.rows[0].close == 10.2


def test_load_csv_low_above_high_names_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(
        "timestamp,ticker,open,high,low,close,volume\n"
        "2020-07-01T00:00:00Z,AAA,10,10.5,9.5,10.2,100\n"
        "2020-07-02T00:00:00Z,AAA,10,9.0,11.0,10.0,100\n"
    )
    with pytest.raises(MalformedRow) as exc:
        load_csv(path, "1d")
    assert exc.value.line_no == 3


def test_load_csv_duplicate_key(tmp_path):
    path = tmp_path / "dup.csv"
    path.write_text(
        "timestamp,ticker,open,high,low,close,volume\n"
        "2020-07-01T00:00:00Z,AAA,10,10.5,9.5,10.2,100\n"
        "2020-07-01T00:00:00Z,AAA,10,10.5,9.5,10.3,100\n"
    )
    with pytest.raises(DuplicateKey):
        load_csv(path, "1d")


def test_load_csv_schema_mismatch(tmp_path):
    path = tmp_path / "schema.csv"
    path.write_text("time,symbol,o,h,l,c,v\n")
    with pytest.raises(SchemaMismatch):
        load_csv(path, "1d")


def test_load_csv_requires_offset(tmp_path):
    path = tmp_path / "naive.csv"
    path.write_text(
        "timestamp,ticker,open,high,low,close,volume\n"
        "2020-07-01T00:00:00,AAA,10,10.5,9.5,10.2,100\n"
    )
    with pytest.raises(MalformedRow):
        load_csv(path, "1d")


def test_csv_round_trip_field_for_field(tmp_path):
    # oracle: re-serializing what was parsed reproduces the canonical bytes
    src = tmp_path / "src.csv"
    src.write_text(
        "timestamp,ticker,open,high,low,close,volume\n"
        "2020-07-01T00:00:00Z,AAA,10.25,10.5,9.75,10.3,1234.0\n"
        "2020-07-02T00:00:00Z,AAA,10.3,11.0,10.1,10.9,2048.5\n"
        "2020-07-01T00:00:00Z,BBB,99.9,100.2,99.0,100.0,777.0\n"
    )
    table = load_csv(src, "1d")
    out1 = tmp_path / "out1.csv"
    out2 = tmp_path / "out2.csv"
    write_csv(table, out1)
    write_csv(load_csv(out1, "1d"), out2)
    assert out1.read_bytes() == out2.read_bytes()
    reparsed = load_csv(out2, "1d")
    assert reparsed.rows == table.rows


def test_adjusted_close_round_trip(tmp_path):
    src = tmp_path / "adj.csv"
    src.write_text(
        "timestamp,ticker,open,high,low,close,volume,adjusted_close\n"
        "2020-07-01T00:00:00Z,AAA,10,10.5,9.5,10.2,100,9.8\n"
    )
    table = load_csv(src, "1d")
    assert table.rows[0].adjusted_close == 9.8
    out = tmp_path / "out.csv"
    write_csv(table, out)
    assert load_csv(out, "1d").rows == table.rows


# ------------------------------------------------------------------ GBM source


def test_gbm_degenerate_flat():
    params = GbmParams(s0=50.0, mu=0.0, sigma=0.0)
    table = generate_gbm(params, ["AAA", "BBB"], t_steps=20, seed=1)
    for bar in table.rows:
        assert bar.close == pytest.approx(50.0, abs=0.0)


def test_gbm_deterministic():
    params = GbmParams(s0=[10.0, 20.0], mu=[0.1, 0.0], sigma=[0.3, 0.1])
    a = generate_gbm(params, ["AAA", "BBB"], t_steps=50, seed=99)
    b = generate_gbm(params, ["AAA", "BBB"], t_steps=50, seed=99)
    assert a.rows == b.rows
    c = generate_gbm(params, ["AAA", "BBB"], t_steps=50, seed=100)
    assert a.rows != c.rows


def test_gbm_log_return_moments():
    # moment oracle straight from the generating formula
    sigma, ppy = 0.2, 252
    params = GbmParams(s0=100.0, mu=0.0, sigma=sigma, periods_per_year=ppy)
    table = generate_gbm(params, ["AAA"], t_steps=10_000, seed=7)
    closes = np.array([b.close for b in table.rows])
    log_ret = np.diff(np.log(closes))
    expected = sigma * math.sqrt(1.0 / ppy)
    assert expected * 0.95 <= log_ret.std(ddof=1) <= expected * 1.05


def test_gbm_correlation_applied():
    corr = np.array([[1.0, 0.9], [0.9, 1.0]])
    params = GbmParams(s0=100.0, mu=0.0, sigma=0.3, correlation=corr)
    table = generate_gbm(params, ["AAA", "BBB"], t_steps=4000, seed=3)
    ds = align([table])
    rets = np.diff(np.log(ds.closes), axis=0)
    sample = np.corrcoef(rets.T)[0, 1]
    assert abs(sample - 0.9) < 0.05


def test_gbm_bar_invariants_hold():
    params = GbmParams(s0=5.0, mu=0.2, sigma=0.5)
    table = generate_gbm(params, ["AAA"], t_steps=300, seed=11)
    for bar in table.rows:
        bar.validate()


def test_gbm_rejects_non_psd_correlation():
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues -1, 3
    with pytest.raises(NonPsdCorrelation):
        generate_gbm(GbmParams(correlation=bad), ["AAA", "BBB"], 10, seed=0)


# -------------------------------------------------------------------- aligning


def test_align_identical_timestamps():
    rows_a = [make_bar(day(k), "AAA", 10 + k) for k in range(4)]
    rows_b = [make_bar(day(k), "BBB", 20 + k) for k in range(4)]
    ds = align([RawTable.from_rows(rows_a + rows_b, "t", "1d")])
    assert ds.n_rows == 4 and ds.n_tickers == 2
    assert ds.columns == ("open", "high", "low", "close", "volume")
    assert ds.closes[2, 0] == 12 and ds.closes[2, 1] == 22


def test_align_forward_fill_gap():
    rows_a = [make_bar(day(k), "AAA", 10 + k) for k in range(5) if k != 2]
    rows_b = [make_bar(day(k), "BBB", 20 + k) for k in range(5)]
    ds = align([RawTable.from_rows(rows_a, "a", "1d"), RawTable.from_rows(rows_b, "b", "1d")])
    assert ds.n_rows == 5
    t2 = list(ds.timestamps).index(day(2))
    col_a = list(ds.tickers).index("AAA")
    # filled cell: open=high=low=close=last close, volume 0
    assert list(ds.values[t2, col_a]) == [11.0, 11.0, 11.0, 11.0, 0.0]


def test_align_common_start_rule():
    rows_a = [make_bar(day(k), "AAA", 10 + k) for k in range(5)]
    rows_b = [make_bar(day(k), "BBB", 20 + k) for k in range(2, 5)]
    ds = align([RawTable.from_rows(rows_a + rows_b, "x", "1d")])
    assert ds.timestamps[0] == day(2)
    assert ds.n_rows == 3


def test_align_interval_mismatch():
    a = RawTable.from_rows([make_bar(day(0), "AAA")], "a", "1d")
    b = RawTable.from_rows([make_bar(day(0), "BBB")], "b", "1h")
    with pytest.raises(IntervalMismatch):
        align([a, b])


def test_align_empty_input():
    with pytest.raises(EmptyInput):
        align([])


def test_align_cross_table_duplicate():
    a = RawTable.from_rows([make_bar(day(0), "AAA")], "a", "1d")
    b = RawTable.from_rows([make_bar(day(0), "AAA")], "b", "1d")
    with pytest.raises(DuplicateKey):
        align([a, b])


def test_align_output_clean_and_immutable():
    params = GbmParams(s0=[10, 20, 30], sigma=[0.4, 0.2, 0.1])
    ds = align([generate_gbm(params, ["A", "B", "C"], 200, seed=5)])
    assert np.all(np.isfinite(ds.values))
    assert np.all(ds.closes > 0)
    with pytest.raises(ValueError):
        ds.values[0, 0, 0] = 1.0


def test_dataset_round_trip_through_csv(tmp_path):
    params = GbmParams(s0=[10, 20], sigma=[0.3, 0.2])
    ds = align([generate_gbm(params, ["AAA", "BBB"], 30, seed=2)])
    path = tmp_path / "ds.csv"
    write_csv(ds, path)
    ds2 = align([load_csv(path, "1d")])
    assert ds2 == ds


# ---------------------------------------------------------------- HTTP adapter


class _StubHandler(BaseHTTPRequestHandler):
    """Serves canned OHLCV pages; scripted failures per request index."""

    def do_GET(self):
        server = self.server
        server.request_log.append(time.monotonic())
        parsed = urlparse(self.path)
        q = parse_qs(parsed.query)
        server.request_queries.append(q)
        idx = len(server.request_log) - 1
        script = server.status_script
        status = script[idx] if idx < len(script) else 200
        if status != 200:
            self.send_response(status)
            self.end_headers()
            return
        page = int(q.get("page", ["0"])[0])
        pages = server.pages
        payload = {
            "bars": pages[page] if page < len(pages) else [],
            "next_page": page + 1 if page + 1 < len(pages) else None,
        }
        body = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


def _bar_json(k: int, ticker="AAA", close=10.0):
    return {
        "t": f"2020-07-{k+1:02d}T00:00:00Z",
        "ticker": ticker,
        "o": close,
        "h": close * 1.01,
        "l": close * 0.99,
        "c": close,
        "v": 1000,
    }


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    server.request_log = []
    server.request_queries = []
    server.status_script = []
    server.pages = [[_bar_json(k) for k in range(3)]]
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()
    thread.join(timeout=5)


def _spec(server, **kw):
    base = f"http://127.0.0.1:{server.server_address[1]}"
    return DataSourceSpec(base_url=base, rate_limit=kw.pop("rate_limit", 200.0), **kw)


def test_fetch_http_passthrough(stub_server):
    table = fetch_http(
        _spec(stub_server), ["AAA"], day(0), day(10), "1d", backoff_base=0.001
    )
    assert len(table.rows) == 3
    assert table.rows[0].close == 10.0


def test_fetch_http_retries_on_429_then_succeeds(stub_server):
    stub_server.status_script = [429, 429, 200]
    table = fetch_http(
        _spec(stub_server, max_retries=3), ["AAA"], day(0), day(10), "1d", backoff_base=0.001
    )
    assert len(table.rows) == 3
    assert len(stub_server.request_log) == 3


def test_fetch_http_persistent_500_exhausts_retries(stub_server):
    stub_server.status_script = [500] * 10
    with pytest.raises(HttpError) as exc:
        fetch_http(
            _spec(stub_server, max_retries=2), ["AAA"], day(0), day(10), "1d", backoff_base=0.001
        )
    assert exc.value.status == 500
    assert len(stub_server.request_log) == 3  # 1 + 2 retries


def test_fetch_http_non_retryable_4xx_fails_fast(stub_server):
    stub_server.status_script = [404]
    with pytest.raises(HttpError) as exc:
        fetch_http(_spec(stub_server), ["AAA"], day(0), day(10), "1d", backoff_base=0.001)
    assert exc.value.status == 404
    assert len(stub_server.request_log) == 1


def test_fetch_http_empty_response(stub_server):
    stub_server.pages = [[]]
    with pytest.raises(EmptyResponse):
        fetch_http(_spec(stub_server), ["AAA"], day(0), day(10), "1d", backoff_base=0.001)


def test_fetch_http_pagination_and_query(stub_server):
    stub_server.pages = [
        [_bar_json(0), _bar_json(1)],
        [_bar_json(2)],
        [_bar_json(3)],
    ]
    table = fetch_http(_spec(stub_server), ["AAA", "BBB"], day(0), day(10), "1d", backoff_base=0.001)
    assert len(table.rows) == 4
    assert len(stub_server.request_log) == 3
    q0 = stub_server.request_queries[0]
    assert q0["tickers"] == ["AAA,BBB"]
    assert q0["interval"] == ["1d"]
    assert [q["page"][0] for q in stub_server.request_queries] == ["0", "1", "2"]


def test_fetch_http_respects_rate_limit(stub_server):
    stub_server.pages = [[_bar_json(k)] for k in range(12)]
    rate = 25.0
    fetch_http(_spec(stub_server, rate_limit=rate), ["AAA"], day(0), day(30), "1d", backoff_base=0.001)
    log = stub_server.request_log
    assert len(log) == 12
    for i, t0 in enumerate(log):
        in_window = [t for t in log if t0 <= t < t0 + 1.0]
        assert len(in_window) <= rate


def test_rate_limiter_spacing():
    clock = [0.0]
    slept = []

    def fake_clock():
        return clock[0]

    def fake_sleep(dt):
        slept.append(dt)
        clock[0] += dt

    rl = RateLimiter(10.0, clock=fake_clock, sleep=fake_sleep)
    starts = []
    for _ in range(5):
        rl.acquire()
        starts.append(clock[0])
    gaps = np.diff(starts)
    assert np.all(gaps >= 0.1 - 1e-12)


# ------------------------------------------------------------------- dataset ops


def test_dataset_slicing_and_columns():
    ds = align([generate_gbm(GbmParams(), ["A", "B"], 10, seed=0)])
    part = ds.slice_rows(2, 7)
    assert part.n_rows == 5
    assert part.timestamps[0] == ds.timestamps[2]
    extra = ds.with_columns(["feat"], [np.ones((10, 2))])
    assert extra.columns[-1] == "feat"
    assert np.all(extra.column("feat") == 1.0)
    with pytest.raises(ValueError):
        ds.with_columns(["close"], [np.ones((10, 2))])


def test_dataset_restrict_by_time():
    ds = align([generate_gbm(GbmParams(), ["A"], 10, seed=0)])
    sub = ds.restrict(ds.timestamps[3], ds.timestamps[8])
    assert sub.n_rows == 5  # half-open range
    assert sub.timestamps[0] == ds.timestamps[3]
