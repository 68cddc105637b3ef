import json

import pytest

from marketforge.cli import main
from marketforge.marketdata import load_dataset

CONFIG = """
seed = 7
train_steps = 150

[data]
kind = "gbm"
tickers = ["AAA", "BBB"]
t_steps = 240
s0 = 10.0
mu = 0.1
sigma = 0.15
periods_per_year = 252
seed = 3
start = "2021-01-01T00:00:00Z"

[features]
indicators = [["rsi", 14]]

[env]
initial_capital = 1000.0
hmax = 20
cost_rate = 0.001
reward_scale = 1.0

[agents.dqn_small]
kind = "dqn"
hidden = [8]
batch_size = 8
epsilon_decay_steps = 100

[agents.hold_all]
kind = "buyhold"

[agents.stay_cash]
kind = "cash"

[agents.ew]
kind = "equal_weight"

[rolling]
window_length = 60
validation_length = 20
test_length = 40
step = 40

[split]
train_start = "2021-01-15T00:00:00Z"
train_end = "2021-05-01T00:00:00Z"
valid_start = "2021-05-01T00:00:00Z"
valid_end = "2021-06-15T00:00:00Z"
test_start = "2021-06-15T00:00:00Z"
test_end = "2021-09-01T00:00:00Z"
"""


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(CONFIG)
    return path


def test_ingest_and_featurize_round_trip(config_path, tmp_path, capsys):
    raw = tmp_path / "raw.npz"
    assert main(["ingest", "--config", str(config_path), "--out", str(raw)]) == 0
    ds = load_dataset(raw)
    assert ds.n_rows == 240 and ds.n_tickers == 2

    panel_path = tmp_path / "panel.npz"
    assert main([
        "featurize", "--config", str(config_path), "--in", str(raw), "--out", str(panel_path)
    ]) == 0
    panel = load_dataset(panel_path)
    assert "rsi_14" in panel.columns
    assert panel.n_rows == 240 - 14


def test_train_writes_blobs_and_curves(config_path, tmp_path):
    out = tmp_path / "models"
    assert main(["train", "--config", str(config_path), "--out-dir", str(out)]) == 0
    for name in ("dqn_small", "hold_all", "stay_cash"):
        assert (out / f"{name}.mfnn").exists()
        curve = json.loads((out / f"{name}_curve.json").read_text())
        assert curve["name"] == name
    # portfolio baselines carry no trainable parameters
    assert not (out / "ew.mfnn").exists()


def test_backtest_trading_policy(config_path, tmp_path, capsys):
    out = tmp_path / "bt"
    code = main([
        "backtest", "--config", str(config_path), "--policy", "dqn_small", "--out-dir", str(out)
    ])
    assert code == 0
    payload = json.loads((out / "report.json").read_text())
    assert payload["strategies"][0]["name"] == "dqn_small"
    assert (out / "dqn_small_curve.csv").exists()
    assert (out / "dqn_small_trajectory.csv").exists()
    text = capsys.readouterr().out
    assert "Sharpe Ratio" in text


def test_backtest_portfolio_baseline(config_path, tmp_path, capsys):
    out = tmp_path / "bt_ew"
    code = main(["backtest", "--config", str(config_path), "--policy", "ew", "--out-dir", str(out)])
    assert code == 0
    payload = json.loads((out / "report.json").read_text())
    assert payload["strategies"][0]["name"] == "ew"


def test_ensemble_byte_identical_reruns(config_path, tmp_path, capsys):
    out_a = tmp_path / "a" / "report.json"
    out_b = tmp_path / "b" / "report.json"
    assert main(["ensemble", "--config", str(config_path), "--out", str(out_a)]) == 0
    assert main(["ensemble", "--config", str(config_path), "--out", str(out_b)]) == 0
    assert out_a.read_bytes() == out_b.read_bytes()
    assert (tmp_path / "a" / "curves.csv").read_bytes() == (tmp_path / "b" / "curves.csv").read_bytes()

    payload = json.loads(out_a.read_text())
    names = [s["name"] for s in payload["strategies"]]
    assert names[0] == "ensemble"
    assert set(names[1:]) == {"dqn_small", "hold_all", "stay_cash"}
    assert payload["meta"]["n_windows"] == 3


def test_seed_override_changes_results(config_path, tmp_path):
    out_a = tmp_path / "a" / "report.json"
    out_b = tmp_path / "b" / "report.json"
    assert main(["ensemble", "--config", str(config_path), "--out", str(out_a)]) == 0
    assert main(["--seed", "99", "ensemble", "--config", str(config_path), "--out", str(out_b)]) == 0
    assert json.loads(out_a.read_text())["meta"]["seed"] == 7
    assert json.loads(out_b.read_text())["meta"]["seed"] == 99


def test_report_rendering_and_figures(config_path, tmp_path, capsys):
    report_path = tmp_path / "run" / "report.json"
    main(["ensemble", "--config", str(config_path), "--out", str(report_path)])
    capsys.readouterr()

    assert main(["report", "--in", str(report_path), "--format", "text"]) == 0
    text = capsys.readouterr().out
    assert "Annual Return" in text
    assert (tmp_path / "run" / "curves.png").exists()

    out_dir = tmp_path / "rendered"
    assert main([
        "report", "--in", str(report_path), "--format", "csv", "--out-dir", str(out_dir)
    ]) == 0
    assert (out_dir / "report.csv").exists()
    assert (out_dir / "curves.csv").exists()
    png = out_dir / "curves.png"
    assert png.exists() and png.stat().st_size > 1000


def test_exit_code_2_on_config_errors(tmp_path, capsys):
    missing = tmp_path / "nope.toml"
    assert main(["ingest", "--config", str(missing), "--out", str(tmp_path / "x.npz")]) == 2

    bad = tmp_path / "bad.toml"
    bad.write_text("seed = 1\n[data]\nkind = 'gbm'\n[env]\ncost_rate = 0.5\n")
    assert main(["ingest", "--config", str(bad), "--out", str(tmp_path / "x.npz")]) == 2

    no_policy = tmp_path / "run.toml"
    no_policy.write_text(CONFIG)
    assert main([
        "backtest", "--config", str(no_policy), "--policy", "ghost", "--out-dir", str(tmp_path / "bt")
    ]) == 2


def test_exit_code_3_on_data_errors(tmp_path):
    cfg = tmp_path / "csvcfg.toml"
    cfg.write_text('seed = 1\n[data]\nkind = "csv"\npaths = ["missing.csv"]\n')
    code = main(["ingest", "--config", str(cfg), "--out", str(tmp_path / "x.npz")])
    assert code in (3, 4)  # FileNotFoundError surfaces as an OS error

    short = tmp_path / "short.toml"
    short.write_text(
        CONFIG.replace("t_steps = 240", "t_steps = 100")
    )
    assert main(["ensemble", "--config", str(short), "--out", str(tmp_path / "r.json")]) == 3
