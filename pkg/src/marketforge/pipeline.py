"""Orchestration: temporal splits with train-fit normalization, config-driven
dataset and agent construction, the rolling-window ensemble, and walk-forward
replay.

Everything downstream of the master seed is derived through stable hashes of
candidate names and window indices, so a run is reproducible byte for byte
and no result depends on registration order (except deliberate tie-breaking).
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .agents import (
    A2cConfig,
    A2cPolicy,
    ConstantActionPolicy,
    DqnConfig,
    DqnPolicy,
    Policy,
    RandomTradingPolicy,
    trading_observation_scale,
    train_agent,
)
from .envs import EnvConfig, TradingEnv
from .errors import ConfigError, EmptySlice, InsufficientData, OverlappingSplits
from .evaluation import (
    EquityCurve,
    MetricsReport,
    backtest,
    compute_metrics,
)
from .features import (
    ExogenousAttachment,
    IndicatorSpec,
    build_feature_panel,
    load_exogenous_csv,
    turbulence_series,
)
from .marketdata import (
    DataSourceSpec,
    GbmParams,
    MarketDataset,
    align,
    fetch_http,
    generate_gbm,
    load_csv,
    parse_timestamp,
)
from .seeds import derive_seed


# ------------------------------------------------------------- normalization


@dataclass(frozen=True)
class FeatureNormalizer:
    """Per-(ticker, column) affine standardization fit on training rows only.

    Price-bearing close and risk-indicator columns are left untouched so
    environment accounting and threshold semantics stay in raw units.
    """

    columns: tuple[str, ...]
    mean: np.ndarray  # (N, len(columns))
    std: np.ndarray

    PROTECTED = ("close", "turbulence", "vix")

    @classmethod
    def fit(cls, dataset: MarketDataset, columns: Sequence[str] | None = None) -> "FeatureNormalizer":
        if columns is None:
            columns = [c for c in dataset.columns if c not in cls.PROTECTED]
        idx = [dataset.column_index(c) for c in columns]
        block = dataset.values[:, :, idx]
        mean = block.mean(axis=0)
        std = block.std(axis=0, ddof=0)
        std = np.where(std < 1e-12, 1.0, std)
        return cls(columns=tuple(columns), mean=mean, std=std)

    def transform(self, dataset: MarketDataset) -> MarketDataset:
        idx = [dataset.column_index(c) for c in self.columns]
        values = np.array(dataset.values)
        values[:, :, idx] = (values[:, :, idx] - self.mean) / self.std
        return MarketDataset(dataset.timestamps, dataset.tickers, dataset.columns, values, dataset.interval)


# -------------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitSpec:
    """Three half-open [start, end) date ranges in strict temporal order."""

    train: tuple[datetime, datetime]
    valid: tuple[datetime, datetime]
    test: tuple[datetime, datetime]

    def __post_init__(self):
        for name, (start, end) in (("train", self.train), ("valid", self.valid), ("test", self.test)):
            if start >= end:
                raise OverlappingSplits(f"{name} range is empty or inverted")
        if not (self.train[1] <= self.valid[0] and self.valid[1] <= self.test[0]):
            raise OverlappingSplits("ranges must satisfy train <= valid <= test without overlap")


@dataclass(frozen=True)
class SplitResult:
    train: MarketDataset
    valid: MarketDataset
    test: MarketDataset
    normalizer: FeatureNormalizer | None = None


def split_dataset(dataset: MarketDataset, spec: SplitSpec, normalize: bool = False) -> SplitResult:
    """Slice the dataset into train/valid/test; optionally standardize feature
    columns with statistics fit on the training slice alone."""
    slices = {}
    for name, (start, end) in (("train", spec.train), ("valid", spec.valid), ("test", spec.test)):
        rows = [i for i, ts in enumerate(dataset.timestamps) if start <= ts < end]
        if not rows:
            raise EmptySlice(f"{name} range selects no rows")
        slices[name] = dataset.slice_rows(rows[0], rows[-1] + 1)
    normalizer = None
    if normalize:
        normalizer = FeatureNormalizer.fit(slices["train"])
        slices = {k: normalizer.transform(ds) for k, ds in slices.items()}
    return SplitResult(train=slices["train"], valid=slices["valid"], test=slices["test"], normalizer=normalizer)


@dataclass(frozen=True)
class RollingWindowSpec:
    window_length: int  # training bars
    validation_length: int
    test_length: int
    step: int

    def __post_init__(self):
        for name in ("window_length", "validation_length", "test_length", "step"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.validation_length < 2 or self.test_length < 2:
            raise ConfigError("validation and test slices need at least 2 bars")
        if self.step > self.test_length:
            raise ConfigError("step > test_length would leave untested gaps")


# ------------------------------------------------------------ config parsing


@dataclass
class RunConfig:
    seed: int
    data: dict
    features: dict = field(default_factory=dict)
    env: EnvConfig = field(default_factory=EnvConfig)
    agents: dict = field(default_factory=dict)
    split: SplitSpec | None = None
    rolling: RollingWindowSpec | None = None
    eval: dict = field(default_factory=dict)
    train_steps: int = 2000

    @classmethod
    def from_toml(cls, path) -> "RunConfig":
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML: {exc}") from None
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if "seed" not in raw:
            raise ConfigError("top-level seed is required")
        if "data" not in raw:
            raise ConfigError("[data] section is required")
        try:
            env = EnvConfig(**raw.get("env", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad [env] section: {exc}") from None
        split = None
        if "split" in raw:
            s = raw["split"]
            try:
                split = SplitSpec(
                    train=(parse_timestamp(s["train_start"]), parse_timestamp(s["train_end"])),
                    valid=(parse_timestamp(s["valid_start"]), parse_timestamp(s["valid_end"])),
                    test=(parse_timestamp(s["test_start"]), parse_timestamp(s["test_end"])),
                )
            except KeyError as exc:
                raise ConfigError(f"[split] missing {exc}") from None
        rolling = None
        if "rolling" in raw:
            try:
                rolling = RollingWindowSpec(**raw["rolling"])
            except TypeError as exc:
                raise ConfigError(f"bad [rolling] section: {exc}") from None
        agents = raw.get("agents", {})
        for name, spec in agents.items():
            if "kind" not in spec:
                raise ConfigError(f"[agents.{name}] needs a kind")
        return cls(
            seed=int(raw["seed"]),
            data=raw["data"],
            features=raw.get("features", {}),
            env=env,
            agents=agents,
            split=split,
            rolling=rolling,
            eval=raw.get("eval", {}),
            train_steps=int(raw.get("train_steps", 2000)),
        )


def build_dataset(data_cfg: dict) -> MarketDataset:
    """Materialize the [data] section: csv files, the REST source, or GBM."""
    kind = data_cfg.get("kind")
    if kind == "csv":
        interval = data_cfg.get("interval", "1d")
        tables = [load_csv(path, interval) for path in data_cfg["paths"]]
        return align(tables)
    if kind == "http":
        spec = DataSourceSpec(
            base_url=data_cfg["base_url"],
            auth_token=data_cfg.get("auth_token"),
            rate_limit=float(data_cfg.get("rate_limit", 5.0)),
            max_retries=int(data_cfg.get("max_retries", 3)),
            timeout=float(data_cfg.get("timeout", 10.0)),
        )
        table = fetch_http(
            spec,
            data_cfg["tickers"],
            parse_timestamp(data_cfg["start"]),
            parse_timestamp(data_cfg["end"]),
            data_cfg.get("interval", "1d"),
        )
        return align([table])
    if kind == "gbm":
        params = GbmParams(
            s0=data_cfg.get("s0", 100.0),
            mu=data_cfg.get("mu", 0.0),
            sigma=data_cfg.get("sigma", 0.2),
            correlation=np.array(data_cfg["correlation"]) if "correlation" in data_cfg else None,
            periods_per_year=int(data_cfg.get("periods_per_year", 252)),
        )
        table = generate_gbm(
            params,
            data_cfg["tickers"],
            int(data_cfg["t_steps"]),
            seed=int(data_cfg.get("seed", 0)),
            start=parse_timestamp(data_cfg["start"]) if "start" in data_cfg else None,
            interval=data_cfg.get("interval", "1d"),
        )
        return align([table])
    raise ConfigError(f"unknown data kind {kind!r}")


def build_features(dataset: MarketDataset, features_cfg: dict) -> MarketDataset:
    """Apply the [features] section; returns the dataset unchanged if empty."""
    specs = []
    for item in features_cfg.get("indicators", []):
        kind, *windows = item
        specs.append(IndicatorSpec(str(kind), tuple(int(w) for w in windows)))
    attachments = []
    if "turbulence_lookback" in features_cfg:
        series = turbulence_series(dataset, int(features_cfg["turbulence_lookback"]))
        attachments.append(ExogenousAttachment(series, policy="forward_fill"))
    policy = features_cfg.get("exogenous_policy", "fill_zero")
    lag = timedelta(days=float(features_cfg.get("exogenous_lag_days", 0)))
    for path in features_cfg.get("exogenous_files", []):
        for series in load_exogenous_csv(path):
            attachments.append(ExogenousAttachment(series, policy=policy, lag=lag))
    if not specs and not attachments:
        return dataset
    return build_feature_panel(dataset, specs, attachments)


# strategy kinds that act on the portfolio env; they carry no trainable
# parameters and only participate in single-policy backtests
PORTFOLIO_KINDS = ("equal_weight", "passive_hold", "mean_variance", "min_variance")

TRADING_KINDS = ("dqn", "a2c", "random", "buyhold", "cash")


def trading_agents(cfg: RunConfig) -> dict:
    return {n: a for n, a in cfg.agents.items() if a["kind"] not in PORTFOLIO_KINDS}


def build_policy(name: str, agent_cfg: dict, env: TradingEnv, seed: int) -> Policy:
    """Construct one trading-env candidate from its [agents.<name>] block."""
    kind = agent_cfg["kind"]
    options = {k: v for k, v in agent_cfg.items() if k not in ("kind", "train_steps")}
    if "hidden" in options:
        options["hidden"] = tuple(options["hidden"])
    if "action_levels" in options:
        options["action_levels"] = tuple(options["action_levels"])
    if kind in ("dqn", "a2c"):
        options.setdefault("gamma", env.config.gamma)
    obs_scale = trading_observation_scale(env.dataset, env.config)
    try:
        if kind == "dqn":
            cfg = DqnConfig(**options)
            return DqnPolicy.for_trading(env.observation_dim, env.n_assets, cfg, seed, obs_scale=obs_scale)
        if kind == "a2c":
            cfg = A2cConfig(action_kind="continuous", **options)
            return A2cPolicy(env.observation_dim, env.action_dim, cfg, seed, obs_scale=obs_scale)
        if kind == "random":
            return RandomTradingPolicy(env.n_assets, seed=seed)
        if kind == "buyhold":
            return ConstantActionPolicy(np.ones(env.n_assets))
        if kind == "cash":
            return ConstantActionPolicy(-np.ones(env.n_assets))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [agents.{name}] options: {exc}") from None
    raise ConfigError(f"unknown agent kind {kind!r} for {name}")


# ------------------------------------------------------------- training jobs


def candidate_seed(master_seed: int, name: str) -> int:
    return derive_seed(master_seed, name)


def run_training_job(
    cfg: RunConfig,
    dataset: MarketDataset,
    out_dir: Path | None = None,
) -> dict[str, Policy]:
    """Train every configured candidate on the train slice; persist blobs and
    learning curves when an output directory is given."""
    if cfg.split is None:
        raise ConfigError("training requires a [split] section")
    parts = split_dataset(dataset, cfg.split)
    env = TradingEnv(parts.train, cfg.env)
    trained: dict[str, Policy] = {}
    for name, agent_cfg in trading_agents(cfg).items():
        sub_seed = candidate_seed(cfg.seed, name)
        policy = build_policy(name, agent_cfg, env, sub_seed)
        steps = int(agent_cfg.get("train_steps", cfg.train_steps))
        result = train_agent(policy, env, steps=steps, seed=sub_seed)
        trained[name] = policy
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / f"{name}.mfnn").write_bytes(policy.save_blob())
            curve_payload = {
                "name": name,
                "episode_returns": result.episode_returns,
                "steps": result.steps,
                "seed": sub_seed,
            }
            (out_dir / f"{name}_curve.json").write_text(
                json.dumps(curve_payload, sort_keys=True, indent=2) + "\n"
            )
    return trained


# ---------------------------------------------------------- ensemble machinery


def ensemble_select(
    candidates: dict[str, Policy], valid_env, seed: int = 0
) -> tuple[str, dict[str, float | None]]:
    """Backtest each candidate greedily on the validation env; the winner has
    the highest Sharpe. Undefined Sharpe ranks below every defined value and
    exact ties go to the earlier-registered candidate."""
    if not candidates:
        raise ValueError("need at least one candidate")
    table: dict[str, float | None] = {}
    winner, best = None, None
    for name, policy in candidates.items():
        result = backtest(policy, valid_env, seed=seed, name=name)
        sharpe = result.metrics.sharpe
        table[name] = sharpe
        if winner is None:
            winner, best = name, sharpe
            continue
        if sharpe is not None and (best is None or sharpe > best):
            winner, best = name, sharpe
    return winner, table


@dataclass(frozen=True)
class WindowRecord:
    index: int
    train_rows: tuple[int, int]
    valid_rows: tuple[int, int]
    test_rows: tuple[int, int]
    validation_sharpe: dict[str, float | None]
    winner: str


@dataclass(frozen=True)
class EnsembleResult:
    windows: tuple[WindowRecord, ...]
    curve: EquityCurve
    metrics: MetricsReport
    candidate_curves: dict[str, EquityCurve]
    candidate_metrics: dict[str, MetricsReport]


PolicyFactory = Callable[[TradingEnv, int], Policy]


def _stitch(segments: list[EquityCurve]) -> EquityCurve:
    timestamps = list(segments[0].timestamps)
    values = list(segments[0].values)
    for seg in segments[1:]:
        timestamps.extend(seg.timestamps[1:])
        values.extend(seg.values[1:])
    return EquityCurve(tuple(timestamps), np.array(values))


def run_rolling_ensemble(
    dataset: MarketDataset,
    rolling: RollingWindowSpec,
    factories: dict[str, PolicyFactory],
    env_config: EnvConfig,
    seed: int,
    train_steps: int = 2000,
    periods_per_year: int = 252,
    risk_free: float = 0.0,
    day_count: int = 365,
) -> EnsembleResult:
    """Retrain, select, and deploy across sliding windows.

    Each window trains every candidate on its train slice, picks the winner
    by validation Sharpe, and deploys it on the test slice starting from the
    running portfolio value; candidate-only runs deploy each candidate in
    every window the same way so the stitched ensemble can be compared
    against single-candidate baselines under identical seeds.
    """
    if not factories:
        raise ValueError("need at least one candidate factory")
    t_len = dataset.n_rows
    window_total = rolling.window_length + rolling.validation_length + rolling.test_length
    if t_len < window_total:
        raise InsufficientData(f"{t_len} rows < one window of {window_total}")

    ens_value = env_config.initial_capital
    cand_value = {name: env_config.initial_capital for name in factories}
    ens_segments: list[EquityCurve] = []
    cand_segments: dict[str, list[EquityCurve]] = {name: [] for name in factories}
    records: list[WindowRecord] = []

    index = 0
    while True:
        base = index * rolling.step
        train_end = base + rolling.window_length
        valid_end = train_end + rolling.validation_length
        test_end = valid_end + rolling.test_length
        if test_end > t_len:
            break

        train_ds = dataset.slice_rows(base, train_end)
        valid_ds = dataset.slice_rows(train_end, valid_end)
        test_ds = dataset.slice_rows(valid_end, test_end)

        train_env = TradingEnv(train_ds, env_config)
        candidates: dict[str, Policy] = {}
        for name, factory in factories.items():
            sub_seed = derive_seed(seed, name, index)
            policy = factory(train_env, sub_seed)
            train_agent(policy, train_env, steps=train_steps, seed=sub_seed)
            candidates[name] = policy

        valid_env = TradingEnv(valid_ds, env_config)
        winner, table = ensemble_select(candidates, valid_env, seed=derive_seed(seed, "valid", index))

        test_seed = derive_seed(seed, "test", index)
        ens_env = TradingEnv(test_ds, replace(env_config, initial_capital=ens_value))
        ens_result = backtest(candidates[winner], ens_env, seed=test_seed, name="ensemble")
        ens_segments.append(ens_result.curve)
        ens_value = float(ens_result.curve.values[-1])

        for name, policy in candidates.items():
            env = TradingEnv(test_ds, replace(env_config, initial_capital=cand_value[name]))
            result = backtest(policy, env, seed=test_seed, name=name)
            cand_segments[name].append(result.curve)
            cand_value[name] = float(result.curve.values[-1])

        records.append(
            WindowRecord(
                index=index,
                train_rows=(base, train_end),
                valid_rows=(train_end, valid_end),
                test_rows=(valid_end, test_end),
                validation_sharpe=table,
                winner=winner,
            )
        )
        index += 1

    curve = _stitch(ens_segments)
    metrics = compute_metrics(curve, periods_per_year, risk_free, day_count)
    candidate_curves = {name: _stitch(segs) for name, segs in cand_segments.items()}
    candidate_metrics = {
        name: compute_metrics(c, periods_per_year, risk_free, day_count)
        for name, c in candidate_curves.items()
    }
    return EnsembleResult(
        windows=tuple(records),
        curve=curve,
        metrics=metrics,
        candidate_curves=candidate_curves,
        candidate_metrics=candidate_metrics,
    )


def config_factories(cfg: RunConfig) -> dict[str, PolicyFactory]:
    """Policy factories for every trading-env [agents.*] entry, in
    registration order; portfolio-strategy kinds are backtest-only."""

    def make_factory(name: str, agent_cfg: dict) -> PolicyFactory:
        return lambda env, seed: build_policy(name, agent_cfg, env, seed)

    return {name: make_factory(name, spec) for name, spec in trading_agents(cfg).items()}


def run_rolling_ensemble_from_config(cfg: RunConfig, dataset: MarketDataset) -> EnsembleResult:
    if cfg.rolling is None:
        raise ConfigError("ensemble requires a [rolling] section")
    eval_cfg = cfg.eval
    return run_rolling_ensemble(
        dataset,
        cfg.rolling,
        config_factories(cfg),
        cfg.env,
        seed=cfg.seed,
        train_steps=cfg.train_steps,
        periods_per_year=int(eval_cfg.get("periods_per_year", 252)),
        risk_free=float(eval_cfg.get("risk_free_rate", 0.0)),
        day_count=int(eval_cfg.get("day_count", 365)),
    )


# ----------------------------------------------------------- paper-trade replay


def walk_forward_replay(
    policy,
    env,
    report_every: int,
    seed: int = 0,
    periods_per_year: int | None = None,
    risk_free: float = 0.0,
    day_count: int = 365,
    stream=None,
) -> Iterator[dict]:
    """Step the env bar by bar, yielding a metrics snapshot every
    ``report_every`` bars (and at the end). Snapshots depend only on bars
    already seen; with ``stream`` (a writable text handle) each snapshot is
    also appended as one JSON line."""
    from .agents import state_vector
    from .evaluation import PERIODS_PER_YEAR
    from .marketdata import format_timestamp

    dataset = env.dataset
    if periods_per_year is None:
        periods_per_year = PERIODS_PER_YEAR.get(dataset.interval, 252)
    state = env.reset(seed)
    values = [float(env.config.initial_capital)]
    timestamps = [dataset.timestamps[0]]
    bar = 0
    done = False
    while not done:
        action = policy.act(state_vector(state), explore=False)
        res = env.step(policy.to_env_action(action))
        values.append(res.info["v_next"])
        timestamps.append(dataset.timestamps[res.state.t])
        state = res.state
        done = res.done
        bar += 1
        if bar % report_every == 0 or done:
            curve = EquityCurve(tuple(timestamps), np.array(values))
            metrics = compute_metrics(curve, periods_per_year, risk_free, day_count)
            snapshot = {
                "bar": bar,
                "timestamp": format_timestamp(timestamps[-1]),
                "value": values[-1],
                "metrics": metrics.to_dict(),
            }
            if stream is not None:
                stream.write(json.dumps(snapshot, sort_keys=True) + "\n")
            yield snapshot
