"""marketforge: market data pipeline, gym-contract trading environments,
from-scratch RL agents, classical baselines, and a walk-forward ensemble
backtester with a report-rendering CLI."""

from .envs import (
    EnvConfig,
    LiquidationConfig,
    LiquidationEnv,
    PortfolioEnv,
    TradingEnv,
    VectorEnv,
)
from .evaluation import (
    BacktestResult,
    ComparisonReport,
    EquityCurve,
    MetricsReport,
    backtest,
    compare,
    compute_metrics,
)
from .features import (
    ExogenousAttachment,
    ExogenousSeries,
    IndicatorSpec,
    attach_exogenous,
    build_feature_panel,
    compute_indicator,
    compute_turbulence,
)
from .marketdata import (
    Bar,
    DataSourceSpec,
    GbmParams,
    MarketDataset,
    RawTable,
    align,
    fetch_http,
    generate_gbm,
    load_csv,
    load_dataset,
    save_dataset,
    write_csv,
)
from .pipeline import (
    EnsembleResult,
    RollingWindowSpec,
    RunConfig,
    SplitSpec,
    ensemble_select,
    run_rolling_ensemble,
    run_training_job,
    split_dataset,
    walk_forward_replay,
)
from .strategies import (
    OptimizerConfig,
    WeightVector,
    equal_weight,
    estimate_moments,
    mean_variance_optimize,
    min_variance_optimize,
    passive_hold,
    project_to_simplex,
    rebalancing_policy,
)

__version__ = "0.1.0"
