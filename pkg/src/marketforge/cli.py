"""Command-line interface.

Subcommands mirror the pipeline stages: ingest raw data to a dataset file,
featurize it, train candidates, backtest a single policy, run the rolling
ensemble, and render reports (text/JSON/CSV plus figures).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .envs import PortfolioEnv, TradingEnv
from .errors import ConfigError, DataError, MarketForgeError
from .evaluation import backtest, compare, write_curve_csv, write_trajectory_csv
from .marketdata import load_dataset, save_dataset
from .pipeline import (
    PORTFOLIO_KINDS,
    RunConfig,
    build_dataset,
    build_features,
    build_policy,
    candidate_seed,
    run_rolling_ensemble_from_config,
    run_training_job,
    split_dataset,
)
from .reporting import (
    ensemble_curves,
    ensemble_report,
    read_curves_csv,
    render_figures,
    report_from_json,
    write_curves_csv,
    write_report_bundle,
)
from .strategies import (
    EqualWeightPolicy,
    OptimizerConfig,
    PassiveHoldPolicy,
    RebalancingPolicy,
    WeightVector,
)

log = logging.getLogger("marketforge")


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_toml(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _dataset_for(cfg: RunConfig, data_path: str | None, featurized: bool):
    if data_path:
        dataset = load_dataset(data_path)
    else:
        dataset = build_dataset(cfg.data)
        if featurized:
            dataset = build_features(dataset, cfg.features)
    return dataset


def cmd_ingest(args) -> int:
    cfg = _load_config(args)
    dataset = build_dataset(cfg.data)
    save_dataset(dataset, args.out)
    log.info("ingested %s", dataset)
    print(f"wrote {args.out}: {dataset}")
    return 0


def cmd_featurize(args) -> int:
    cfg = _load_config(args)
    dataset = load_dataset(args.input) if args.input else build_dataset(cfg.data)
    panel = build_features(dataset, cfg.features)
    save_dataset(panel, args.out)
    print(f"wrote {args.out}: {panel}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    dataset = _dataset_for(cfg, args.data, featurized=True)
    trained = run_training_job(cfg, dataset, out_dir=Path(args.out_dir))
    print(f"trained {len(trained)} candidate(s) into {args.out_dir}: " + ", ".join(trained))
    return 0


def _portfolio_policy(name: str, agent_cfg: dict, n_assets: int):
    kind = agent_cfg["kind"]
    if kind == "equal_weight":
        return EqualWeightPolicy(n_assets)
    if kind == "passive_hold":
        allocation = agent_cfg.get("allocation")
        if allocation is None:
            w = np.full(n_assets, 1.0 / n_assets)
            allocation = np.concatenate([[0.0], w])
        return PassiveHoldPolicy(WeightVector(np.asarray(allocation, dtype=np.float64)), n_assets)
    opt_cfg = OptimizerConfig(risk_aversion=float(agent_cfg.get("risk_aversion", 1.0)))
    return RebalancingPolicy(
        n_assets,
        optimizer=kind,
        window=int(agent_cfg.get("window", 252)),
        every_k_bars=agent_cfg.get("every_k_bars", 21),
        cfg=opt_cfg,
    )


def cmd_backtest(args) -> int:
    cfg = _load_config(args)
    if args.policy not in cfg.agents:
        raise ConfigError(f"no [agents.{args.policy}] section in the config")
    agent_cfg = cfg.agents[args.policy]
    dataset = _dataset_for(cfg, args.data, featurized=True)
    if cfg.split is not None:
        dataset = split_dataset(dataset, cfg.split).test

    seed = candidate_seed(cfg.seed, args.policy)
    if agent_cfg["kind"] in PORTFOLIO_KINDS:
        env = PortfolioEnv(dataset, cfg.env)
        policy = _portfolio_policy(args.policy, agent_cfg, env.n_assets)
    else:
        env = TradingEnv(dataset, cfg.env)
        policy = build_policy(args.policy, agent_cfg, env, seed)
        if args.params:
            policy.load_blob(Path(args.params).read_bytes())

    eval_cfg = cfg.eval
    result = backtest(
        policy,
        env,
        seed=seed,
        name=args.policy,
        risk_free=float(eval_cfg.get("risk_free_rate", 0.0)),
        day_count=int(eval_cfg.get("day_count", 365)),
        periods_per_year=eval_cfg.get("periods_per_year"),
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = compare([result], meta={"seed": cfg.seed})
    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    write_curve_csv(result.curve, out_dir / f"{args.policy}_curve.csv")
    write_trajectory_csv(result, out_dir / f"{args.policy}_trajectory.csv")
    print(report.to_text(), end="")
    return 0


def cmd_ensemble(args) -> int:
    cfg = _load_config(args)
    dataset = _dataset_for(cfg, args.data, featurized=True)
    result = run_rolling_ensemble_from_config(cfg, dataset)
    report = ensemble_report(result, seed=cfg.seed)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(report.to_json(), encoding="utf-8")
    write_curves_csv(ensemble_curves(result), out_path.with_name("curves.csv"))
    print(f"wrote {out_path} ({len(result.windows)} window(s))")
    print(report.to_text(), end="")
    return 0


def cmd_report(args) -> int:
    report = report_from_json(args.input)
    renders = {"text": report.to_text, "json": report.to_json, "csv": report.to_csv}
    if args.format not in renders:
        raise ConfigError(f"unknown format {args.format!r}")
    rendered = renders[args.format]()
    curves_path = Path(args.input).with_name("curves.csv")
    curves = read_curves_csv(curves_path) if curves_path.exists() else None
    if args.out_dir:
        written = write_report_bundle(report, args.out_dir, formats=(args.format,), curves=curves)
        print("\n".join(str(p) for p in written))
    else:
        sys.stdout.write(rendered)
        if curves:
            figures = render_figures(curves, Path(args.input).parent)
            print("\n".join(str(p) for p in figures))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="marketforge", description=__doc__)
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--verbose", action="store_true", help="debug logging to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a dataset file from the [data] section")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("featurize", help="compute the feature panel")
    p.add_argument("--config", required=True)
    p.add_argument("--in", dest="input", default=None, help="dataset file (default: rebuild from config)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train all configured candidates on the train split")
    p.add_argument("--config", required=True)
    p.add_argument("--data", default=None, help="featurized dataset file")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("backtest", help="backtest one named policy")
    p.add_argument("--config", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--params", default=None, help="parameter blob for dqn/a2c policies")
    p.add_argument("--out-dir", default="backtest_out")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("ensemble", help="run the rolling-window ensemble")
    p.add_argument("--config", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("report", help="render a report JSON as text/json/csv plus figures")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--format", default="text", choices=("text", "json", "csv"))
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except MarketForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
