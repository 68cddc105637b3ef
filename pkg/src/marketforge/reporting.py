"""Report serialization and plotting.

The ensemble run produces a comparison report (JSON) plus a plot-ready
``curves.csv`` with one value column per strategy; the report renderer turns
those into aligned text, CSV, and matplotlib figures written next to the
delimited output.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .evaluation import ComparisonReport, EquityCurve, StrategyMetrics
from .marketdata import format_timestamp, parse_timestamp
from .pipeline import EnsembleResult


def ensemble_report(result: EnsembleResult, seed: int, extra_meta: dict | None = None) -> ComparisonReport:
    """Comparison grid with the ensemble first, then every candidate."""
    rows = [
        StrategyMetrics(
            name="ensemble",
            annual_return=result.metrics.annualized_return,
            annual_volatility=result.metrics.annual_volatility,
            sharpe=result.metrics.sharpe,
            calmar=result.metrics.calmar,
            max_drawdown=result.metrics.max_drawdown,
            n_periods=result.metrics.n_periods,
        )
    ]
    for name, metrics in result.candidate_metrics.items():
        rows.append(
            StrategyMetrics(
                name=name,
                annual_return=metrics.annualized_return,
                annual_volatility=metrics.annual_volatility,
                sharpe=metrics.sharpe,
                calmar=metrics.calmar,
                max_drawdown=metrics.max_drawdown,
                n_periods=metrics.n_periods,
            )
        )
    meta = {
        "seed": seed,
        "n_windows": len(result.windows),
        "windows": [
            {
                "index": w.index,
                "train_rows": list(w.train_rows),
                "valid_rows": list(w.valid_rows),
                "test_rows": list(w.test_rows),
                "validation_sharpe": w.validation_sharpe,
                "winner": w.winner,
            }
            for w in result.windows
        ],
    }
    meta.update(extra_meta or {})
    return ComparisonReport(strategies=tuple(rows), meta=meta)


def ensemble_curves(result: EnsembleResult) -> dict[str, EquityCurve]:
    curves = {"ensemble": result.curve}
    curves.update(result.candidate_curves)
    return curves


def write_curves_csv(curves: dict[str, EquityCurve], path) -> None:
    """One timestamp column plus one value column per strategy."""
    names = list(curves)
    reference = curves[names[0]]
    for name in names[1:]:
        if curves[name].timestamps != reference.timestamps:
            raise ValueError("curves must share one timeline")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp"] + names)
        for i, ts in enumerate(reference.timestamps):
            writer.writerow([format_timestamp(ts)] + [repr(float(curves[n].values[i])) for n in names])


def read_curves_csv(path) -> dict[str, EquityCurve]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = header[1:]
        timestamps = []
        columns = [[] for _ in names]
        for rec in reader:
            if not rec:
                continue
            timestamps.append(parse_timestamp(rec[0]))
            for i, cell in enumerate(rec[1:]):
                columns[i].append(float(cell))
    return {
        name: EquityCurve(tuple(timestamps), np.array(col)) for name, col in zip(names, columns)
    }


def report_from_json(path) -> ComparisonReport:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    rows = tuple(StrategyMetrics(**row) for row in payload["strategies"])
    return ComparisonReport(strategies=rows, meta=payload.get("meta", {}))


def render_figures(curves: dict[str, EquityCurve], out_dir) -> list[Path]:
    """Equity and drawdown panels saved as PNG files."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    fig, (ax_equity, ax_dd) = plt.subplots(
        2, 1, figsize=(9, 6.5), sharex=True, gridspec_kw={"height_ratios": [2.2, 1]}
    )
    for name, curve in curves.items():
        ts = list(curve.timestamps)
        values = curve.values / curve.values[0]
        ax_equity.plot(ts, values, label=name, linewidth=1.4)
        peaks = np.maximum.accumulate(curve.values)
        ax_dd.fill_between(ts, curve.values / peaks - 1.0, 0.0, alpha=0.25)
        ax_dd.plot(ts, curve.values / peaks - 1.0, linewidth=0.9)
    ax_equity.set_ylabel("growth of $1")
    ax_equity.legend(loc="upper left", fontsize=8)
    ax_equity.grid(alpha=0.3)
    ax_dd.set_ylabel("drawdown")
    ax_dd.grid(alpha=0.3)
    fig.autofmt_xdate()
    fig.tight_layout()
    path = out_dir / "curves.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written


def write_report_bundle(
    report: ComparisonReport,
    out_dir,
    formats=("text", "json", "csv"),
    curves: dict[str, EquityCurve] | None = None,
) -> list[Path]:
    """Write the chosen delimited formats and, when curves are available,
    the plot-ready CSV and rendered figures."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    renders = {"text": ("report.txt", report.to_text), "json": ("report.json", report.to_json), "csv": ("report.csv", report.to_csv)}
    for fmt in formats:
        if fmt not in renders:
            raise ValueError(f"unknown format {fmt!r}")
        filename, render = renders[fmt]
        path = out_dir / filename
        path.write_text(render(), encoding="utf-8")
        written.append(path)
    if curves:
        curves_path = out_dir / "curves.csv"
        write_curves_csv(curves, curves_path)
        written.append(curves_path)
        written.extend(render_figures(curves, out_dir))
    return written
