"""Test-split metrics (MAE / MSE / RMSE), reference baselines, and report
emission as CSV, markdown tables, and standalone SVG plots."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from volmixer.market_data import WindowedDataset
from volmixer.model import TimeMixerModel

CSV_HEADER = "ticker,horizon,mae,mse,rmse,n_samples"

HORIZONS = (12, 96, 192, 336, 720)


class EvaluationError(RuntimeError):
    pass


@dataclass
class MetricsRecord:
    ticker: str
    horizon: int
    mae: float
    mse: float
    rmse: float
    n_samples: int
    model_config_hash: str = ""
    data_range: str = ""

    def __post_init__(self):
        if min(self.mae, self.mse, self.rmse) < 0:
            raise EvaluationError("metrics must be nonnegative")
        if not math.isclose(self.rmse, math.sqrt(self.mse),
                            rel_tol=0, abs_tol=1e-12 * max(1.0, self.rmse)):
            raise EvaluationError(f"rmse {self.rmse} != sqrt(mse {self.mse})")


def _check_shapes(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.size == 0:
        raise EvaluationError(f"shape mismatch or empty: {pred.shape} vs "
                              f"{target.shape}")
    return pred, target


def mae(pred, target) -> float:
    """Mean absolute error over every forecast entry."""
    pred, target = _check_shapes(pred, target)
    return float(np.mean(np.abs(pred - target)))


def mse(pred, target) -> float:
    pred, target = _check_shapes(pred, target)
    return float(np.mean((pred - target) ** 2))


def rmse(pred, target) -> float:
    return math.sqrt(mse(pred, target))


def baseline_persistence(lookback: np.ndarray, horizon: int) -> np.ndarray:
    """Repeat the last observed target value across the horizon."""
    lookback = np.asarray(lookback, dtype=np.float64)
    if lookback.size == 0:
        raise EvaluationError("empty lookback")
    if lookback.ndim == 1:
        return np.full(horizon, lookback[-1])
    # (N, P) or (N, P, C): persist channel 0
    if lookback.ndim == 3:
        lookback = lookback[..., 0]
    return np.repeat(lookback[:, -1:], horizon, axis=1)


def baseline_window_mean(lookback: np.ndarray, horizon: int,
                         window: int = 21) -> np.ndarray:
    """Repeat the mean of the last ``window`` target values."""
    lookback = np.asarray(lookback, dtype=np.float64)
    if lookback.size == 0:
        raise EvaluationError("empty lookback")
    if lookback.ndim == 1:
        return np.full(horizon, lookback[-window:].mean())
    if lookback.ndim == 3:
        lookback = lookback[..., 0]
    means = lookback[:, -window:].mean(axis=1, keepdims=True)
    return np.repeat(means, horizon, axis=1)


def predict_test(model: TimeMixerModel, dataset: WindowedDataset,
                 batch_size: int = 256) -> np.ndarray:
    """Denormalized forecasts for every test sample, (N_test, F)."""
    x_test, _ = dataset.test
    preds = [model.forward(x_test[lo:lo + batch_size])
             for lo in range(0, x_test.shape[0], batch_size)]
    return np.concatenate(preds, axis=0)


def score(ticker: str, horizon: int, pred: np.ndarray, target: np.ndarray,
          model_config_hash: str = "", data_range: str = "") -> MetricsRecord:
    m = mse(pred, target)
    return MetricsRecord(ticker=ticker, horizon=horizon,
                         mae=mae(pred, target), mse=m, rmse=math.sqrt(m),
                         n_samples=int(np.asarray(pred).shape[0]),
                         model_config_hash=model_config_hash,
                         data_range=data_range)


def evaluate_asset(models: dict[int, TimeMixerModel],
                   datasets: dict[int, WindowedDataset],
                   ticker: str, data_range: str = "") -> list[MetricsRecord]:
    """One record per horizon; forecasts are denormalized before scoring."""
    records = []
    for horizon in sorted(models):
        if horizon not in datasets:
            raise EvaluationError(f"{ticker}: no dataset for horizon {horizon}")
        model = models[horizon]
        dataset = datasets[horizon]
        pred = predict_test(model, dataset)
        _, y_test = dataset.test
        records.append(score(ticker, horizon, pred, y_test,
                             model.config.hash(), data_range))
    return records


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

def records_to_csv(records: Sequence[MetricsRecord]) -> str:
    if not records:
        raise EvaluationError("no records to report")
    lines = [CSV_HEADER]
    for r in records:
        lines.append(f"{r.ticker},{r.horizon},{r.mae!r},{r.mse!r},"
                     f"{r.rmse!r},{r.n_samples}")
    return "\n".join(lines) + "\n"


def records_from_csv(text: str) -> list[MetricsRecord]:
    lines = [ln for ln in text.strip().split("\n") if ln]
    if not lines or lines[0] != CSV_HEADER:
        raise EvaluationError(f"expected header '{CSV_HEADER}'")
    records = []
    for line in lines[1:]:
        ticker, horizon, v_mae, v_mse, v_rmse, n = line.split(",")
        records.append(MetricsRecord(ticker=ticker, horizon=int(horizon),
                                     mae=float(v_mae), mse=float(v_mse),
                                     rmse=float(v_rmse), n_samples=int(n)))
    return records


def records_to_markdown(records: Sequence[MetricsRecord]) -> str:
    """Horizon-blocked table: one column per ticker, one row per metric."""
    if not records:
        raise EvaluationError("no records to report")
    tickers = sorted({r.ticker for r in records})
    horizons = sorted({r.horizon for r in records})
    by_key = {(r.ticker, r.horizon): r for r in records}
    lines = ["| Horizon | Metric | " + " | ".join(tickers) + " |",
             "|---|---|" + "---|" * len(tickers)]
    for horizon in horizons:
        for metric in ("mae", "mse", "rmse"):
            cells = []
            for ticker in tickers:
                rec = by_key.get((ticker, horizon))
                cells.append(f"{getattr(rec, metric):.4f}" if rec else "-")
            label = f"{horizon} days" if metric == "mae" else ""
            lines.append(f"| {label} | {metric.upper()} | "
                         + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def forecast_plot_svg(dates, actual: np.ndarray, predicted: np.ndarray,
                      title: str = "", width: int = 800,
                      height: int = 300) -> str:
    """Plain-XML SVG line plot of actual vs predicted series."""
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    n = actual.size
    if n == 0 or predicted.size != n:
        raise EvaluationError("plot series must be nonempty and equal length")
    pad = 40
    lo = min(actual.min(), predicted.min())
    hi = max(actual.max(), predicted.max())
    span = (hi - lo) or 1.0

    def pts(series):
        coords = []
        for i, v in enumerate(series):
            px = pad + (width - 2 * pad) * (i / max(n - 1, 1))
            py = height - pad - (height - 2 * pad) * ((v - lo) / span)
            coords.append(f"{px:.1f},{py:.1f}")
        return " ".join(coords)

    labels = ""
    if dates:
        labels = (f'<text x="{pad}" y="{height - 8}" font-size="11">'
                  f"{dates[0]}</text>"
                  f'<text x="{width - pad - 70}" y="{height - 8}" '
                  f'font-size="11">{dates[-1]}</text>')
    return f"""<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">
<rect width="{width}" height="{height}" fill="white"/>
<text x="{pad}" y="20" font-size="13">{title}</text>
<polyline points="{pts(actual)}" fill="none" stroke="#333" stroke-width="1.5"/>
<polyline points="{pts(predicted)}" fill="none" stroke="#d62728" stroke-width="1.5"/>
<text x="{width - pad - 120}" y="20" font-size="11" fill="#333">actual</text>
<text x="{width - pad - 60}" y="20" font-size="11" fill="#d62728">predicted</text>
{labels}
</svg>
"""


def emit_report(records: Sequence[MetricsRecord], out_dir,
                plots: Optional[dict[str, tuple]] = None) -> dict[str, Path]:
    """Write metrics.csv, report.md and any per-(asset, horizon) SVG plots.

    ``plots`` maps a file stem to (dates, actual, predicted, title).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    csv_path = out_dir / "metrics.csv"
    csv_path.write_text(records_to_csv(records))
    paths["csv"] = csv_path
    md_path = out_dir / "report.md"
    md_path.write_text(records_to_markdown(records))
    paths["markdown"] = md_path
    for stem, (dates, actual, predicted, title) in (plots or {}).items():
        p = out_dir / f"{stem}.svg"
        p.write_text(forecast_plot_svg(dates, actual, predicted, title))
        paths[stem] = p
    return paths
