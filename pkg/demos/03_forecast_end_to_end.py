"""Train a small multiscale mixing model on the bundled fixture and score it.

Fits a 12-step-ahead volatility forecaster for a couple of epochs, then
compares its test MAE against the persistence and trailing-mean baselines and
writes a forecast plot next to this script.
"""

from pathlib import Path

from volmixer import evaluation as ev
from volmixer import market_data as md
from volmixer.model import ModelConfig, TimeMixerModel
from volmixer.training import TrainConfig, train

HERE = Path(__file__).resolve().parent
FIXTURE = HERE.parent / "tests" / "fixtures" / "AAPL_2010_2023.csv"

series = md.parse_ohlcv_csv(FIXTURE.read_text(), "AAPL")
values, dates = md.feature_matrix(series)
horizon = 12
ds = md.split_chronological(md.make_windows(values, 64, horizon))

model = TimeMixerModel(ModelConfig(lookback=64, horizon=horizon, d_model=16,
                                   num_blocks=1, num_scales=2,
                                   decomp_kernel=25, ff_hidden=32, seed=0))
report = train(model, ds, TrainConfig(max_epochs=5, patience=5, seed=0))
print(f"stopped after {len(report.train_losses)} epochs "
      f"({report.stopping_reason}), best val loss {report.best_val_loss:.5f}")

x_test, y_test = ds.test
pred = model.forward(x_test)
print(f"model        MAE {ev.mae(pred, y_test):.4f}")
print(f"persistence  MAE "
      f"{ev.mae(ev.baseline_persistence(x_test, horizon), y_test):.4f}")
print(f"window mean  MAE "
      f"{ev.mae(ev.baseline_window_mean(x_test, horizon), y_test):.4f}")

svg = ev.forecast_plot_svg([str(d) for d in range(horizon)],
                           y_test[0], pred[0], title="AAPL F=12, first window")
out = HERE / "forecast_demo.svg"
out.write_text(svg)
print(f"wrote {out}")
