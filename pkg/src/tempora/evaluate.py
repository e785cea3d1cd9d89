"""Forecasting with a trained model, accuracy metrics in degrees Celsius,
and report/plot emission (SVG + sibling CSV)."""

import csv
import dataclasses

import numpy as np

from .data import normalize
from .numerics import ShapeError


@dataclasses.dataclass
class ForecastResult:
    """One multi-step forecast: H hours of true history, then K predicted
    and K actual temperatures, all in deg C."""

    history: np.ndarray
    predicted: np.ndarray
    actual: np.ndarray
    origin: object  # timestamp of the first predicted hour

    def __post_init__(self):
        if self.predicted.shape != self.actual.shape:
            raise ShapeError(
                f"predicted {self.predicted.shape} and actual {self.actual.shape} differ"
            )
        for name in ("history", "predicted", "actual"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"forecast {name} contains NaN or Inf")


def _as_series(values, name):
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size < 1:
        raise ShapeError(f"{name} must be non-empty")
    return arr


def _paired(predicted, actual):
    p = _as_series(predicted, "predicted")
    a = _as_series(actual, "actual")
    if p.shape != a.shape:
        raise ShapeError(f"series lengths differ: {p.shape} vs {a.shape}")
    return p, a


def rmse(predicted, actual):
    """Root of the mean squared deviation."""
    p, a = _paired(predicted, actual)
    return float(np.sqrt(np.mean((p - a) ** 2)))


def mae(predicted, actual):
    """Mean absolute deviation."""
    p, a = _paired(predicted, actual)
    return float(np.mean(np.abs(p - a)))


def max_error(predicted, actual):
    """Largest absolute deviation; np.argmax ties resolve to the earliest index."""
    p, a = _paired(predicted, actual)
    return float(np.max(np.abs(p - a)))


def max_error_index(predicted, actual):
    p, a = _paired(predicted, actual)
    return int(np.argmax(np.abs(p - a)))


def forecast(model, recent_window, stats, actual=None, origin=None):
    """Predict K temperatures from one raw-unit history window.

    recent_window: SeriesFrame of exactly H hours holding the model's
    feature set (raw units). Output temperatures are denormalized back to
    deg C. `actual` is the true future series when the caller has it;
    otherwise the result records the prediction as its own baseline.
    """
    features = recent_window.features
    x = normalize(recent_window, stats).to_matrix(features)[None, :, :]
    if x.shape[2] != model.input_width:
        raise ShapeError(
            f"window has {x.shape[2]} features {tuple(features)}, model expects {model.input_width}"
        )
    pred_norm = model.forward(x)[0]
    t_mean, t_std = stats.mean("temp"), stats.std("temp")
    predicted = pred_norm * t_std + t_mean
    return ForecastResult(
        history=recent_window.column("temp").copy(),
        predicted=predicted,
        actual=predicted.copy() if actual is None else np.asarray(actual, dtype=np.float64),
        origin=origin if origin is not None else recent_window.timestamps[-1],
    )


@dataclasses.dataclass
class AccuracyReport:
    """Test-set accuracy in deg C: mean per-window RMSE/MAE, max per-window ME,
    plus the per-window RMSE distribution for transparency."""

    model_label: str
    horizon: int
    rmse: float
    mae: float
    me: float
    p50_rmse: float
    p90_rmse: float

    def validate(self):
        assert self.rmse >= 0 and self.mae >= 0 and self.me >= 0
        assert self.me >= self.mae - 1e-12
        assert self.rmse >= self.mae - 1e-12
        return self

    def csv_row(self):
        return (
            f"{self.model_label},{self.horizon},{self.rmse:.6f},{self.mae:.6f},"
            f"{self.me:.6f},{self.p50_rmse:.6f},{self.p90_rmse:.6f}"
        )


METRICS_HEADER = "model,K,rmse,mae,me,p50_rmse,p90_rmse"


def evaluate_model(model, test_ds, stats, label="model", batch=2048):
    """Aggregate denormalized forecast accuracy over every test window."""
    if len(test_ds) == 0:
        raise ValueError("empty test set")
    t_mean, t_std = stats.mean("temp"), stats.std("temp")
    per_rmse = np.empty(len(test_ds))
    per_mae = np.empty(len(test_ds))
    per_me = np.empty(len(test_ds))
    for start in range(0, len(test_ds), batch):
        idx = np.arange(start, min(start + batch, len(test_ds)))
        xb, yb = test_ds.take(idx)
        pred = model.forward(xb)
        # Both prediction and target transform identically, so the error in
        # deg C is just the normalized error scaled by the temperature std.
        err = np.abs(pred - yb) * t_std
        per_rmse[idx] = np.sqrt(np.mean(err * err, axis=1))
        per_mae[idx] = np.mean(err, axis=1)
        per_me[idx] = np.max(err, axis=1)
    return AccuracyReport(
        model_label=label,
        horizon=test_ds.horizon,
        rmse=float(per_rmse.mean()),
        mae=float(per_mae.mean()),
        me=float(per_me.max()),
        p50_rmse=float(np.percentile(per_rmse, 50)),
        p90_rmse=float(np.percentile(per_rmse, 90)),
    ).validate()


def append_metrics_row(report, path):
    try:
        with open(path, encoding="utf-8") as fh:
            need_header = not fh.readline().strip()
    except OSError:
        need_header = True
    with open(path, "a", encoding="utf-8") as fh:
        if need_header:
            fh.write(METRICS_HEADER + "\n")
        fh.write(report.csv_row() + "\n")


# ---------------------------------------------------------------------------
# Plot emission: static SVG plus a sibling CSV of the raw series.
# ---------------------------------------------------------------------------


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def emit_forecast_plot(result, path):
    """Write an SVG (history line, predicted/actual points) and sibling CSV."""
    path = str(path)
    if not path.endswith(".svg"):
        path += ".svg"
    plt = _plt()
    h = len(result.history)
    k = len(result.predicted)
    hist_t = np.arange(-h + 1, 1)
    fut_t = np.arange(1, k + 1)

    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(hist_t, result.history, color="#444444", lw=1.0, label="history")
    ax.plot(fut_t, result.actual, "o", color="#1f77b4", ms=3.5, label="true future")
    ax.plot(fut_t, result.predicted, "o", color="#d62728", ms=3.5, label="predicted")
    ax.axvline(0.5, color="#999999", lw=0.8, ls=":")
    ax.set_xlabel("time step (hours)")
    ax.set_ylabel("temperature (deg C)")
    ax.set_title(f"{k}-hour forecast from {result.origin}")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)

    csv_path = path[:-4] + ".csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step_hours", "kind", "temperature_c", "actual_c"])
        for t, v in zip(hist_t, result.history):
            writer.writerow([int(t), "history", f"{v!r}", ""])
        for t, p, a in zip(fut_t, result.predicted, result.actual):
            writer.writerow([int(t), "forecast", f"{p!r}", f"{a!r}"])
    return path, csv_path


def emit_loss_plot(history, path, title="training loss"):
    """Write the train/val MSE curves as SVG; the CSV lives with LossHistory."""
    path = str(path)
    if not path.endswith(".svg"):
        path += ".svg"
    plt = _plt()
    epochs = np.arange(1, len(history) + 1)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, history.train, color="#1f77b4", label="training")
    ax.plot(epochs, history.val, color="#d62728", label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE loss")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
