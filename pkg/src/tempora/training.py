"""MSE loss, L2 regularization, Adam, and the epoch/batch training loop.

One epoch consumes `evaluation_interval` batches of `batch_size` samples from
a seeded shuffle of the training windows, then measures full-pass train and
validation MSE into the loss history. Training is bit-reproducible for a
fixed seed.
"""

import dataclasses
import hashlib
import json
import math

import numpy as np

from .layers import DenseLayer, LstmLayer, SequentialModel
from .numerics import Activation, ShapeError

EVAL_BATCH = 2048


class DivergenceError(RuntimeError):
    """Training loss became non-finite; carries the 1-based epoch number."""

    def __init__(self, epoch, message=None):
        super().__init__(message or f"training diverged in epoch {epoch}")
        self.epoch = epoch


class ConfigError(ValueError):
    """Invalid experiment configuration; message lists every violation."""


@dataclasses.dataclass(frozen=True)
class L2Coefficients:
    kernel: float = 0.0
    recurrent: float = 0.0
    bias: float = 0.0

    def any(self):
        return self.kernel > 0 or self.recurrent > 0 or self.bias > 0


@dataclasses.dataclass
class ExperimentConfig:
    """One training regime: architecture, data framing, and hyperparameters."""

    name: str
    features: tuple
    history: int            # hours of history per window (H)
    horizon: int            # future steps to predict (K); also the output width
    units: tuple = (32, 16)  # LSTM stack sizes
    cell_activations: tuple = ("tanh", "relu")
    batch_size: int = 256
    epochs: int = 10
    evaluation_interval: int = 200  # training batches per epoch
    l2: L2Coefficients = L2Coefficients()
    learning_rate: float = 0.001
    clip_norm: float = 5.0
    seed: int = 0

    def validate(self):
        problems = []
        if not self.features:
            problems.append("features must not be empty")
        if "temp" not in self.features:
            problems.append("features must include temp (the prediction target)")
        for field in ("history", "horizon", "batch_size", "evaluation_interval"):
            if getattr(self, field) < 1:
                problems.append(f"{field} must be >= 1")
        if self.epochs < 0:
            problems.append("epochs must be >= 0")
        if len(self.units) != len(self.cell_activations):
            problems.append("units and cell_activations must have equal length")
        if not self.units:
            problems.append("at least one recurrent layer is required")
        if any(u < 1 for u in self.units):
            problems.append("all layer widths must be >= 1")
        if min(self.l2.kernel, self.l2.recurrent, self.l2.bias) < 0:
            problems.append("l2 coefficients must be >= 0")
        if self.learning_rate <= 0:
            problems.append("learning_rate must be > 0")
        if self.clip_norm <= 0:
            problems.append("clip_norm must be > 0")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    @property
    def n_output(self):
        return self.horizon

    def to_flat_dict(self):
        return {
            "name": self.name,
            "features": ",".join(self.features),
            "history": self.history,
            "horizon": self.horizon,
            "units": ",".join(str(u) for u in self.units),
            "cell_activations": ",".join(self.cell_activations),
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "evaluation_interval": self.evaluation_interval,
            "l2_kernel": self.l2.kernel,
            "l2_recurrent": self.l2.recurrent,
            "l2_bias": self.l2.bias,
            "learning_rate": self.learning_rate,
            "clip_norm": self.clip_norm,
            "seed": self.seed,
        }

    @classmethod
    def from_flat_dict(cls, d):
        known = {
            "name": str, "features": None, "history": int, "horizon": int,
            "units": None, "cell_activations": None, "batch_size": int,
            "epochs": int, "evaluation_interval": int, "l2_kernel": float,
            "l2_recurrent": float, "l2_bias": float, "learning_rate": float,
            "clip_norm": float, "seed": int,
        }
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        kw = {}
        for key, value in d.items():
            if key == "features":
                kw["features"] = tuple(s.strip() for s in str(value).split(",") if s.strip())
            elif key == "units":
                kw["units"] = tuple(int(s) for s in str(value).split(",") if s.strip())
            elif key == "cell_activations":
                kw["cell_activations"] = tuple(
                    s.strip() for s in str(value).split(",") if s.strip()
                )
            elif key.startswith("l2_"):
                continue
            else:
                kw[key] = known[key](value)
        kw["l2"] = L2Coefficients(
            kernel=float(d.get("l2_kernel", 0.0)),
            recurrent=float(d.get("l2_recurrent", 0.0)),
            bias=float(d.get("l2_bias", 0.0)),
        )
        return cls(**kw).validate()

    def config_hash(self):
        blob = json.dumps(self.to_flat_dict(), sort_keys=True).encode("ascii")
        return hashlib.sha256(blob).hexdigest()


def build_model(config, rng=None):
    """LSTM stack + linear head for a validated ExperimentConfig."""
    config.validate()
    rng = rng or np.random.default_rng(config.seed)
    layers = []
    n_in = len(config.features)
    last = len(config.units) - 1
    for k, (units, act) in enumerate(zip(config.units, config.cell_activations)):
        layers.append(
            LstmLayer.init(n_in, units, Activation.parse(act), rng, return_sequences=(k != last))
        )
        n_in = units
    layers.append(DenseLayer.init(n_in, config.n_output, Activation.LINEAR, rng))
    return SequentialModel(layers)


def mse(pred, target):
    """Mean over all entries of the squared prediction error."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


def _first_lstm_index(model):
    for k, layer in enumerate(model.layers):
        if layer.kind == "lstm":
            return k
    return None


def l2_penalty(model, coefficients):
    """L2 penalty on the first LSTM layer's kernel/recurrent/bias groups.

    Only the input layer is regularized, mirroring the training setup this
    engine reproduces; downstream layers contribute nothing.
    """
    k = _first_lstm_index(model)
    if k is None or not coefficients.any():
        return 0.0
    layer = model.layers[k]
    return float(
        coefficients.kernel * np.sum(layer.w_x * layer.w_x)
        + coefficients.recurrent * np.sum(layer.w_h * layer.w_h)
        + coefficients.bias * np.sum(layer.b * layer.b)
    )


def l2_gradients(model, coefficients):
    """Gradient contributions (2*lambda*w) keyed like model.params()."""
    k = _first_lstm_index(model)
    if k is None or not coefficients.any():
        return {}
    layer = model.layers[k]
    return {
        f"{k}.w_x": 2.0 * coefficients.kernel * layer.w_x,
        f"{k}.w_h": 2.0 * coefficients.recurrent * layer.w_h,
        f"{k}.b": 2.0 * coefficients.bias * layer.b,
    }


class AdamState:
    """First/second-moment accumulators plus the step counter."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps


def adam_step(params, grads, state, lr):
    """One Adam update, in place on params; returns (params, state)."""
    if set(params) != set(grads):
        missing = set(params) ^ set(grads)
        raise ValueError(f"params and grads keys differ: {sorted(missing)}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correct1 = 1.0 - b1 ** state.t
    correct2 = 1.0 - b2 ** state.t
    for key, p in params.items():
        g = grads[key]
        m = state.m[key]
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / correct1) / (np.sqrt(v / correct2) + state.eps)
    return params, state


def clip_global_norm(grads, max_norm):
    """Scale the whole gradient set down if its global L2 norm exceeds max_norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return grads, total


@dataclasses.dataclass
class LossHistory:
    train: list = dataclasses.field(default_factory=list)
    val: list = dataclasses.field(default_factory=list)

    def append(self, train_mse, val_mse):
        if not (math.isfinite(train_mse) and math.isfinite(val_mse)):
            raise ValueError("loss history entries must be finite")
        self.train.append(float(train_mse))
        self.val.append(float(val_mse))

    def __len__(self):
        return len(self.train)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write("epoch,train_mse,val_mse\n")
            for e, (tr, va) in enumerate(zip(self.train, self.val), start=1):
                fh.write(f"{e},{tr!r},{va!r}\n")

    @classmethod
    def from_csv(cls, path):
        hist = cls()
        with open(path, encoding="utf-8") as fh:
            next(fh)
            for line in fh:
                _e, tr, va = line.strip().split(",")
                hist.append(float(tr), float(va))
        return hist


def _shuffled_batches(n_samples, batch_size, seed):
    """Endless batches of indices from a seeded shuffle, reshuffling each pass."""
    rng = np.random.default_rng(seed)
    while True:
        order = rng.permutation(n_samples)
        for start in range(0, n_samples - batch_size + 1, batch_size):
            yield order[start:start + batch_size]


def dataset_mse(model, ds, batch=EVAL_BATCH):
    """Full-pass MSE of the model over a WindowedDataset."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    total = 0.0
    for start in range(0, len(ds), batch):
        idx = np.arange(start, min(start + batch, len(ds)))
        xb, yb = ds.take(idx)
        pred = model.forward(xb)
        diff = pred - yb
        total += float(np.sum(diff * diff))
    return total / (len(ds) * ds.horizon)


def train(model, config, train_ds, val_ds, progress=None):
    """Run the full training loop; returns (model, LossHistory).

    Raises DivergenceError (with the epoch number) if the training loss goes
    non-finite. `progress(epoch, train_mse, val_mse)` is called per epoch.
    """
    config.validate()
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise ValueError("train and validation datasets must be non-empty")
    if len(train_ds) < config.batch_size:
        raise ValueError(
            f"batch_size {config.batch_size} exceeds the {len(train_ds)} training windows"
        )
    history = LossHistory()
    params = model.params()
    state = AdamState(params)
    batches = _shuffled_batches(len(train_ds), config.batch_size, config.seed)

    for epoch in range(1, config.epochs + 1):
        for _step in range(config.evaluation_interval):
            idx = next(batches)
            xb, yb = train_ds.take(idx)
            pred = model.forward(xb, train=True)
            batch_loss = mse(pred, yb) + l2_penalty(model, config.l2)
            if not math.isfinite(batch_loss):
                raise DivergenceError(epoch)
            d_loss = (2.0 / yb.size) * (pred - yb)
            grads = model.backward(d_loss)
            for key, g in l2_gradients(model, config.l2).items():
                grads[key] = grads[key] + g
            clip_global_norm(grads, config.clip_norm)
            adam_step(params, grads, state, config.learning_rate)

        train_mse = dataset_mse(model, train_ds)
        val_mse = dataset_mse(model, val_ds)
        if not (math.isfinite(train_mse) and math.isfinite(val_mse)):
            raise DivergenceError(epoch)
        history.append(train_mse, val_mse)
        if progress is not None:
            progress(epoch, train_mse, val_mse)
    return model, history


@dataclasses.dataclass
class OverfitDiagnosis:
    overfit: bool
    reasons: list

    def __bool__(self):
        return self.overfit


def detect_overfitting(history, ratio=1.15, tail_fraction=0.5, rise_window=3):
    """Flag persistent val/train gaps or a late validation-loss rise."""
    n = len(history)
    if n < 2:
        raise ValueError("need at least 2 epochs to diagnose overfitting")
    train = np.asarray(history.train)
    val = np.asarray(history.val)

    reasons = []
    tail = max(1, int(math.ceil(n * tail_fraction)))
    t_train, t_val = train[n - tail:], val[n - tail:]
    if np.all(t_val > ratio * t_train):
        reasons.append(
            f"validation loss stayed above {ratio:.2f}x training loss over the final {tail} epochs"
        )
    if n >= rise_window:
        w_train, w_val = train[n - rise_window:], val[n - rise_window:]
        if w_val[-1] > w_val[0] and w_train[-1] < w_train[0]:
            reasons.append(
                f"validation loss rose while training loss fell over the last {rise_window} epochs"
            )
    return OverfitDiagnosis(overfit=bool(reasons), reasons=reasons)
