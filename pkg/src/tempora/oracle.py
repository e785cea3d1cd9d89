"""Independent correctness oracles.

Two families: central finite-difference gradients for any loss function over
a parameter set, and brute-force scalar (1-unit, 1-feature) RNN/LSTM
evaluators written in plain ``math`` arithmetic with no matrix machinery.
The test suite trusts these, not the production path, when they disagree.
"""

import dataclasses
import math

import numpy as np

from .layers import DenseLayer, LstmLayer, SequentialModel, SimpleRnnLayer
from .numerics import Activation
from .training import mse


def relative_error(a, b):
    """|a - b| / max(|a|, |b|, 1e-8): the usual gradient-check normalization."""
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def finite_diff_gradient(loss_fn, params, eps=1e-5):
    """Central-difference gradient of ``loss_fn`` w.r.t. every entry of every array.

    ``params`` maps names to arrays that loss_fn reads in place; each entry is
    perturbed by +-eps and restored. Returns a same-keyed gradient dict.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = loss_fn()
            flat[idx] = orig - eps
            down = loss_fn()
            flat[idx] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise ValueError(f"loss is not finite while probing {name}[{idx}]")
            gflat[idx] = (up - down) / (2.0 * eps)
        grads[name] = g
    return grads


def _scalar_sigmoid(z):
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _scalar_act(z, activation):
    act = Activation.parse(activation)
    if act is Activation.TANH:
        return math.tanh(z)
    if act is Activation.SIGMOID:
        return _scalar_sigmoid(z)
    if act is Activation.RELU:
        return z if z > 0 else 0.0
    if act is Activation.LINEAR:
        return z
    raise ValueError(f"scalar oracle does not support activation {act.value}")


def scalar_lstm_oracle(weights, inputs, cell_activation=Activation.TANH, h0=0.0, c0=0.0):
    """Evaluate a 1-unit, 1-feature LSTM over a scalar input sequence.

    ``weights`` is a flat dict with keys wx_i, wh_i, b_i (and likewise for
    f, g, o). Returns the list of h outputs, one per timestep.
    """
    h, c = h0, c0
    outputs = []
    for x in inputs:
        i = _scalar_sigmoid(weights["wx_i"] * x + weights["wh_i"] * h + weights["b_i"])
        f = _scalar_sigmoid(weights["wx_f"] * x + weights["wh_f"] * h + weights["b_f"])
        g = _scalar_act(weights["wx_g"] * x + weights["wh_g"] * h + weights["b_g"], cell_activation)
        o = _scalar_sigmoid(weights["wx_o"] * x + weights["wh_o"] * h + weights["b_o"])
        c = f * c + i * g
        h = o * _scalar_act(c, cell_activation)
        outputs.append(h)
    return outputs


def scalar_rnn_oracle(weights, inputs, activation=Activation.TANH, h0=0.0):
    """Evaluate a 1-unit, 1-feature simple RNN over a scalar input sequence."""
    h = h0
    outputs = []
    for x in inputs:
        h = _scalar_act(weights["wx"] * x + weights["wh"] * h + weights["b"], activation)
        outputs.append(h)
    return outputs


@dataclasses.dataclass
class ParamCheck:
    param: str
    max_rel_error: float
    max_abs_error: float
    worst_coord: tuple


@dataclasses.dataclass
class GradCheckReport:
    """Per-parameter finite-difference comparison for one model configuration."""

    label: str
    checks: list
    tolerance: float

    @property
    def max_rel_error(self):
        return max((c.max_rel_error for c in self.checks), default=0.0)

    @property
    def passed(self):
        return self.max_rel_error <= self.tolerance

    def failures(self):
        return [c for c in self.checks if c.max_rel_error > self.tolerance]


def check_model_gradients(model, x, target, eps=1e-5, tolerance=1e-4, abs_floor=1e-6, label=""):
    """Compare analytic BPTT gradients of MSE loss against central differences."""
    params = model.params()

    def loss():
        return mse(model.forward(x), target)

    pred = model.forward(x, train=True)
    d_loss = 2.0 * (pred - target) / target.size
    analytic = model.backward(d_loss)
    numeric = finite_diff_gradient(loss, params, eps)

    checks = []
    for name in params:
        a = analytic[name].reshape(-1)
        n = numeric[name].reshape(-1)
        rel = np.zeros_like(a)
        for j in range(a.size):
            if abs(a[j] - n[j]) <= abs_floor:
                continue
            rel[j] = relative_error(a[j], n[j])
        worst = int(np.argmax(rel)) if rel.size else 0
        checks.append(
            ParamCheck(
                param=name,
                max_rel_error=float(rel.max(initial=0.0)),
                max_abs_error=float(np.abs(a - n).max(initial=0.0)),
                worst_coord=np.unravel_index(worst, params[name].shape),
            )
        )
    return GradCheckReport(label=label, checks=checks, tolerance=tolerance)


def random_check_model(seed, max_units=4, max_time=3, max_batch=2):
    """A small random Dense+RNN+LSTM stack for gradient sweeps."""
    rng = np.random.default_rng(seed)
    feat = int(rng.integers(1, 4))
    time = int(rng.integers(1, max_time + 1))
    batch = int(rng.integers(1, max_batch + 1))
    u1 = int(rng.integers(1, max_units + 1))
    u2 = int(rng.integers(1, max_units + 1))
    n_out = int(rng.integers(1, 4))
    cell_act = [Activation.TANH, Activation.RELU, Activation.SIGMOID][seed % 3]
    head_act = [Activation.LINEAR, Activation.TANH, Activation.SIGMOID][seed % 3]
    model = SequentialModel([
        LstmLayer.init(feat, u1, cell_act, rng, return_sequences=True),
        SimpleRnnLayer.init(u1, u2, Activation.TANH, rng, return_sequences=False),
        DenseLayer.init(u2, n_out, head_act, rng),
    ])
    x = rng.normal(size=(batch, time, feat))
    target = rng.normal(size=(batch, n_out))
    return model, x, target


def run_gradient_checks(seeds=range(20), eps=1e-5, tolerance=1e-4):
    """The full oracle sweep used by the CLI `check` command. Returns reports."""
    reports = []
    for seed in seeds:
        model, x, target = random_check_model(int(seed))
        reports.append(
            check_model_gradients(model, x, target, eps=eps, tolerance=tolerance,
                                  label=f"seed={seed}")
        )
    return reports


def format_report_table(reports):
    lines = ["config            param      max_rel_err   max_abs_err   status"]
    for rep in reports:
        for c in rep.checks:
            status = "ok" if c.max_rel_error <= rep.tolerance else "FAIL"
            lines.append(
                f"{rep.label:<17} {c.param:<10} {c.max_rel_error:12.3e}  {c.max_abs_error:12.3e}   {status}"
            )
    return "\n".join(lines)
