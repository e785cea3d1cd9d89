"""Dense, simple-recurrent, and LSTM layers with hand-derived backward passes,
plus the stacked sequential model and checkpoint (de)serialization.

Model input is a 3-D batch (batch, time, features). Internally sequences run
TIME-MAJOR (time, batch, width) so every timestep slice is contiguous for
the kernels; the model transposes once on entry. Recurrent layers form a
prefix of the stack and dense layers the head; the head consumes the final
timestep's output. Initial recurrent state is zero at sequence start.
"""

import base64
import dataclasses
import hashlib
import json

import numpy as np

from . import backend
from .numerics import Activation, ShapeError, activation_deriv_from_output, apply_activation

# Activations allowed inside recurrent cells (must be differentiable and
# supported by both sequence-kernel backends).
_CELL_ACTS = {
    Activation.TANH: backend.ACT_TANH,
    Activation.SIGMOID: backend.ACT_SIGMOID,
    Activation.RELU: backend.ACT_RELU,
    Activation.LINEAR: backend.ACT_LINEAR,
}


def glorot_uniform(n_in, n_out, rng, shape=None):
    """Glorot/Xavier uniform init; `shape` defaults to (n_in, n_out)."""
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=shape or (n_in, n_out))


def _require_cell_act(activation):
    act = Activation.parse(activation)
    if act not in _CELL_ACTS:
        allowed = ", ".join(sorted(a.value for a in _CELL_ACTS))
        raise ValueError(f"recurrent cell activation must be one of {allowed}, got {act.value}")
    return act


def _check_finite_params(params, kind):
    for name, arr in params.items():
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{kind} parameter {name} contains NaN or Inf")


class DenseLayer:
    """Fully connected layer y = phi(x w + b)."""

    kind = "dense"
    recurrent = False

    def __init__(self, w, b, activation=Activation.LINEAR):
        self.w = np.ascontiguousarray(w, dtype=np.float64)
        self.b = np.ascontiguousarray(b, dtype=np.float64).reshape(1, -1)
        self.activation = Activation.parse(activation)
        if self.w.ndim != 2 or self.b.shape[1] != self.w.shape[1]:
            raise ShapeError(f"dense weights {self.w.shape} and bias {self.b.shape} do not conform")
        _check_finite_params(self.params(), self.kind)

    @classmethod
    def init(cls, n_in, n_out, activation, rng):
        return cls(glorot_uniform(n_in, n_out, rng), np.zeros((1, n_out)), activation)

    @property
    def n_in(self):
        return self.w.shape[0]

    @property
    def n_out(self):
        return self.w.shape[1]

    def params(self):
        return {"w": self.w, "b": self.b}

    def forward(self, x, want_cache=False):
        if x.shape[1] != self.n_in:
            raise ShapeError(f"dense input {x.shape} does not conform with weights {self.w.shape}")
        y = apply_activation(x @ self.w + self.b, self.activation)
        return y, ((x, y) if want_cache else None)

    def backward(self, d_y, cache, need_dx=True):
        x, y = cache
        if self.activation is Activation.SOFTMAX:
            # Row-wise Jacobian-vector product of softmax.
            dz = y * (d_y - (d_y * y).sum(axis=1, keepdims=True))
        else:
            dz = d_y * activation_deriv_from_output(self.activation, y)
        grads = {"w": x.T @ dz, "b": dz.sum(axis=0, keepdims=True)}
        return (dz @ self.w.T if need_dx else None), grads


class SimpleRnnLayer:
    """Recurrent layer y_t = phi(x_t w_x + y_{t-1} w_h + b)."""

    kind = "rnn"
    recurrent = True

    def __init__(self, w_x, w_h, b, activation=Activation.TANH, return_sequences=False):
        self.w_x = np.ascontiguousarray(w_x, dtype=np.float64)
        self.w_h = np.ascontiguousarray(w_h, dtype=np.float64)
        self.b = np.ascontiguousarray(b, dtype=np.float64).reshape(1, -1)
        self.activation = _require_cell_act(activation)
        self.return_sequences = return_sequences
        u = self.w_h.shape[0]
        if self.w_h.shape != (u, u) or self.w_x.shape[1] != u or self.b.shape[1] != u:
            raise ShapeError(
                f"rnn shapes do not conform: w_x {self.w_x.shape}, w_h {self.w_h.shape}, b {self.b.shape}"
            )
        _check_finite_params(self.params(), self.kind)

    @classmethod
    def init(cls, n_in, units, activation, rng, return_sequences=False):
        return cls(
            glorot_uniform(n_in, units, rng),
            glorot_uniform(units, units, rng),
            np.zeros((1, units)),
            activation,
            return_sequences,
        )

    @property
    def n_in(self):
        return self.w_x.shape[0]

    @property
    def units(self):
        return self.w_h.shape[0]

    n_out = units

    def params(self):
        return {"w_x": self.w_x, "w_h": self.w_h, "b": self.b}

    def forward(self, x, want_cache=False):
        # x is time-major: (time, batch, features).
        batch = x.shape[1]
        if x.shape[2] != self.n_in:
            raise ShapeError(f"rnn input {x.shape} does not conform with w_x {self.w_x.shape}")
        h0 = np.zeros((batch, self.units))
        act_id = _CELL_ACTS[self.activation]
        h_seq = backend.rnn_forward(x, self.w_x, self.w_h, self.b.ravel(), h0, act_id)
        out = h_seq if self.return_sequences else h_seq[-1]
        return out, ((x, h_seq, h0) if want_cache else None)

    def backward(self, d_out, cache, need_dx=True):
        x, h_seq, h0 = cache
        d_h_seq = _upstream_to_seq(d_out, h_seq, self.return_sequences)
        act_id = _CELL_ACTS[self.activation]
        dx, dw_x, dw_h, db, _dh0 = backend.rnn_backward(
            d_h_seq, x, self.w_x, self.w_h, h_seq, h0, act_id, need_dx
        )
        return dx, {"w_x": dw_x, "w_h": dw_h, "b": db.reshape(1, -1)}


class LstmLayer:
    """LSTM cell layer with sigmoid gates around a main candidate layer.

    Weights are stored fused over the four gates, columns ordered
    (input i, forget f, main g, output o): w_x (in, 4u), w_h (u, 4u),
    b (1, 4u). `cell_activation` applies to the candidate g and to the
    long-term state on its way out (h = o * act(c)); the gates themselves
    are always sigmoid.
    """

    kind = "lstm"
    recurrent = True
    GATE_ORDER = ("i", "f", "g", "o")

    def __init__(self, w_x, w_h, b, cell_activation=Activation.TANH, return_sequences=False):
        self.w_x = np.ascontiguousarray(w_x, dtype=np.float64)
        self.w_h = np.ascontiguousarray(w_h, dtype=np.float64)
        self.b = np.ascontiguousarray(b, dtype=np.float64).reshape(1, -1)
        self.cell_activation = _require_cell_act(cell_activation)
        self.return_sequences = return_sequences
        u = self.w_h.shape[0]
        if self.w_h.shape != (u, 4 * u) or self.w_x.shape[1] != 4 * u or self.b.shape[1] != 4 * u:
            raise ShapeError(
                f"lstm shapes do not conform: w_x {self.w_x.shape}, w_h {self.w_h.shape}, b {self.b.shape}"
            )
        _check_finite_params(self.params(), self.kind)

    @classmethod
    def init(cls, n_in, units, cell_activation, rng, return_sequences=False):
        b = np.zeros((1, 4 * units))
        b[0, units:2 * units] = 1.0  # forget gate starts open
        return cls(
            glorot_uniform(n_in, 4 * units, rng, shape=(n_in, 4 * units)),
            glorot_uniform(units, 4 * units, rng, shape=(units, 4 * units)),
            b,
            cell_activation,
            return_sequences,
        )

    @classmethod
    def from_gates(cls, w_x, w_h, b, cell_activation=Activation.TANH, return_sequences=False):
        """Build from per-gate dicts keyed 'i', 'f', 'g', 'o' (each w_x: in x u)."""
        cols = lambda d: np.concatenate([np.atleast_2d(d[k]) for k in cls.GATE_ORDER], axis=1)
        return cls(cols(w_x), cols(w_h), cols(b), cell_activation, return_sequences)

    @staticmethod
    def gate_slice(name, units):
        idx = LstmLayer.GATE_ORDER.index(name)
        return slice(idx * units, (idx + 1) * units)

    @property
    def n_in(self):
        return self.w_x.shape[0]

    @property
    def units(self):
        return self.w_h.shape[0]

    n_out = units

    def params(self):
        return {"w_x": self.w_x, "w_h": self.w_h, "b": self.b}

    def forward(self, x, want_cache=False, state=None):
        # x is time-major: (time, batch, features).
        batch = x.shape[1]
        if x.shape[2] != self.n_in:
            raise ShapeError(f"lstm input {x.shape} does not conform with w_x {self.w_x.shape}")
        if state is None:
            h0 = np.zeros((batch, self.units))
            c0 = np.zeros((batch, self.units))
        else:
            h0, c0 = state.h, state.c
        act_id = _CELL_ACTS[self.cell_activation]
        h_seq, c_last, kcache = backend.lstm_forward(
            x, self.w_x, self.w_h, self.b.ravel(), h0, c0, act_id, want_cache
        )
        out = h_seq if self.return_sequences else h_seq[-1]
        cache = (x, h_seq, h0, c0, kcache) if want_cache else None
        return out, c_last, cache

    def backward(self, d_out, cache, need_dx=True):
        x, h_seq, h0, c0, kcache = cache
        d_h_seq = _upstream_to_seq(d_out, h_seq, self.return_sequences)
        act_id = _CELL_ACTS[self.cell_activation]
        dx, dw_x, dw_h, db, _dh0, _dc0 = backend.lstm_backward(
            d_h_seq, x, self.w_x, self.w_h, h_seq, h0, c0, kcache, act_id, need_dx
        )
        return dx, {"w_x": dw_x, "w_h": dw_h, "b": db.reshape(1, -1)}


@dataclasses.dataclass
class LstmCellState:
    """Per-layer recurrent state: short-term h and long-term c, both (batch, units)."""

    h: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        if self.h.shape != self.c.shape:
            raise ShapeError(f"state shapes differ: h {self.h.shape}, c {self.c.shape}")

    @classmethod
    def zeros(cls, batch, units):
        return cls(np.zeros((batch, units)), np.zeros((batch, units)))


def rnn_step(layer, x_t, y_prev):
    """One timestep of a SimpleRnnLayer: phi(x_t w_x + y_prev w_h + b)."""
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    y_prev = np.atleast_2d(np.asarray(y_prev, dtype=np.float64))
    if x_t.shape[1] != layer.n_in or y_prev.shape[1] != layer.units:
        raise ShapeError(
            f"step inputs x_t {x_t.shape}, y_prev {y_prev.shape} do not conform with layer "
            f"({layer.n_in} -> {layer.units})"
        )
    act_id = _CELL_ACTS[layer.activation]
    h_seq = backend.rnn_forward(
        x_t[None, :, :], layer.w_x, layer.w_h, layer.b.ravel(),
        np.ascontiguousarray(y_prev), act_id,
    )
    return h_seq[0].copy()


def lstm_step(layer, x_t, state):
    """One timestep of an LstmLayer; returns (output, new LstmCellState)."""
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    if x_t.shape[1] != layer.n_in or state.h.shape[1] != layer.units:
        raise ShapeError(
            f"step inputs x_t {x_t.shape}, state {state.h.shape} do not conform with layer "
            f"({layer.n_in} -> {layer.units})"
        )
    out, c_last, _cache = layer.forward(x_t[None, :, :], want_cache=False, state=state)
    h_last = out if out.ndim == 2 else out[-1]
    h_last = h_last.copy()
    return h_last, LstmCellState(h_last, c_last)


def _upstream_to_seq(d_out, h_seq, return_sequences):
    """Expand an upstream gradient to per-timestep (time-major) form."""
    if return_sequences:
        return d_out
    d_h_seq = np.zeros_like(h_seq)
    d_h_seq[-1] = d_out
    return d_h_seq


class SequentialModel:
    """Ordered layer stack: recurrent layers first, dense head last.

    The head consumes the final timestep's output of the recurrent stack
    (or of the raw input when there are no recurrent layers).
    """

    def __init__(self, layers):
        if not layers:
            raise ValueError("model needs at least one layer")
        seen_dense = False
        for k, layer in enumerate(layers):
            if layer.recurrent:
                if seen_dense:
                    raise ValueError("recurrent layers must precede all dense layers")
            else:
                seen_dense = True
        rec = [l for l in layers if l.recurrent]
        for l in rec[:-1]:
            if not l.return_sequences:
                raise ValueError("only the final recurrent layer may have return_sequences=False")
        for a, b in zip(layers, layers[1:]):
            if a.n_out != b.n_in:
                raise ValueError(
                    f"layer widths do not chain: {a.kind}({a.n_out}) feeds {b.kind}({b.n_in})"
                )
        self.layers = list(layers)
        self._cache = None

    @property
    def input_width(self):
        return self.layers[0].n_in

    @property
    def output_width(self):
        return self.layers[-1].n_out

    def params(self):
        """Live parameter arrays keyed '<layer index>.<name>'."""
        out = {}
        for k, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                out[f"{k}.{name}"] = arr
        return out

    def set_params(self, values):
        for name, arr in values.items():
            k, pname = name.split(".", 1)
            target = self.layers[int(k)].params()[pname]
            target[...] = arr

    def n_params(self):
        return sum(a.size for a in self.params().values())

    def forward(self, x, train=False):
        """Run a (batch, time, features) batch through the stack -> (batch, n_out)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3:
            raise ShapeError(f"model input must be 3-D (batch, time, features), got {x.shape}")
        if x.shape[1] < 1:
            raise ShapeError("empty sequence: time dimension must be >= 1")
        if x.shape[2] != self.input_width:
            raise ShapeError(f"input has {x.shape[2]} features, model expects {self.input_width}")
        if not np.all(np.isfinite(x)):
            raise ValueError("model input contains NaN or Inf")

        caches = []
        cur = np.ascontiguousarray(x.transpose(1, 0, 2))  # -> time-major
        for layer in self.layers:
            if layer.recurrent:
                if layer.kind == "lstm":
                    cur, _c_last, cache = layer.forward(cur, want_cache=train)
                else:
                    cur, cache = layer.forward(cur, want_cache=train)
            else:
                if cur.ndim == 3:
                    cur = cur[-1]  # head reads the last timestep
                cur, cache = layer.forward(cur, want_cache=train)
            caches.append(cache)
        self._cache = caches if train else None
        return cur

    def backward(self, d_output):
        """BPTT through the whole stack; returns grads keyed like params().

        Requires a prior forward(..., train=True); the cache is consumed.
        """
        if self._cache is None:
            raise RuntimeError("backward called without a cached training forward pass")
        caches, self._cache = self._cache, None
        d = np.asarray(d_output, dtype=np.float64)
        grads = {}
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            if layer.recurrent and layer.return_sequences and d.ndim == 2:
                # The dense head consumed only the final timestep of this
                # layer's full-sequence output.
                h_seq = caches[k][1]
                d_full = np.zeros_like(h_seq)
                d_full[-1] = d
                d = d_full
            d, layer_grads = layer.backward(d, caches[k], need_dx=(k > 0))
            for name, g in layer_grads.items():
                grads[f"{k}.{name}"] = g
        return grads


def forward_sequence(model, x):
    """Inference pass over a 3-D batch (spec-level convenience wrapper)."""
    return model.forward(x, train=False)


def backward_sequence(model, d_loss_d_output):
    """Gradient set for the cached training forward pass."""
    return model.backward(d_loss_d_output)


# ---------------------------------------------------------------------------
# Checkpoint serialization: versioned JSON with base64-packed float64 arrays.
# Byte-deterministic for identical models (sorted keys, fixed separators).
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def _pack(arr):
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii"),
    }


def _unpack(obj):
    arr = np.frombuffer(base64.b64decode(obj["data"]), dtype="<f8").astype(np.float64)
    return arr.reshape(obj["shape"])


def _layer_spec(layer):
    spec = {"kind": layer.kind, "params": {n: _pack(a) for n, a in layer.params().items()}}
    if layer.kind == "dense":
        spec["activation"] = layer.activation.value
    elif layer.kind == "rnn":
        spec["activation"] = layer.activation.value
        spec["return_sequences"] = layer.return_sequences
    elif layer.kind == "lstm":
        spec["cell_activation"] = layer.cell_activation.value
        spec["return_sequences"] = layer.return_sequences
    return spec


def _layer_from_spec(spec):
    p = {n: _unpack(a) for n, a in spec["params"].items()}
    kind = spec["kind"]
    if kind == "dense":
        return DenseLayer(p["w"], p["b"], spec["activation"])
    if kind == "rnn":
        return SimpleRnnLayer(p["w_x"], p["w_h"], p["b"], spec["activation"], spec["return_sequences"])
    if kind == "lstm":
        return LstmLayer(p["w_x"], p["w_h"], p["b"], spec["cell_activation"], spec["return_sequences"])
    raise ValueError(f"unknown layer kind {kind!r} in checkpoint")


def checkpoint_bytes(model, meta=None):
    doc = {
        "format": "tempora-checkpoint",
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "layers": [_layer_spec(l) for l in model.layers],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("ascii")


def save_checkpoint(model, path, meta=None):
    data = checkpoint_bytes(model, meta)
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path):
    """Returns (model, meta)."""
    with open(path, "rb") as fh:
        doc = json.loads(fh.read())
    if doc.get("format") != "tempora-checkpoint":
        raise ValueError(f"{path} is not a tempora checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    model = SequentialModel([_layer_from_spec(s) for s in doc["layers"]])
    return model, doc.get("meta", {})
