"""Dense linear algebra and activation functions shared by all layers.

Everything runs in float64. Matrices are 2-D C-order numpy arrays with the
batch dimension on rows; biases are stored 1 x n and broadcast over rows.
"""

import enum

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class Activation(enum.Enum):
    STEP = "step"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    RELU = "relu"
    SOFTMAX = "softmax"
    LINEAR = "linear"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ValueError(f"unknown activation {name!r}") from None


def as_matrix(values):
    """Coerce to a float64 2-D array, promoting 1-D input to a single row."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def ensure_finite(m, what="matrix"):
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{what} contains NaN or Inf")
    return m


def matmul(a, b):
    """Matrix product with an explicit conformance check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sigmoid(z):
    """Logistic function, branch-on-sign so exp never sees a positive argument."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z):
    """Row-wise softmax, shifted by the row max for stability."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def apply_activation(m, activation):
    """Apply ``activation`` elementwise (softmax per row) to a matrix."""
    m = np.asarray(m, dtype=np.float64)
    act = Activation.parse(activation)
    if act is Activation.LINEAR:
        return m.copy()
    if act is Activation.STEP:
        # Fires at the threshold: step(0) = 1.
        return np.where(m >= 0.0, 1.0, 0.0)
    if act is Activation.SIGMOID:
        return sigmoid(m)
    if act is Activation.TANH:
        return np.tanh(m)
    if act is Activation.RELU:
        return np.maximum(m, 0.0)
    if act is Activation.SOFTMAX:
        return softmax(m)
    raise ValueError(f"unhandled activation {act}")


def activation_deriv_from_output(activation, out):
    """Elementwise derivative phi'(z) recovered from y = phi(z).

    Softmax is excluded (its Jacobian is not elementwise) and step is not
    differentiable; both raise.
    """
    act = Activation.parse(activation)
    if act is Activation.LINEAR:
        return np.ones_like(out)
    if act is Activation.SIGMOID:
        return out * (1.0 - out)
    if act is Activation.TANH:
        return 1.0 - out * out
    if act is Activation.RELU:
        return (out > 0.0).astype(np.float64)
    raise ValueError(f"no elementwise derivative for activation {act.value}")


def dense_forward(x, w, b, activation):
    """One fully connected layer: phi(x w + b) with b broadcast over rows."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = as_matrix(b)
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"input {x.shape} does not conform with weights {w.shape}")
    if b.shape != (1, w.shape[1]):
        raise ShapeError(f"bias {b.shape} must be 1x{w.shape[1]}")
    return apply_activation(x @ w + b, activation)
