"""Pure-numpy sequence kernels (fallback backend).

These are the reference semantics for the compiled kernels in ``_seq.pyx``:
same array layouts, same gate order, same clamped-sigmoid form, so the two
backends agree to near machine precision.

All sequence arrays are TIME-MAJOR so every timestep slice is contiguous:
  x       (time, batch, features)
  h_seq   (time, batch, units)
  w_x     (features, 4*units)   LSTM gate columns ordered i, f, g, o
  w_h     (units, 4*units)
  b       (4*units,)
  h0/c0   (batch, units)
"""

import numpy as np

NAME = "ref"

ACT_TANH = 0
ACT_SIGMOID = 1
ACT_RELU = 2
ACT_LINEAR = 3

# Clamp before exp so the single-form logistic never overflows; sigma(40)
# differs from 1.0 by ~4e-18, far below any tolerance used in this package.
_SIG_CLAMP = 40.0


def _sig(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -_SIG_CLAMP, _SIG_CLAMP)))


def _act(z, act_id):
    if act_id == ACT_TANH:
        return np.tanh(z)
    if act_id == ACT_SIGMOID:
        return _sig(z)
    if act_id == ACT_RELU:
        return np.maximum(z, 0.0)
    if act_id == ACT_LINEAR:
        return z.copy()
    raise ValueError(f"bad activation id {act_id}")


def _act_deriv(out, act_id):
    # Derivative recovered from the activation output.
    if act_id == ACT_TANH:
        return 1.0 - out * out
    if act_id == ACT_SIGMOID:
        return out * (1.0 - out)
    if act_id == ACT_RELU:
        return (out > 0.0).astype(np.float64)
    if act_id == ACT_LINEAR:
        return np.ones_like(out)
    raise ValueError(f"bad activation id {act_id}")


def lstm_forward(x, w_x, w_h, b, h0, c0, act_id, want_cache):
    """Run one LSTM layer over a full time-major sequence.

    Returns (h_seq, c_last, cache); cache is (gates, c_seq, a_seq) with
    gates holding post-activation i, f, g, o, or None when not requested.
    """
    time, batch, feat = x.shape
    units = w_h.shape[0]
    z_all = x.reshape(time * batch, feat) @ w_x + b
    z_all = z_all.reshape(time, batch, 4 * units)

    h_seq = np.empty((time, batch, units))
    c_seq = np.empty((time, batch, units)) if want_cache else None
    a_seq = np.empty((time, batch, units)) if want_cache else None

    h = h0
    c = c0
    for t in range(time):
        z = z_all[t] + h @ w_h
        i = _sig(z[:, :units])
        f = _sig(z[:, units:2 * units])
        g = _act(z[:, 2 * units:3 * units], act_id)
        o = _sig(z[:, 3 * units:])
        c = f * c + i * g
        a = _act(c, act_id)
        h = o * a
        h_seq[t] = h
        if want_cache:
            z_all[t, :, :units] = i
            z_all[t, :, units:2 * units] = f
            z_all[t, :, 2 * units:3 * units] = g
            z_all[t, :, 3 * units:] = o
            c_seq[t] = c
            a_seq[t] = a

    cache = (z_all, c_seq, a_seq) if want_cache else None
    return h_seq, c.copy(), cache


def lstm_backward(d_h_seq, x, w_x, w_h, h_seq, h0, c0, cache, act_id, need_dx=True):
    """Backpropagation through time for one LSTM layer.

    ``d_h_seq`` is the upstream gradient for every timestep's h output.
    Returns (dx, dw_x, dw_h, db, dh0, dc0); dx is None when not requested
    (the bottom layer has no consumer for it).
    """
    gates, c_seq, a_seq = cache
    time, batch, units = h_seq.shape
    u = units

    dz_all = np.empty_like(gates)
    dh_carry = np.zeros((batch, units))
    dc_carry = np.zeros((batch, units))
    for t in range(time - 1, -1, -1):
        i = gates[t, :, :u]
        f = gates[t, :, u:2 * u]
        g = gates[t, :, 2 * u:3 * u]
        o = gates[t, :, 3 * u:]
        a = a_seq[t]
        c_prev = c_seq[t - 1] if t > 0 else c0

        dh = d_h_seq[t] + dh_carry
        do = dh * a
        dc = dc_carry + dh * o * _act_deriv(a, act_id)
        dz = dz_all[t]
        dz[:, :u] = dc * g * i * (1.0 - i)
        dz[:, u:2 * u] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * u:3 * u] = dc * i * _act_deriv(g, act_id)
        dz[:, 3 * u:] = do * o * (1.0 - o)
        dh_carry = dz @ w_h.T
        dc_carry = dc * f

    x_flat = x.reshape(time * batch, -1)
    dz_flat = dz_all.reshape(time * batch, 4 * units)
    dw_x = x_flat.T @ dz_flat
    # h_prev stacking needs no copy in time-major layout: [h0; h_seq[:-1]].
    dw_h = h0.T @ dz_all[0]
    if time > 1:
        dw_h += h_seq[:-1].reshape((time - 1) * batch, units).T @ dz_all[1:].reshape(
            (time - 1) * batch, 4 * units
        )
    db = dz_flat.sum(axis=0)
    dx = (dz_flat @ w_x.T).reshape(x.shape) if need_dx else None
    return dx, dw_x, dw_h, db, dh_carry, dc_carry


def rnn_forward(x, w_x, w_h, b, h0, act_id):
    """Simple recurrent layer over a time-major sequence; h_seq doubles as the cache."""
    time, batch, feat = x.shape
    units = w_h.shape[0]
    z_all = x.reshape(time * batch, feat) @ w_x + b
    z_all = z_all.reshape(time, batch, units)

    h = h0
    for t in range(time):
        h = _act(z_all[t] + h @ w_h, act_id)
        z_all[t] = h
    return z_all


def rnn_backward(d_h_seq, x, w_x, w_h, h_seq, h0, act_id, need_dx=True):
    """BPTT for one simple recurrent layer."""
    time, batch, units = h_seq.shape
    dz_all = np.empty_like(h_seq)
    dh_carry = np.zeros((batch, units))
    for t in range(time - 1, -1, -1):
        dh = d_h_seq[t] + dh_carry
        dz = dh * _act_deriv(h_seq[t], act_id)
        dz_all[t] = dz
        dh_carry = dz @ w_h.T

    x_flat = x.reshape(time * batch, -1)
    dz_flat = dz_all.reshape(time * batch, units)
    dw_x = x_flat.T @ dz_flat
    dw_h = h0.T @ dz_all[0]
    if time > 1:
        dw_h += h_seq[:-1].reshape((time - 1) * batch, units).T @ dz_all[1:].reshape(
            (time - 1) * batch, units
        )
    db = dz_flat.sum(axis=0)
    dx = (dz_flat @ w_x.T).reshape(x.shape) if need_dx else None
    return dx, dw_x, dw_h, db, dh_carry
