# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sequence kernels (ext backend).

Mirrors _ref.py exactly: same time-major layouts, gate order (i, f, g, o),
and clamped sigmoid. The time loop runs entirely in C; matrix products go
through BLAS (scipy's cython_blas) and the elementwise cell math is fused
so no per-timestep temporaries are allocated. Elementwise passes fan out
over batch rows with OpenMP; rows are independent and the partition is
static, so results do not depend on the thread count.
"""

cimport scipy.linalg.cython_blas as blas
from cython.parallel cimport prange
from libc.math cimport exp, fmax, fmin, tanh
from libc.string cimport memcpy

import numpy as np

NAME = "ext"

cdef enum:
    _TANH = 0
    _SIGMOID = 1
    _RELU = 2
    _LINEAR = 3

ACT_TANH = _TANH
ACT_SIGMOID = _SIGMOID
ACT_RELU = _RELU
ACT_LINEAR = _LINEAR

cdef double SIG_CLAMP = 40.0


cdef inline double _sig(double z) noexcept nogil:
    z = fmax(-SIG_CLAMP, fmin(SIG_CLAMP, z))
    return 1.0 / (1.0 + exp(-z))


cdef inline double _act_one(double z, int act_id) noexcept nogil:
    if act_id == _TANH:
        return tanh(z)
    if act_id == _SIGMOID:
        return _sig(z)
    if act_id == _RELU:
        return fmax(z, 0.0)
    return z


cdef inline double _act_deriv_one(double out, int act_id) noexcept nogil:
    # Derivative recovered from the activation output.
    if act_id == _TANH:
        return 1.0 - out * out
    if act_id == _SIGMOID:
        return out * (1.0 - out)
    if act_id == _RELU:
        return 1.0 if out > 0.0 else 0.0
    return 1.0


cdef inline void _gemm(char* opa, char* opb, int m, int n, int k, double alpha,
                       const double* a, int lda, const double* b, int ldb,
                       double beta, double* c, int ldc) noexcept nogil:
    """Row-major C(m,n) = alpha * op(A) @ op(B) + beta * C.

    ld* are row strides in elements. Maps onto Fortran dgemm through the
    identity C^T = op(B)^T op(A)^T.
    """
    blas.dgemm(opb, opa, &n, &m, &k, &alpha, <double*>b, &ldb, <double*>a, &lda,
               &beta, c, &ldc)


cdef inline void _xproj_row(const double* xr, const double* w, const double* bias,
                            double* zr, int feat, int width) noexcept nogil:
    """zr = bias + xr @ w for one row and very small `feat`.

    BLAS dgemm degenerates for inner dimensions this small (5-6 features),
    so the projection is a streaming fused multiply-add instead.
    """
    cdef int f, j
    cdef const double* wf
    cdef double xv
    memcpy(zr, bias, width * sizeof(double))
    for f in range(feat):
        xv = xr[f]
        wf = w + f * width
        for j in range(width):
            zr[j] += xv * wf[j]


cdef inline void _lstm_cell_row(double* zr, const double* cprev, double* cr,
                                double* ar, double* hr, int units,
                                int act_id) noexcept nogil:
    """Gate activations + cell update for one row; zr is the (4*units,)
    pre-activation slab, overwritten with post-activation gates."""
    cdef int j, u
    for j in range(2 * units):          # i and f gates
        zr[j] = _sig(zr[j])
    if act_id == _TANH:                 # main candidate g
        for j in range(2 * units, 3 * units):
            zr[j] = tanh(zr[j])
    elif act_id == _RELU:
        for j in range(2 * units, 3 * units):
            zr[j] = fmax(zr[j], 0.0)
    elif act_id == _SIGMOID:
        for j in range(2 * units, 3 * units):
            zr[j] = _sig(zr[j])
    for j in range(3 * units, 4 * units):   # o gate
        zr[j] = _sig(zr[j])
    for u in range(units):
        cr[u] = zr[units + u] * cprev[u] + zr[u] * zr[2 * units + u]
    for u in range(units):
        ar[u] = _act_one(cr[u], act_id)
    for u in range(units):
        hr[u] = zr[3 * units + u] * ar[u]


def lstm_forward(x, w_x, w_h, b, h0, c0, int act_id, bint want_cache,
                 int n_threads=1):
    """See _ref.lstm_forward; identical contract (time-major x)."""
    cdef double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] wxv = np.ascontiguousarray(w_x, dtype=np.float64)
    cdef double[:, ::1] whv = np.ascontiguousarray(w_h, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64).ravel()
    cdef double[:, ::1] h0v = np.ascontiguousarray(h0, dtype=np.float64)
    cdef double[:, ::1] c0v = np.ascontiguousarray(c0, dtype=np.float64)

    cdef int time = xv.shape[0], batch = xv.shape[1], feat = xv.shape[2]
    cdef int units = whv.shape[0], width = 4 * units
    cdef int nt = max(1, n_threads)

    h_seq_arr = np.empty((time, batch, units))
    c_last_arr = np.empty((batch, units))
    a_slab_arr = np.empty((batch, units))
    cdef double[:, :, ::1] h_seq = h_seq_arr
    cdef double[:, ::1] c_last = c_last_arr
    cdef double[:, ::1] a_slab = a_slab_arr  # scratch for the no-cache path

    cdef double[:, :, ::1] gates = None
    cdef double[:, :, ::1] c_seq = None
    cdef double[:, :, ::1] a_seq = None
    gates_arr = c_seq_arr = a_seq_arr = None
    cdef double[:, ::1] z_slab = None
    if want_cache:
        gates_arr = np.empty((time, batch, width))
        c_seq_arr = np.empty((time, batch, units))
        a_seq_arr = np.empty((time, batch, units))
        gates = gates_arr
        c_seq = c_seq_arr
        a_seq = a_seq_arr
    else:
        z_slab = np.empty((batch, width))

    cdef Py_ssize_t r, rows
    cdef int t
    cdef double* zr
    cdef const double* cprev
    cdef const double* h_prev
    cdef double* z_base

    with nogil:
        if want_cache:
            # One streaming pass over the flattened (time*batch, feat) view:
            # the gates buffer starts as x w_x + b.
            rows = <Py_ssize_t>time * batch
            for r in prange(rows, num_threads=nt, schedule="static"):
                _xproj_row(&xv[0, 0, 0] + r * feat, &wxv[0, 0], &bv[0],
                           &gates[0, 0, 0] + r * width, feat, width)
        for t in range(time):
            if want_cache:
                z_base = &gates[t, 0, 0]
            else:
                z_base = &z_slab[0, 0]
                for r in prange(batch, num_threads=nt, schedule="static"):
                    _xproj_row(&xv[t, 0, 0] + r * feat, &wxv[0, 0], &bv[0],
                               z_base + r * width, feat, width)
            h_prev = &h0v[0, 0] if t == 0 else &h_seq[t - 1, 0, 0]
            _gemm(b"N", b"N", batch, width, units, 1.0,
                  h_prev, units, &whv[0, 0], width, 1.0, z_base, width)

            if want_cache:
                for r in prange(batch, num_threads=nt, schedule="static"):
                    _lstm_cell_row(z_base + r * width,
                                   &c0v[r, 0] if t == 0 else &c_seq[t - 1, r, 0],
                                   &c_seq[t, r, 0], &a_seq[t, r, 0],
                                   &h_seq[t, r, 0], units, act_id)
            else:
                if t == 0:
                    memcpy(&c_last[0, 0], &c0v[0, 0],
                           <size_t>batch * units * sizeof(double))
                # In-place c update: c_last holds c_{t-1} on entry.
                for r in prange(batch, num_threads=nt, schedule="static"):
                    _lstm_cell_row(z_base + r * width, &c_last[r, 0],
                                   &c_last[r, 0], &a_slab[r, 0],
                                   &h_seq[t, r, 0], units, act_id)
        if want_cache:
            memcpy(&c_last[0, 0], &c_seq[time - 1, 0, 0],
                   <size_t>batch * units * sizeof(double))

    cache = (gates_arr, c_seq_arr, a_seq_arr) if want_cache else None
    return h_seq_arr, c_last_arr, cache


def lstm_backward(d_h_seq, x, w_x, w_h, h_seq, h0, c0, cache, int act_id,
                  bint need_dx=True, int n_threads=1):
    """See _ref.lstm_backward; identical contract.

    The gates cache is overwritten with pre-activation gradients (the cache
    is consumed, matching the one-shot backward contract in layers).
    """
    gates_arr, c_seq_arr, a_seq_arr = cache
    cdef double[:, :, ::1] dhs = np.ascontiguousarray(d_h_seq, dtype=np.float64)
    cdef double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] wxv = np.ascontiguousarray(w_x, dtype=np.float64)
    cdef double[:, ::1] whv = np.ascontiguousarray(w_h, dtype=np.float64)
    cdef double[:, :, ::1] h_seqv = h_seq
    cdef double[:, ::1] h0v = np.ascontiguousarray(h0, dtype=np.float64)
    cdef double[:, ::1] c0v = np.ascontiguousarray(c0, dtype=np.float64)
    cdef double[:, :, ::1] gates = gates_arr
    cdef double[:, :, ::1] c_seq = c_seq_arr
    cdef double[:, :, ::1] a_seq = a_seq_arr

    cdef int time = xv.shape[0], batch = xv.shape[1], feat = xv.shape[2]
    cdef int units = whv.shape[0], width = 4 * units
    cdef int nt = max(1, n_threads)

    dx_arr = np.empty((time, batch, feat)) if need_dx else None
    dwx_arr = np.zeros((feat, width))
    dwh_arr = np.zeros((units, width))
    dh_arr = np.zeros((batch, units))
    dc_arr = np.zeros((batch, units))
    cdef double[:, :, ::1] dx = dx_arr if need_dx else None
    cdef double[:, ::1] dwx = dwx_arr
    cdef double[:, ::1] dwh = dwh_arr
    cdef double[:, ::1] dh_carry = dh_arr
    cdef double[:, ::1] dc_carry = dc_arr

    cdef Py_ssize_t r, flat_rows
    cdef int t, u
    cdef double* zr
    cdef const double* ar
    cdef const double* cprev
    cdef double dh, dc, do_, gi, gf, gg, go

    with nogil:
        for t in range(time - 1, -1, -1):
            for r in prange(batch, num_threads=nt, schedule="static"):
                zr = &gates[t, r, 0]
                ar = &a_seq[t, r, 0]
                cprev = &c0v[r, 0] if t == 0 else &c_seq[t - 1, r, 0]
                for u in range(units):
                    gi = zr[u]
                    gf = zr[units + u]
                    gg = zr[2 * units + u]
                    go = zr[3 * units + u]
                    dh = dhs[t, r, u] + dh_carry[r, u]
                    do_ = dh * ar[u]
                    dc = dc_carry[r, u] + dh * go * _act_deriv_one(ar[u], act_id)
                    dc_carry[r, u] = dc * gf
                    # Overwrite the cached activations with dz in place.
                    zr[u] = dc * gg * gi * (1.0 - gi)
                    zr[units + u] = dc * cprev[u] * gf * (1.0 - gf)
                    zr[2 * units + u] = dc * gi * _act_deriv_one(gg, act_id)
                    zr[3 * units + u] = do_ * go * (1.0 - go)
            # dh for the next (earlier) step: dz @ w_h^T
            _gemm(b"N", b"T", batch, units, width, 1.0,
                  &gates[t, 0, 0], width, &whv[0, 0], width, 0.0, &dh_carry[0, 0], units)

        # Batched reductions over the flat (time*batch, .) views.
        flat_rows = <Py_ssize_t>time * batch
        _gemm(b"T", b"N", feat, width, <int>flat_rows, 1.0,
              &xv[0, 0, 0], feat, &gates[0, 0, 0], width, 0.0, &dwx[0, 0], width)
        _gemm(b"T", b"N", units, width, batch, 1.0,
              &h0v[0, 0], units, &gates[0, 0, 0], width, 0.0, &dwh[0, 0], width)
        if time > 1:
            _gemm(b"T", b"N", units, width, <int>((time - 1) * batch), 1.0,
                  &h_seqv[0, 0, 0], units, &gates[1, 0, 0], width, 1.0, &dwh[0, 0], width)
        if need_dx:
            _gemm(b"N", b"T", <int>flat_rows, feat, width, 1.0,
                  &gates[0, 0, 0], width, &wxv[0, 0], width, 0.0, &dx[0, 0, 0], feat)

    db_arr = gates_arr.reshape(-1, width).sum(axis=0)
    return dx_arr, dwx_arr, dwh_arr, db_arr, dh_arr, dc_arr


def rnn_forward(x, w_x, w_h, b, h0, int act_id, int n_threads=1):
    """See _ref.rnn_forward; identical contract (time-major x)."""
    cdef double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] wxv = np.ascontiguousarray(w_x, dtype=np.float64)
    cdef double[:, ::1] whv = np.ascontiguousarray(w_h, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64).ravel()
    cdef double[:, ::1] h0v = np.ascontiguousarray(h0, dtype=np.float64)

    cdef int time = xv.shape[0], batch = xv.shape[1], feat = xv.shape[2]
    cdef int units = whv.shape[0]
    cdef int nt = max(1, n_threads)

    h_seq_arr = np.empty((time, batch, units))
    cdef double[:, :, ::1] h_seq = h_seq_arr
    cdef Py_ssize_t r, rows
    cdef int t, u
    cdef double* zr
    cdef const double* h_prev

    with nogil:
        rows = <Py_ssize_t>time * batch
        for r in prange(rows, num_threads=nt, schedule="static"):
            _xproj_row(&xv[0, 0, 0] + r * feat, &wxv[0, 0], &bv[0],
                       &h_seq[0, 0, 0] + r * units, feat, units)
        for t in range(time):
            h_prev = &h0v[0, 0] if t == 0 else &h_seq[t - 1, 0, 0]
            _gemm(b"N", b"N", batch, units, units, 1.0,
                  h_prev, units, &whv[0, 0], units, 1.0, &h_seq[t, 0, 0], units)
            for r in prange(batch, num_threads=nt, schedule="static"):
                zr = &h_seq[t, r, 0]
                if act_id == _TANH:
                    for u in range(units):
                        zr[u] = tanh(zr[u])
                elif act_id == _SIGMOID:
                    for u in range(units):
                        zr[u] = _sig(zr[u])
                elif act_id == _RELU:
                    for u in range(units):
                        zr[u] = fmax(zr[u], 0.0)
    return h_seq_arr


def rnn_backward(d_h_seq, x, w_x, w_h, h_seq, h0, int act_id,
                 bint need_dx=True, int n_threads=1):
    """See _ref.rnn_backward; identical contract."""
    cdef double[:, :, ::1] dhs = np.ascontiguousarray(d_h_seq, dtype=np.float64)
    cdef double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] wxv = np.ascontiguousarray(w_x, dtype=np.float64)
    cdef double[:, ::1] whv = np.ascontiguousarray(w_h, dtype=np.float64)
    cdef double[:, :, ::1] h_seqv = h_seq
    cdef double[:, ::1] h0v = np.ascontiguousarray(h0, dtype=np.float64)

    cdef int time = xv.shape[0], batch = xv.shape[1], feat = xv.shape[2]
    cdef int units = whv.shape[0]
    cdef int nt = max(1, n_threads)

    dx_arr = np.empty((time, batch, feat)) if need_dx else None
    dwx_arr = np.zeros((feat, units))
    dwh_arr = np.zeros((units, units))
    dh_arr = np.zeros((batch, units))
    dz_all_arr = np.empty((time, batch, units))
    cdef double[:, :, ::1] dx = dx_arr if need_dx else None
    cdef double[:, ::1] dwx = dwx_arr
    cdef double[:, ::1] dwh = dwh_arr
    cdef double[:, ::1] dh_carry = dh_arr
    cdef double[:, :, ::1] dz_all = dz_all_arr

    cdef Py_ssize_t r, flat_rows
    cdef int t, u

    with nogil:
        for t in range(time - 1, -1, -1):
            for r in prange(batch, num_threads=nt, schedule="static"):
                for u in range(units):
                    dz_all[t, r, u] = (dhs[t, r, u] + dh_carry[r, u]) * \
                        _act_deriv_one(h_seqv[t, r, u], act_id)
            _gemm(b"N", b"T", batch, units, units, 1.0,
                  &dz_all[t, 0, 0], units, &whv[0, 0], units, 0.0, &dh_carry[0, 0], units)

        flat_rows = <Py_ssize_t>time * batch
        _gemm(b"T", b"N", feat, units, <int>flat_rows, 1.0,
              &xv[0, 0, 0], feat, &dz_all[0, 0, 0], units, 0.0, &dwx[0, 0], units)
        _gemm(b"T", b"N", units, units, batch, 1.0,
              &h0v[0, 0], units, &dz_all[0, 0, 0], units, 0.0, &dwh[0, 0], units)
        if time > 1:
            _gemm(b"T", b"N", units, units, <int>((time - 1) * batch), 1.0,
                  &h_seqv[0, 0, 0], units, &dz_all[1, 0, 0], units, 1.0, &dwh[0, 0], units)
        if need_dx:
            _gemm(b"N", b"T", <int>flat_rows, feat, units, 1.0,
                  &dz_all[0, 0, 0], units, &wxv[0, 0], units, 0.0, &dx[0, 0, 0], feat)
    db_arr = dz_all_arr.reshape(-1, units).sum(axis=0)
    return dx_arr, dwx_arr, dwh_arr, db_arr, dh_arr
