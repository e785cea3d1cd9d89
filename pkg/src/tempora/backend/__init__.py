"""Sequence-kernel backend selection and worker-thread policy.

The hot LSTM/RNN loops exist twice: a Cython extension (``_seq``) built at
install time, and a pure-numpy fallback (``_ref``). The extension is used
when importable; set TEMPORA_BACKEND=ref to force the fallback (e.g. for
benchmark baselines or debugging a suspected kernel issue).

TEMPORA_THREADS caps worker threads: the kernels' OpenMP row-parallel
loops and, when set, the BLAS pool. Results are identical for any thread
count (static partition over independent rows, no cross-thread reductions).
"""

import ctypes
import os

# BPTT allocates large per-step workspaces (tens of MB). By default glibc
# serves those straight from mmap and returns them on free, so every
# training step pays the page-fault cost again; raising the thresholds
# keeps the blocks in the arena for reuse (~3x faster hot loop).
try:
    _libc = ctypes.CDLL("libc.so.6", use_errno=True)
    _libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
    _libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
except OSError:  # non-glibc platform; purely a performance tweak
    pass

from . import _ref

ACT_TANH = _ref.ACT_TANH
ACT_SIGMOID = _ref.ACT_SIGMOID
ACT_RELU = _ref.ACT_RELU
ACT_LINEAR = _ref.ACT_LINEAR


def _resolve_threads():
    raw = os.environ.get("TEMPORA_THREADS", "").strip()
    if raw:
        n = int(raw)
        if n < 1:
            raise ValueError(f"TEMPORA_THREADS must be >= 1, got {raw}")
        try:
            import threadpoolctl

            threadpoolctl.threadpool_limits(limits=n)
        except ImportError:
            pass
        return n
    return os.cpu_count() or 1


N_THREADS = _resolve_threads()

_forced = os.environ.get("TEMPORA_BACKEND", "").strip().lower()
if _forced == "ref":
    _impl = _ref
elif _forced in ("", "ext"):
    try:
        from . import _seq as _impl
    except ImportError:
        if _forced == "ext":
            raise ImportError(
                "TEMPORA_BACKEND=ext but the compiled kernels are not built; "
                "reinstall with a C compiler available"
            )
        _impl = _ref
else:
    raise ValueError(f"TEMPORA_BACKEND must be 'ext' or 'ref', got {_forced!r}")

NAME = _impl.NAME


def lstm_forward(x, w_x, w_h, b, h0, c0, act_id, want_cache):
    return _impl.lstm_forward(x, w_x, w_h, b, h0, c0, act_id, want_cache,
                              n_threads=N_THREADS)


def lstm_backward(d_h_seq, x, w_x, w_h, h_seq, h0, c0, cache, act_id, need_dx=True):
    return _impl.lstm_backward(d_h_seq, x, w_x, w_h, h_seq, h0, c0, cache, act_id,
                               need_dx, n_threads=N_THREADS)


def rnn_forward(x, w_x, w_h, b, h0, act_id):
    return _impl.rnn_forward(x, w_x, w_h, b, h0, act_id, n_threads=N_THREADS)


def rnn_backward(d_h_seq, x, w_x, w_h, h_seq, h0, act_id, need_dx=True):
    return _impl.rnn_backward(d_h_seq, x, w_x, w_h, h_seq, h0, act_id,
                              need_dx, n_threads=N_THREADS)
