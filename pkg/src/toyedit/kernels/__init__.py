"""Attention kernel backends.

The compiled Cython kernel is used when it was built; otherwise the numpy
fallback is selected at import time. Both satisfy the same contract (see
``_attn_np``). The Cython path only handles float32; float64 calls (used by
the finite-difference harness) always go through numpy.
"""

import numpy as np

from toyedit.kernels import _attn_np

try:
    from toyedit.kernels import _attn_cy

    BACKEND = "cython"
except ImportError:  # extension not built
    _attn_cy = None
    BACKEND = "numpy"

_FORCED = None


def active_backend():
    return _FORCED or BACKEND


def force_backend(name):
    """Override backend selection ('cython', 'numpy', or None to reset)."""
    global _FORCED
    if name not in (None, "numpy", "cython"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "cython" and _attn_cy is None:
        raise ValueError("cython kernel was not built")
    _FORCED = name


# Measured on 2-core CPU: the compiled loops beat BLAS-backed numpy only in
# the overhead-bound single-row forward regime; numpy wins larger batches
# and every backward. bench_kernels.py reproduces the crossover.
_CY_FWD_MAX_ROWS = 24


def _impl(dtype, rows, backward=False):
    if active_backend() == "cython" and dtype == np.float32:
        if _FORCED == "cython":
            return _attn_cy
        if not backward and rows <= _CY_FWD_MAX_ROWS:
            return _attn_cy
    return _attn_np


def attention_forward(q, k, v, mask, n_heads):
    impl = _impl(q.dtype, q.shape[0] * q.shape[1])
    return impl.attention_forward(q, k, v, mask, n_heads)


def attention_backward(q, k, v, probs, d_out, n_heads):
    impl = _impl(q.dtype, q.shape[0] * q.shape[1], backward=True)
    return impl.attention_backward(q, k, v, probs, d_out, n_heads)
