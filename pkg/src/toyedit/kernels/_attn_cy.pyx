# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Cython multi-head attention kernel (float32, CPU).

Same contract as the numpy fallback: masked key positions are skipped
entirely, so their weight is exactly zero and the row max/normalizer are
taken over allowed positions only.
"""

import numpy as np

from libc.math cimport expf, sqrtf, INFINITY


def attention_forward(float[:, :, ::1] q, float[:, :, ::1] k, float[:, :, ::1] v,
                      float[:, ::1] mask, int n_heads):
    cdef Py_ssize_t b = q.shape[0]
    cdef Py_ssize_t nq = q.shape[1]
    cdef Py_ssize_t d = q.shape[2]
    cdef Py_ssize_t nk = k.shape[1]
    cdef Py_ssize_t dh = d // n_heads
    cdef float scale = 1.0 / sqrtf(<float> dh)

    out_arr = np.zeros((b, nq, d), dtype=np.float32)
    probs_arr = np.zeros((b, n_heads, nq, nk), dtype=np.float32)
    cdef float[:, :, ::1] out = out_arr
    cdef float[:, :, :, ::1] probs = probs_arr

    cdef Py_ssize_t ib, h, i, j, c, off
    cdef float s, m, z, p

    for ib in range(b):
        for h in range(n_heads):
            off = h * dh
            for i in range(nq):
                m = -INFINITY
                for j in range(nk):
                    if mask[i, j] != 0:
                        s = 0.0
                        for c in range(dh):
                            s += q[ib, i, off + c] * k[ib, j, off + c]
                        s *= scale
                        probs[ib, h, i, j] = s
                        if s > m:
                            m = s
                z = 0.0
                for j in range(nk):
                    if mask[i, j] != 0:
                        p = expf(probs[ib, h, i, j] - m)
                        probs[ib, h, i, j] = p
                        z += p
                for j in range(nk):
                    if mask[i, j] != 0:
                        p = probs[ib, h, i, j] / z
                        probs[ib, h, i, j] = p
                        for c in range(dh):
                            out[ib, i, off + c] += p * v[ib, j, off + c]
    return out_arr, probs_arr


def attention_backward(float[:, :, ::1] q, float[:, :, ::1] k, float[:, :, ::1] v,
                       float[:, :, :, ::1] probs, float[:, :, ::1] d_out, int n_heads):
    cdef Py_ssize_t b = q.shape[0]
    cdef Py_ssize_t nq = q.shape[1]
    cdef Py_ssize_t d = q.shape[2]
    cdef Py_ssize_t nk = k.shape[1]
    cdef Py_ssize_t dh = d // n_heads
    cdef float scale = 1.0 / sqrtf(<float> dh)

    dq_arr = np.zeros((b, nq, d), dtype=np.float32)
    dk_arr = np.zeros((b, nk, d), dtype=np.float32)
    dv_arr = np.zeros((b, nk, d), dtype=np.float32)
    ds_arr = np.zeros(nk, dtype=np.float32)
    cdef float[:, :, ::1] dq = dq_arr
    cdef float[:, :, ::1] dk = dk_arr
    cdef float[:, :, ::1] dv = dv_arr
    cdef float[::1] ds = ds_arr

    cdef Py_ssize_t ib, h, i, j, c, off
    cdef float g, dp, acc, p

    for ib in range(b):
        for h in range(n_heads):
            off = h * dh
            for i in range(nq):
                # dP and the softmax-backward inner product in one sweep
                acc = 0.0
                for j in range(nk):
                    p = probs[ib, h, i, j]
                    if p != 0.0:
                        dp = 0.0
                        for c in range(dh):
                            dp += d_out[ib, i, off + c] * v[ib, j, off + c]
                        ds[j] = dp
                        acc += dp * p
                    else:
                        ds[j] = 0.0
                for j in range(nk):
                    p = probs[ib, h, i, j]
                    if p != 0.0:
                        g = p * (ds[j] - acc)
                        for c in range(dh):
                            dq[ib, i, off + c] += g * k[ib, j, off + c] * scale
                            dk[ib, j, off + c] += g * q[ib, i, off + c] * scale
                            dv[ib, j, off + c] += p * d_out[ib, i, off + c]
    return dq_arr, dk_arr, dv_arr
