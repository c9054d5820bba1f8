"""Pure-numpy multi-head attention kernel (fallback for the Cython one).

Both backends implement the same contract:

    attention_forward(q, k, v, mask, n_heads) -> (out, probs)
    attention_backward(q, k, v, probs, d_out, n_heads) -> (dq, dk, dv)

q is [B, nq, d]; k and v are [B, nk, d]; mask is [nq, nk] with 1 where the
query may attend and 0 where it may not. Masked positions get exactly zero
weight. probs holds the softmax weights [B, H, nq, nk] saved for backward.
"""

import numpy as np

NEG_INF = np.float32(-np.inf)


def attention_forward(q, k, v, mask, n_heads):
    b, nq, d = q.shape
    nk = k.shape[1]
    dh = d // n_heads
    scale = np.float32(1.0 / np.sqrt(dh))

    qh = q.reshape(b, nq, n_heads, dh).transpose(0, 2, 1, 3)
    kh = k.reshape(b, nk, n_heads, dh).transpose(0, 2, 1, 3)
    vh = v.reshape(b, nk, n_heads, dh).transpose(0, 2, 1, 3)

    scores = np.matmul(qh, kh.swapaxes(-1, -2)) * scale
    scores = np.where(mask[None, None].astype(bool), scores, NEG_INF)
    scores -= scores.max(axis=-1, keepdims=True)
    np.exp(scores, out=scores)
    probs = scores / scores.sum(axis=-1, keepdims=True)

    out = np.matmul(probs, vh)  # [B, H, nq, dh]
    out = out.transpose(0, 2, 1, 3).reshape(b, nq, d)
    return np.ascontiguousarray(out), probs


def attention_backward(q, k, v, probs, d_out, n_heads):
    b, nq, d = q.shape
    nk = k.shape[1]
    dh = d // n_heads
    scale = np.asarray(1.0 / np.sqrt(dh), dtype=q.dtype)

    qh = q.reshape(b, nq, n_heads, dh).transpose(0, 2, 1, 3)
    kh = k.reshape(b, nk, n_heads, dh).transpose(0, 2, 1, 3)
    vh = v.reshape(b, nk, n_heads, dh).transpose(0, 2, 1, 3)
    gh = d_out.reshape(b, nq, n_heads, dh).transpose(0, 2, 1, 3)

    dv = np.matmul(probs.swapaxes(-1, -2), gh)
    dp = np.matmul(gh, vh.swapaxes(-1, -2))
    # softmax backward: dS = P * (dP - sum(dP * P)); masked entries have P = 0
    ds = probs * (dp - (dp * probs).sum(axis=-1, keepdims=True))
    dq = np.matmul(ds, kh) * scale
    dk = np.matmul(ds.swapaxes(-1, -2), qh) * scale

    dq = dq.transpose(0, 2, 1, 3).reshape(b, nq, d)
    dk = dk.transpose(0, 2, 1, 3).reshape(b, nk, d)
    dv = dv.transpose(0, 2, 1, 3).reshape(b, nk, d)
    return (
        np.ascontiguousarray(dq),
        np.ascontiguousarray(dk),
        np.ascontiguousarray(dv),
    )
