import numpy as np
import pytest

from toyedit import kernels
from toyedit.kernels import _attn_np


@pytest.mark.skipif(kernels._attn_cy is None, reason="cython kernel not built")
@pytest.mark.parametrize("b,nq,nk,d,h", [(1, 4, 4, 8, 2), (2, 21, 21, 64, 4),
                                         (3, 19, 40, 64, 4), (8, 40, 40, 32, 4)])
def test_backends_agree(b, nq, nk, d, h):
    rng = np.random.default_rng(b * 100 + nq)
    q = rng.standard_normal((b, nq, d)).astype(np.float32)
    k = rng.standard_normal((b, nk, d)).astype(np.float32)
    v = rng.standard_normal((b, nk, d)).astype(np.float32)
    mask = np.ones((nq, nk), dtype=np.float32)
    mask[0, nk // 2:] = 0
    g = rng.standard_normal((b, nq, d)).astype(np.float32)

    o_np, p_np = _attn_np.attention_forward(q, k, v, mask, h)
    o_cy, p_cy = kernels._attn_cy.attention_forward(q, k, v, mask, h)
    assert np.abs(o_np - o_cy).max() < 1e-5
    assert np.abs(p_np - p_cy).max() < 1e-5

    b_np = _attn_np.attention_backward(q, k, v, p_np, g, h)
    b_cy = kernels._attn_cy.attention_backward(q, k, v, p_cy, g, h)
    for x, y in zip(b_np, b_cy):
        assert np.abs(x - y).max() < 1e-4


def test_masked_positions_get_exactly_zero_weight():
    rng = np.random.default_rng(0)
    q = rng.standard_normal((1, 3, 4)).astype(np.float32)
    k = rng.standard_normal((1, 5, 4)).astype(np.float32)
    v = rng.standard_normal((1, 5, 4)).astype(np.float32)
    mask = np.ones((3, 5), dtype=np.float32)
    mask[1, 2:] = 0
    for impl in filter(None, (_attn_np, kernels._attn_cy)):
        _, p = impl.attention_forward(q, k, v, mask, 2)
        assert (p[:, :, 1, 2:] == 0.0).all()


def test_float64_routes_to_numpy():
    q = np.zeros((1, 2, 4), dtype=np.float64)
    mask = np.ones((2, 2), dtype=np.float32)
    out, p = kernels.attention_forward(q, q, q, mask, 2)
    assert out.dtype == np.float64


def test_force_backend_validation():
    with pytest.raises(ValueError):
        kernels.force_backend("fortran")
    kernels.force_backend("numpy")
    try:
        assert kernels.active_backend() == "numpy"
    finally:
        kernels.force_backend(None)
