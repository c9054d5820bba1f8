"""Dense-tensor reverse-mode autodiff engine.

Tensors wrap numpy arrays (float32 in all product code; float64 is allowed
so the finite-difference harness can measure backward formulas without
float32 rounding drowning the comparison). The compute graph is implicit:
each op records its parent tensors and a backward closure, and
``Tensor.backward`` replays the closures in reverse topological order.
Gradients accumulate additively across uses; callers zero parameter grads
between optimizer steps.
"""

from __future__ import annotations

import numpy as np

from toyedit import kernels


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class GraphError(ValueError):
    """Graph-level contract violation (non-scalar loss, non-finite output)."""


class EmbedIndexError(IndexError):
    """Token id outside the embedding table."""


_DEBUG_CHECKS = False
_GRAD_ENABLED = True


def set_debug_checks(on: bool) -> None:
    """Enable NaN/Inf detection on every op output (test builds)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(on)


def debug_checks_enabled() -> bool:
    return _DEBUG_CHECKS


class no_grad:
    """Context manager: ops inside build no graph (inference fast path)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def needs_grad(self) -> bool:
        return self.requires_grad or bool(self._parents)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other, self))

    def __radd__(self, other):
        return add(_wrap(other, self), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self))

    def __rmul__(self, other):
        return mul(_wrap(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        if p == 2:
            return mul(self, self)
        return pow_(self, p)

    def sum(self):
        return sum_(self)

    def mean(self):
        return mean_(self)

    def detach(self) -> np.ndarray:
        return self.data

    def backward(self) -> None:
        backward(self)


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _make(data, op: str, parents, backward_fn) -> Tensor:
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise GraphError(f"non-finite values produced by op '{op}'")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.needs_grad for p in parents):
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    else:
        out._op = op + " (const)"
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.needs_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


# -- elementwise --------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def back(out):
        _accum(a, _unbroadcast(out.grad, a.data.shape))
        _accum(b, _unbroadcast(out.grad, b.data.shape))

    return _make(out_data, "add", (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def back(out):
        _accum(a, _unbroadcast(out.grad, a.data.shape))
        _accum(b, _unbroadcast(-out.grad, b.data.shape))

    return _make(out_data, "sub", (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def back(out):
        _accum(a, _unbroadcast(out.grad * b.data, a.data.shape))
        _accum(b, _unbroadcast(out.grad * a.data, b.data.shape))

    return _make(out_data, "mul", (a, b), back)


def neg(a: Tensor) -> Tensor:
    def back(out):
        _accum(a, -out.grad)

    return _make(-a.data, "neg", (a,), back)


def pow_(a: Tensor, p: float) -> Tensor:
    out_data = a.data ** p

    def back(out):
        _accum(a, out.grad * p * a.data ** (p - 1))

    return _make(out_data, "pow", (a,), back)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    dt = a.data.dtype
    c = np.asarray(np.sqrt(2.0 / np.pi), dtype=dt)
    k = np.asarray(0.044715, dtype=dt)
    x = a.data
    # th = tanh(c * x * (1 + k * x^2)), built with in-place ops
    th = x * x
    th *= k
    th += np.asarray(1.0, dtype=dt)
    th *= x
    th *= c
    np.tanh(th, out=th)
    out_data = th + np.asarray(1.0, dtype=dt)
    out_data *= x
    out_data *= np.asarray(0.5, dtype=dt)

    def back(out):
        # d = 0.5 (1 + th) + 0.5 x (1 - th^2) * c (1 + 3 k x^2)
        du = x * x
        du *= np.asarray(3.0, dtype=dt) * k
        du += np.asarray(1.0, dtype=dt)
        du *= c
        d = th * th
        np.subtract(np.asarray(1.0, dtype=dt), d, out=d)
        d *= x
        d *= np.asarray(0.5, dtype=dt)
        d *= du
        du2 = th * np.asarray(0.5, dtype=dt)
        du2 += np.asarray(0.5, dtype=dt)
        d += du2
        d *= out.grad
        _accum(a, d)

    return _make(out_data, "gelu", (a,), back)


# -- shape --------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    def back(out):
        _accum(a, out.grad.reshape(a.data.shape))

    return _make(a.data.reshape(shape), "reshape", (a,), back)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def back(out):
        start = 0
        for t, n in zip(tensors, sizes):
            idx = [slice(None)] * out.grad.ndim
            idx[axis] = slice(start, start + n)
            _accum(t, out.grad[tuple(idx)])
            start += n

    return _make(out_data, "concat", tuple(tensors), back)


def slice_(a: Tensor, key) -> Tensor:
    """Basic (non-fancy) slicing; backward scatters into a zero buffer."""
    out_data = a.data[key]

    def back(out):
        g = np.zeros_like(a.data)
        g[key] = out.grad
        _accum(a, g)

    return _make(out_data, "slice", (a,), back)


# -- reductions ---------------------------------------------------------

def sum_(a: Tensor) -> Tensor:
    def back(out):
        _accum(a, np.broadcast_to(out.grad, a.data.shape).copy())

    return _make(a.data.sum(), "sum", (a,), back)


def mean_(a: Tensor) -> Tensor:
    n = a.data.size

    def back(out):
        _accum(a, np.broadcast_to(out.grad / n, a.data.shape).copy())

    return _make(a.data.mean(), "mean", (a,), back)


# -- linear algebra -----------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2 operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}")
    flat = a.data.ndim > 2 and b.data.ndim == 2  # stacked rows x 2-D weight
    if flat:
        lead = a.data.shape[:-1]
        out_data = (a.data.reshape(-1, a.data.shape[-1]) @ b.data).reshape(lead + (b.data.shape[-1],))
    else:
        out_data = np.matmul(a.data, b.data)

    def back(out):
        if flat:
            g2 = out.grad.reshape(-1, out.grad.shape[-1])
            _accum(a, (g2 @ b.data.T).reshape(a.data.shape))
            _accum(b, a.data.reshape(-1, a.data.shape[-1]).T @ g2)
        else:
            _accum(a, _unbroadcast(np.matmul(out.grad, b.data.swapaxes(-1, -2)), a.data.shape))
            _accum(b, _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), out.grad), b.data.shape))

    return _make(out_data, "matmul", (a, b), back)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    x = x - x.max(axis=axis, keepdims=True)
    e = np.exp(x)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(out):
        g = out.grad
        _accum(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, "softmax", (a,), back)


def layernorm(a: Tensor, gain: Tensor | None = None, bias: Tensor | None = None,
              eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis; optional affine."""
    if gain is not None and gain.data.shape != a.data.shape[-1:]:
        raise ShapeError(f"layernorm gain shape {gain.data.shape} vs feature dim {a.data.shape[-1]}")
    if bias is not None and bias.data.shape != a.data.shape[-1:]:
        raise ShapeError(f"layernorm bias shape {bias.data.shape} vs feature dim {a.data.shape[-1]}")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = xc * inv
    out_data = xhat
    if gain is not None:
        out_data = out_data * gain.data
    if bias is not None:
        out_data = out_data + bias.data

    parents = [a] + [t for t in (gain, bias) if t is not None]

    def back(out):
        g = out.grad
        if bias is not None:
            _accum(bias, g.reshape(-1, g.shape[-1]).sum(axis=0))
        if gain is not None:
            _accum(gain, (g * xhat).reshape(-1, g.shape[-1]).sum(axis=0))
            g = g * gain.data
        m1 = g.mean(axis=-1, keepdims=True)
        m2 = (g * xhat).mean(axis=-1, keepdims=True)
        _accum(a, inv * (g - m1 - xhat * m2))

    return _make(out_data, "layernorm", tuple(parents), back)


def embed(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup; backward scatter-adds into the table."""
    ids = np.asarray(ids)
    vocab = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = int(ids.min()) if ids.min() < 0 else int(ids.max())
        raise EmbedIndexError(f"token id {bad} outside vocabulary of size {vocab}")
    out_data = table.data[ids]

    def back(out):
        if not table.needs_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids, out.grad)

    return _make(out_data, "embed", (table,), back)


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray, n_heads: int) -> Tensor:
    """Fused multi-head attention: softmax(q kᵀ/√d_h + log mask) v per head.

    q is [B, nq, d] (a 2-D [nq, d] input is promoted); mask is [nq, nk] with
    1 = allowed. Masked positions get exactly zero weight.
    """
    squeeze = q.data.ndim == 2
    qd = q.data[None] if squeeze else q.data
    kd = k.data[None] if k.data.ndim == 2 else k.data
    vd = v.data[None] if v.data.ndim == 2 else v.data
    d = qd.shape[-1]
    if d % n_heads != 0:
        raise ShapeError(f"d_model {d} not divisible by n_heads {n_heads}")
    if mask.shape != (qd.shape[1], kd.shape[1]):
        raise ShapeError(f"mask shape {mask.shape} vs (nq={qd.shape[1]}, nk={kd.shape[1]})")
    mask = np.ascontiguousarray(mask, dtype=np.float32)
    qd = np.ascontiguousarray(qd)
    kd = np.ascontiguousarray(kd)
    vd = np.ascontiguousarray(vd)
    out_data, probs = kernels.attention_forward(qd, kd, vd, mask, n_heads)
    if squeeze:
        out_data = out_data[0]

    def back(out):
        g = out.grad[None] if squeeze else out.grad
        g = np.ascontiguousarray(g)
        dq, dk, dv = kernels.attention_backward(qd, kd, vd, probs, g, n_heads)
        _accum(q, dq[0] if q.data.ndim == 2 else dq)
        _accum(k, dk[0] if k.data.ndim == 2 else dk)
        _accum(v, dv[0] if v.data.ndim == 2 else dv)

    return _make(out_data, "attention", (q, k, v), back)


# -- graph traversal ----------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate grads of every tensor reachable from `loss`.

    Parameters not reachable from the loss are left untouched (the caller's
    zero fill stands for them).
    """
    if loss.data.shape != ():
        raise GraphError(f"backward needs a scalar loss, got shape {loss.data.shape}")

    topo: list[Tensor] = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node)


def zero_grads(params) -> None:
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p.grad = np.zeros_like(p.data)


def grad_check(f, params, h: float = 1e-3) -> float:
    """Max relative error between backward grads and central differences.

    `f` maps a list of parameter tensors to a scalar Tensor and must be
    deterministic. The check runs in float64 so the difference quotient
    measures the backward formulas rather than float32 rounding; product
    code stays float32.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    p64 = [Tensor(p.data.astype(np.float64), requires_grad=True) for p in params]
    loss = f(p64)
    zero_grads(p64)
    backward(loss)

    worst = 0.0
    for p in p64:
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f(p64).data)
            flat[i] = orig - h
            f_minus = float(f(p64).data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            analytic = float(gflat[i])
            rel = abs(analytic - numeric) / max(abs(analytic), 1e-8)
            worst = max(worst, rel)
    return worst
