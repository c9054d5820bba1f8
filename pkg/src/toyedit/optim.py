"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from toyedit.autograd import Tensor


class ConfigError(ValueError):
    pass


@dataclass
class AdamWState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def init(cls, params: dict[str, Tensor]) -> "AdamWState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
            t=0,
        )


def adamw_step(params: dict[str, Tensor], state: AdamWState, lr: float,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
               weight_decay: float = 0.0) -> None:
    """One in-place update from params[...].grad; increments state.t."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    state.t += 1
    t = state.t
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ConfigError(f"grad shape {g.shape} != param shape {p.data.shape} for {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        if weight_decay:
            p.data *= np.asarray(1.0 - lr * weight_decay, dtype=p.data.dtype)
        p.data -= np.asarray(lr, dtype=p.data.dtype) * (m_hat / (np.sqrt(v_hat) + eps))
