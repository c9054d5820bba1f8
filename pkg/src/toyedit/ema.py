"""Exponential moving average of parameters."""

from __future__ import annotations

import numpy as np

from toyedit.autograd import Tensor


class EmaTracker:
    def __init__(self, params: dict[str, Tensor], decay: float):
        if not 0.0 <= decay < 1.0:
            raise ValueError(f"ema decay must be in [0, 1), got {decay}")
        self.decay = decay
        self.shadow = {k: p.data.copy() for k, p in params.items()}

    def update(self, params: dict[str, Tensor]) -> None:
        d = np.float32(self.decay)
        one_minus = np.float32(1.0 - self.decay)
        for k, p in params.items():
            s = self.shadow[k]
            s *= d
            s += one_minus * p.data

    def snapshot(self) -> dict[str, Tensor]:
        return {k: Tensor(v.copy(), requires_grad=True) for k, v in self.shadow.items()}
