"""AdamW with decoupled weight decay, plus the linear LR schedule."""

from __future__ import annotations

import numpy as np

from .errors import DivergenceError
from .tensor import Tensor


def linear_lr(step: int, total: int, lr0: float, lr_final: float = 0.0) -> float:
    """lr(t) = lr0 * (1 - t/T) + lr_final * (t/T); lr(0) = lr0, lr(T) = lr_final."""
    frac = step / total
    return lr0 * (1.0 - frac) + lr_final * frac


class AdamW:
    """Bias-corrected Adam moments with decoupled weight decay.

    p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
    """

    def __init__(self, params: dict[str, Tensor], betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = dict(params)
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data, dtype=np.float64)
                  for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data, dtype=np.float64)
                  for name, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr: float, grad_scale: float = 1.0) -> None:
        b1, b2 = self.betas
        self.step_count += 1
        t = self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            grad = p.grad * grad_scale
            if not np.all(np.isfinite(grad)):
                raise DivergenceError(f"non-finite gradient for parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            v += (1.0 - b2) * grad * grad
            m_hat = m / (1.0 - b1 ** t)
            v_hat = v / (1.0 - b2 ** t)
            update = m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= lr * update

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name in self.params:
            out[f"m/{name}"] = self.m[name]
            out[f"v/{name}"] = self.v[name]
        return out

    def load_state_arrays(self, state: dict[str, np.ndarray], step_count: int) -> None:
        for name in self.params:
            self.m[name][...] = state[f"m/{name}"]
            self.v[name][...] = state[f"v/{name}"]
        self.step_count = step_count
