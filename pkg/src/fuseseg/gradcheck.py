"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .errors import ContractError


def grad_check(f: Callable[[T.Tensor], T.Tensor], x: T.Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` must be scalar-valued and deterministic in `x`. The error at each
    coordinate is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    x.requires_grad = True
    x.zero_grad()
    with T.record() as tape:
        out = f(x)
    if out.size != 1:
        raise ContractError(f"grad_check requires a scalar-valued f, got shape {out.shape}")
    T.backward(out, tape)
    analytic = x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    numeric_flat = numeric.reshape(-1)
    with T.no_grad():
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            upper = f(x).item()
            flat[i] = original - eps
            lower = f(x).item()
            flat[i] = original
            numeric_flat[i] = (upper - lower) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check_params(build_loss: Callable[[], T.Tensor],
                      params: dict[str, T.Tensor],
                      eps: float = 1e-5) -> dict[str, float]:
    """grad_check over a set of named parameters of a shared loss function.

    `build_loss` recomputes the scalar loss from the current parameter
    values; each parameter is perturbed in place for the numeric side.
    """
    for p in params.values():
        p.zero_grad()
    with T.record() as tape:
        loss = build_loss()
    T.backward(loss, tape)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    errors: dict[str, float] = {}
    with T.no_grad():
        for name, p in params.items():
            numeric = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            numeric_flat = numeric.reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + eps
                upper = build_loss().item()
                flat[i] = original - eps
                lower = build_loss().item()
                flat[i] = original
                numeric_flat[i] = (upper - lower) / (2.0 * eps)
            a = analytic[name]
            denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
            errors[name] = float(np.max(np.abs(a - numeric) / denom))
    return errors
