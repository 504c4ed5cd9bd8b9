"""Segmentation training losses: binary cross-entropy and soft dice."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor

DICE_SMOOTHING = 1.0


def _check_binary(target: np.ndarray) -> np.ndarray:
    target = np.asarray(target)
    if not np.all((target == 0) | (target == 1)):
        raise ShapeError("target mask must be binary (0/1)")
    return target.astype(np.float64)


def bce_loss(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean over pixels of the stable logit-space binary cross-entropy."""
    return T.bce_with_logits(logits, _check_binary(target))


def dice_loss(logits: Tensor, target: np.ndarray) -> Tensor:
    """Soft dice on sigmoid probabilities with smoothing 1.0.

    For batched (B,H,W) inputs the dice is computed per sample and
    averaged; a single (H,W) pair yields its own dice.
    """
    t = _check_binary(target).astype(logits.dtype)
    if t.shape != logits.shape:
        raise ShapeError(f"dice: target shape {t.shape} != logits shape {logits.shape}")
    p = T.sigmoid(logits)
    if logits.ndim == 2:
        sum_axes = (0, 1)
    elif logits.ndim == 3:
        sum_axes = (1, 2)
    else:
        raise ShapeError(f"dice expects (H,W) or (B,H,W) logits, got {logits.shape}")
    tt = Tensor(t)
    overlap = (p * tt).sum(axis=sum_axes)
    denom = p.sum(axis=sum_axes) + tt.sum(axis=sum_axes)
    dice = ((overlap * 2.0) + DICE_SMOOTHING) / (denom + DICE_SMOOTHING)
    return (1.0 - dice).mean()


def total_loss(logits: Tensor, target: np.ndarray,
               bce_weight: float = 1.0, dice_weight: float = 1.0) -> Tensor:
    """Weighted sum of BCE and dice; both weights default to 1.0."""
    return bce_loss(logits, target) * bce_weight + dice_loss(logits, target) * dice_weight
