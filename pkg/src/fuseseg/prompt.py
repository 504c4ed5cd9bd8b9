"""Projector and prompt assembly for the mask decoder.

The encoder's summary vector is mapped through a two-layer MLP into the
decoder's token space and appended, always last, to a sparse block of
geometric prompt tokens (points and box corners). With no geometric
prompts the base block is an empty zero-initialized block, so the
multimodal token is the only sparse token.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import Linear, Module
from .tensor import Tensor

PROVENANCE_MULTIMODAL = "multimodal"
PROVENANCE_POINT = "point"
PROVENANCE_BOX_CORNER = "box-corner"


class Projector(Module):
    """Two linear layers with one ReLU between, nothing else."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int,
                 rng: np.random.Generator, dtype=np.float64):
        self.lin1 = Linear(in_dim, hidden_dim, rng, dtype)
        self.lin2 = Linear(hidden_dim, out_dim, rng, dtype)

    def __call__(self, x) -> Tensor:
        return self.lin2(T.relu(self.lin1(x)))


@dataclass
class SparsePromptEmbeddings:
    """B x N x D token block for the mask decoder; one multimodal token per
    sample, placed last."""

    tokens: Tensor
    provenance: tuple[str, ...]

    def __post_init__(self):
        if self.tokens.ndim != 3:
            raise ShapeError(f"sparse tokens must be (B,N,D), got {self.tokens.shape}")
        if self.tokens.shape[1] != len(self.provenance):
            raise ShapeError("provenance length must match token count")
        if self.provenance.count(PROVENANCE_MULTIMODAL) != 1 \
                or self.provenance[-1] != PROVENANCE_MULTIMODAL:
            raise ShapeError("exactly one multimodal token is required, placed last")


def sinusoidal_coord_features(coords: np.ndarray, dim: int) -> np.ndarray:
    """Fixed sin/cos features of (x, y) in [0,1]^2; output dim must be
    divisible by 4 (sin/cos for each of the two coordinates)."""
    if dim % 4 != 0:
        raise ConfigError(f"coordinate feature dim must be divisible by 4, got {dim}")
    n_freq = dim // 4
    freqs = 2.0 ** np.arange(n_freq)
    x = coords[..., 0:1] * freqs * 2.0 * np.pi
    y = coords[..., 1:2] * freqs * 2.0 * np.pi
    return np.concatenate([np.sin(x), np.cos(x), np.sin(y), np.cos(y)], axis=-1)


class PromptEncoder(Module):
    """Encodes geometric prompts and appends the projected multimodal token.

    Also owns the learned no-mask dense embedding that stands in for absent
    mask prompts (broadcast over the feature grid by the decoder).
    """

    def __init__(self, prompt_dim: int, rng: np.random.Generator, dtype=np.float64):
        self.point_kind = Tensor(rng.normal(0.0, 0.02, (1, prompt_dim)).astype(dtype),
                                 requires_grad=True)
        self.corner_kind = Tensor(rng.normal(0.0, 0.02, (1, prompt_dim)).astype(dtype),
                                  requires_grad=True)
        self.no_mask_embed = Tensor(rng.normal(0.0, 0.02, (1, prompt_dim)).astype(dtype),
                                    requires_grad=True)
        self._dim = prompt_dim
        self._dtype = dtype

    def build(self, multimodal_token: Tensor,
              points: Optional[np.ndarray] = None,
              boxes: Optional[np.ndarray] = None) -> SparsePromptEmbeddings:
        """points: (B, P, 2) and boxes: (B, X, 4) in normalized [0,1] image
        coordinates; either may be None."""
        if multimodal_token.ndim != 2 or multimodal_token.shape[1] != self._dim:
            raise ShapeError(
                f"multimodal token must be (B,{self._dim}), got {multimodal_token.shape}")
        batch = multimodal_token.shape[0]
        base = [Tensor(np.zeros((batch, 0, self._dim), dtype=self._dtype))]
        provenance: list[str] = []
        if points is not None and points.size:
            _check_coords(points, "points")
            feats = sinusoidal_coord_features(points.astype(self._dtype), self._dim)
            base.append(Tensor(feats) + self.point_kind)
            provenance += [PROVENANCE_POINT] * points.shape[1]
        if boxes is not None and boxes.size:
            _check_coords(boxes, "boxes")
            corners = boxes.reshape(boxes.shape[0], -1, 2)
            feats = sinusoidal_coord_features(corners.astype(self._dtype), self._dim)
            base.append(Tensor(feats) + self.corner_kind)
            provenance += [PROVENANCE_BOX_CORNER] * corners.shape[1]
        tokens = T.concat(base + [multimodal_token.reshape(batch, 1, self._dim)], axis=1)
        provenance.append(PROVENANCE_MULTIMODAL)
        return SparsePromptEmbeddings(tokens, tuple(provenance))


def _check_coords(arr: np.ndarray, what: str) -> None:
    if np.min(arr) < 0.0 or np.max(arr) > 1.0:
        raise ConfigError(f"{what} must lie in normalized [0,1] coordinates")
