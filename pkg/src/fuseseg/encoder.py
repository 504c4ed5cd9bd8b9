"""Multimodal encoders: early vision-language fusion plus the two baselines.

Three interchangeable encoders share one interface:

* ``TextOnlyEncoder`` — a transformer over text tokens alone.
* ``LateConcatEncoder`` — two weight-independent single-modality towers whose
  [CLS] states are concatenated and linearly mapped back to the embed dim.
* ``EarlyFusionEncoder`` — one joint token stream; the first ``fusion_depth``
  layers attend across modalities, the remaining layers use block-diagonal
  (within-modality) attention. Attention weights are shared across
  modalities in every block while feed-forward networks are per-modality.

Token layout is fixed: [text CLS, words..., SEP, PAD...] ++ [image CLS,
patches...]. PAD positions are masked out of attention everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention, TransformerBlock
from .tensor import Tensor

TEXT_CLS = "text_cls"
IMAGE_CLS = "image_cls"
IMAGE_AVGPOOL = "image_avgpool"
CONCAT_CLS = "concat_cls"
REPRESENTATIONS = (TEXT_CLS, IMAGE_CLS, IMAGE_AVGPOOL, CONCAT_CLS)


@dataclass(frozen=True)
class FusionMode:
    """Fusion scheme: text_only, late_concat, or early with a fusion depth."""

    kind: str
    fusion_depth: Optional[int] = None

    @classmethod
    def text_only(cls) -> "FusionMode":
        return cls("text_only")

    @classmethod
    def late_concat(cls) -> "FusionMode":
        return cls("late_concat")

    @classmethod
    def early(cls, fusion_depth: int) -> "FusionMode":
        return cls("early", fusion_depth)

    def label(self) -> str:
        if self.kind == "early":
            return f"early_{self.fusion_depth}"
        return self.kind


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 4
    embed_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    image_size: int = 48
    patch_size: int = 8
    vocab_size: int = 32
    max_text_len: int = 8
    fusion_mode: FusionMode = field(default_factory=lambda: FusionMode.early(4))
    representation: str = IMAGE_CLS

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.representation not in REPRESENTATIONS:
            raise ConfigError(f"unknown representation {self.representation!r}")
        kind = self.fusion_mode.kind
        if kind == "early":
            depth = self.fusion_mode.fusion_depth
            if depth is None or not 0 <= depth <= self.num_layers:
                raise ConfigError(
                    f"fusion_depth must be in [0, {self.num_layers}], got {depth}")
        elif kind == "text_only":
            if self.representation != TEXT_CLS:
                raise ConfigError(
                    f"representation {self.representation!r} needs image states, "
                    "which text_only mode does not produce")
        elif kind != "late_concat":
            raise ConfigError(f"unknown fusion mode {kind!r}")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def representation_dim(self) -> int:
        if self.fusion_mode.kind == "early" and self.representation == CONCAT_CLS:
            return 2 * self.embed_dim
        return self.embed_dim


@dataclass
class EncoderOutput:
    """Full token states per modality plus the selected summary vector."""

    text_states: Optional[Tensor]
    image_states: Optional[Tensor]
    representation: Tensor


def extract_patches(images: np.ndarray, patch_size: int) -> np.ndarray:
    """(B,H,W,3) -> (B, n_patches, patch_size*patch_size*3), row-major grid."""
    if images.ndim != 4 or images.shape[3] != 3:
        raise ShapeError(f"expected (B,H,W,3) images, got {images.shape}")
    b, h, w, c = images.shape
    if h != w:
        raise ShapeError(f"images must be square, got {h}x{w}")
    if h % patch_size != 0:
        raise ShapeError(f"image size {h} not divisible by patch size {patch_size}")
    g = h // patch_size
    x = images.reshape(b, g, patch_size, g, patch_size, c)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, g * g, patch_size * patch_size * c)


def _expand_token(token: Tensor, batch: int) -> Tensor:
    """Broadcast a (1,D) learned token to (B,1,D) with gradient intact."""
    d = token.shape[-1]
    return token.reshape(1, 1, d) + Tensor(np.zeros((batch, 1, 1), dtype=token.dtype))


class TextEmbedding(Module):
    """Token table plus learned absolute positions for the text stream."""

    def __init__(self, vocab_size: int, max_text_len: int, dim: int,
                 rng: np.random.Generator, dtype=np.float64):
        self.table = Tensor(rng.normal(0.0, 0.02, (vocab_size, dim)).astype(dtype),
                            requires_grad=True)
        self.pos = Tensor(rng.normal(0.0, 0.02, (max_text_len, dim)).astype(dtype),
                          requires_grad=True)

    def __call__(self, token_ids: np.ndarray) -> Tensor:
        return T.take_rows(self.table, token_ids) + self.pos


class PatchEmbedding(Module):
    """Linear patch projection with a learned per-cell 2-D position table
    and a prepended image CLS token."""

    def __init__(self, image_size: int, patch_size: int, dim: int,
                 rng: np.random.Generator, dtype=np.float64):
        in_dim = patch_size * patch_size * 3
        self.proj = Linear(in_dim, dim, rng, dtype)
        grid = image_size // patch_size
        self.pos = Tensor(rng.normal(0.0, 0.02, (grid * grid, dim)).astype(dtype),
                          requires_grad=True)
        self.cls = Tensor(rng.normal(0.0, 0.02, (1, dim)).astype(dtype),
                          requires_grad=True)
        self._patch_size = patch_size
        self._image_size = image_size

    def __call__(self, images: np.ndarray) -> Tensor:
        if images.shape[1] != self._image_size:
            raise ShapeError(
                f"expected {self._image_size}px images, got {images.shape[1]}px")
        dtype = self.proj.weight.dtype
        patches = extract_patches(images, self._patch_size).astype(dtype)
        tokens = self.proj(Tensor(patches)) + self.pos
        return T.concat([_expand_token(self.cls, images.shape[0]), tokens], axis=1)


class MultiwayBlock(Module):
    """Shared attention across the joint stream; per-modality feed-forward."""

    def __init__(self, dim: int, num_heads: int, ffn_dim: int,
                 rng: np.random.Generator, dtype=np.float64):
        self.ln_attn = LayerNorm(dim, dtype=dtype)
        self.attn = MultiHeadAttention(dim, num_heads, rng, dtype)
        self.ln_text = LayerNorm(dim, dtype=dtype)
        self.ffn_text = FeedForward(dim, ffn_dim, rng, dtype)
        self.ln_image = LayerNorm(dim, dtype=dtype)
        self.ffn_image = FeedForward(dim, ffn_dim, rng, dtype)

    def __call__(self, x: Tensor, text_len: int, key_mask: np.ndarray) -> Tensor:
        h = x + self.attn(self.ln_attn(x), key_mask=key_mask)
        image_len = x.shape[1] - text_len
        text = h.narrow(1, 0, text_len)
        image = h.narrow(1, text_len, image_len)
        text = text + self.ffn_text(self.ln_text(text))
        image = image + self.ffn_image(self.ln_image(image))
        return T.concat([text, image], axis=1)


class SingleModalityTower(Module):
    """Plain pre-norm transformer over one token stream."""

    def __init__(self, num_layers: int, dim: int, num_heads: int, ffn_dim: int,
                 rng: np.random.Generator, dtype=np.float64):
        self.blocks = [TransformerBlock(dim, num_heads, ffn_dim, rng, dtype)
                       for _ in range(num_layers)]
        self.ln_final = LayerNorm(dim, dtype=dtype)

    def __call__(self, x: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        for block in self.blocks:
            x = block(x, key_mask=key_mask)
        return self.ln_final(x)


class TextOnlyEncoder(Module):
    """Baseline: the prompt summary comes from text alone."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator, dtype=np.float64):
        self.config = config
        self.text_embed = TextEmbedding(config.vocab_size, config.max_text_len,
                                        config.embed_dim, rng, dtype)
        self.tower = SingleModalityTower(config.num_layers, config.embed_dim,
                                         config.num_heads, config.ffn_dim, rng, dtype)

    def encode(self, images: np.ndarray, token_ids: np.ndarray,
               text_mask: np.ndarray) -> EncoderOutput:
        states = self.tower(self.text_embed(token_ids), key_mask=text_mask)
        rep = select_representation(states, None, TEXT_CLS)
        return EncoderOutput(text_states=states, image_states=None, representation=rep)


class LateConcatEncoder(Module):
    """Baseline: independent towers fused only at the [CLS] level.

    The representation is always concat(text CLS, image CLS) through a
    learned linear map back to embed_dim; the config's representation
    field does not apply to this mode.
    """

    def __init__(self, config: EncoderConfig, rng: np.random.Generator, dtype=np.float64):
        self.config = config
        self.text_embed = TextEmbedding(config.vocab_size, config.max_text_len,
                                        config.embed_dim, rng, dtype)
        self.text_tower = SingleModalityTower(config.num_layers, config.embed_dim,
                                              config.num_heads, config.ffn_dim, rng, dtype)
        self.patch_embed = PatchEmbedding(config.image_size, config.patch_size,
                                          config.embed_dim, rng, dtype)
        self.image_tower = SingleModalityTower(config.num_layers, config.embed_dim,
                                               config.num_heads, config.ffn_dim, rng, dtype)
        self.fusion_head = Linear(2 * config.embed_dim, config.embed_dim, rng, dtype)

    def encode(self, images: np.ndarray, token_ids: np.ndarray,
               text_mask: np.ndarray) -> EncoderOutput:
        text_states = self.text_tower(self.text_embed(token_ids), key_mask=text_mask)
        image_states = self.image_tower(self.patch_embed(images))
        both = select_representation(text_states, image_states, CONCAT_CLS)
        rep = self.fusion_head(both)
        return EncoderOutput(text_states, image_states, rep)


class EarlyFusionEncoder(Module):
    """Joint-stream multiway encoder with configurable fusion depth."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator, dtype=np.float64):
        self.config = config
        self.text_embed = TextEmbedding(config.vocab_size, config.max_text_len,
                                        config.embed_dim, rng, dtype)
        self.patch_embed = PatchEmbedding(config.image_size, config.patch_size,
                                          config.embed_dim, rng, dtype)
        self.blocks = [MultiwayBlock(config.embed_dim, config.num_heads,
                                     config.ffn_dim, rng, dtype)
                       for _ in range(config.num_layers)]
        self.ln_text = LayerNorm(config.embed_dim, dtype=dtype)
        self.ln_image = LayerNorm(config.embed_dim, dtype=dtype)

    def embed(self, images: np.ndarray, token_ids: np.ndarray) -> Tensor:
        """Joint stream [text ++ image] before any transformer block."""
        return T.concat([self.text_embed(token_ids), self.patch_embed(images)], axis=1)

    def run_blocks(self, x: Tensor, text_mask: np.ndarray) -> tuple[Tensor, Tensor]:
        """Apply all blocks with the fusion-depth attention schedule, then
        split and normalize the two streams."""
        text_len = self.config.max_text_len
        image_len = x.shape[1] - text_len
        pad_keys = np.concatenate(
            [np.asarray(text_mask), np.ones((x.shape[0], image_len), dtype=np.int64)],
            axis=1)
        depth = self.config.fusion_mode.fusion_depth
        joint_mask = pad_keys                                   # (B, Tk)
        block_diag = pad_keys[:, None, :] * _same_modality_mask(
            text_len, image_len)[None, :, :]                    # (B, Tq, Tk)
        for i, block in enumerate(self.blocks):
            mask = joint_mask if i < depth else block_diag
            x = block(x, text_len, mask)
        text = self.ln_text(x.narrow(1, 0, text_len))
        image = self.ln_image(x.narrow(1, text_len, image_len))
        return text, image

    def encode(self, images: np.ndarray, token_ids: np.ndarray,
               text_mask: np.ndarray) -> EncoderOutput:
        text, image = self.run_blocks(self.embed(images, token_ids), text_mask)
        rep = select_representation(text, image, self.config.representation)
        return EncoderOutput(text, image, rep)


def _same_modality_mask(text_len: int, image_len: int) -> np.ndarray:
    total = text_len + image_len
    is_text = np.zeros(total, dtype=np.int64)
    is_text[:text_len] = 1
    return (is_text[:, None] == is_text[None, :]).astype(np.int64)


def select_representation(text_states: Optional[Tensor],
                          image_states: Optional[Tensor],
                          representation: str) -> Tensor:
    """Pick the summary vector out of the encoder's final token states."""
    if representation == TEXT_CLS:
        return _cls(text_states, "text")
    if representation == IMAGE_CLS:
        return _cls(image_states, "image")
    if representation == IMAGE_AVGPOOL:
        if image_states is None:
            raise ConfigError("image_avgpool requires image states")
        patches = image_states.narrow(1, 1, image_states.shape[1] - 1)
        return patches.mean(axis=1)
    if representation == CONCAT_CLS:
        return T.concat([_cls(text_states, "text"), _cls(image_states, "image")], axis=-1)
    raise ConfigError(f"unknown representation {representation!r}")


def _cls(states: Optional[Tensor], modality: str) -> Tensor:
    if states is None:
        raise ConfigError(f"representation requires {modality} states, "
                          "which this fusion mode does not produce")
    b, _, d = states.shape
    return states.narrow(1, 0, 1).reshape(b, d)


def build_encoder(config: EncoderConfig, rng: np.random.Generator, dtype=np.float64):
    kind = config.fusion_mode.kind
    if kind == "text_only":
        return TextOnlyEncoder(config, rng, dtype)
    if kind == "late_concat":
        return LateConcatEncoder(config, rng, dtype)
    return EarlyFusionEncoder(config, rng, dtype)


def with_fusion(config: EncoderConfig, mode: FusionMode) -> EncoderConfig:
    """Copy of the config with a different fusion mode, fixing up the
    representation where the mode constrains it."""
    rep = config.representation
    if mode.kind == "text_only":
        rep = TEXT_CLS
    return replace(config, fusion_mode=mode, representation=rep)
