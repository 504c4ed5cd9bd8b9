"""Toy-scale segmentation backbone: ViT feature grid + two-way mask decoder.

The image encoder is frozen by default (its parameters are created
trainable and the model-level freeze flags turn them off). The decoder
conditions on sparse prompt tokens through alternating token/image
cross-attention and upsamples the grid with two stride-2 transposed-conv
stages before a per-pixel dot product with the mask token's final state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import (FeedForward, LayerNorm, Linear, Module, MultiHeadAttention,
                 TransformerBlock, conv_transpose_2x2, xavier_uniform)
from .prompt import SparsePromptEmbeddings
from .tensor import Tensor


@dataclass(frozen=True)
class SegmenterConfig:
    image_size: int = 48
    patch_size: int = 4
    embed_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 128
    feat_dim: int = 64          # grid feature dim == prompt token dim
    decoder_blocks: int = 2
    decoder_heads: int = 4
    decoder_ffn_dim: int = 128

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.embed_dim % self.num_heads != 0 or self.feat_dim % self.decoder_heads != 0:
            raise ConfigError("embedding dims must be divisible by head counts")
        if self.feat_dim % 8 != 0:
            raise ConfigError("feat_dim must be divisible by 8 for the upscaling stages")

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def upsample_factor(self) -> int:
        return 4  # two x2 transposed-conv stages

    @property
    def output_size(self) -> int:
        return self.grid_size * self.upsample_factor


class ImageEncoder(Module):
    """ViT over the segmentation view, producing a (B,h,w,feat_dim) grid."""

    def __init__(self, config: SegmenterConfig, rng: np.random.Generator, dtype=np.float64):
        self.config = config
        in_dim = config.patch_size * config.patch_size * 3
        self.proj = Linear(in_dim, config.embed_dim, rng, dtype)
        self.pos = Tensor(
            rng.normal(0.0, 0.02, (config.grid_size ** 2, config.embed_dim)).astype(dtype),
            requires_grad=True)
        self.blocks = [TransformerBlock(config.embed_dim, config.num_heads,
                                        config.ffn_dim, rng, dtype)
                       for _ in range(config.num_layers)]
        self.ln_final = LayerNorm(config.embed_dim, dtype=dtype)
        self.neck = Linear(config.embed_dim, config.feat_dim, rng, dtype)

    def __call__(self, images: np.ndarray) -> Tensor:
        from .encoder import extract_patches

        if images.shape[1] != self.config.image_size:
            raise ShapeError(
                f"expected {self.config.image_size}px images, got {images.shape[1]}px")
        patches = extract_patches(images, self.config.patch_size)
        x = self.proj(Tensor(patches.astype(self.proj.weight.dtype))) + self.pos
        for block in self.blocks:
            x = block(x)
        x = self.neck(self.ln_final(x))
        b = images.shape[0]
        g = self.config.grid_size
        return x.reshape(b, g, g, self.config.feat_dim)


class TwoWayBlock(Module):
    """Token self-attention, token->image and image->token cross-attention,
    with a feed-forward on the token path (pre-norm residuals)."""

    def __init__(self, dim: int, num_heads: int, ffn_dim: int,
                 rng: np.random.Generator, dtype=np.float64):
        self.ln_self = LayerNorm(dim, dtype=dtype)
        self.self_attn = MultiHeadAttention(dim, num_heads, rng, dtype)
        self.ln_t2i_q = LayerNorm(dim, dtype=dtype)
        self.ln_t2i_kv = LayerNorm(dim, dtype=dtype)
        self.cross_token_to_image = MultiHeadAttention(dim, num_heads, rng, dtype)
        self.ln_ffn = LayerNorm(dim, dtype=dtype)
        self.ffn = FeedForward(dim, ffn_dim, rng, dtype)
        self.ln_i2t_q = LayerNorm(dim, dtype=dtype)
        self.ln_i2t_kv = LayerNorm(dim, dtype=dtype)
        self.cross_image_to_token = MultiHeadAttention(dim, num_heads, rng, dtype)

    def __call__(self, tokens: Tensor, image: Tensor) -> tuple[Tensor, Tensor]:
        tokens = tokens + self.self_attn(self.ln_self(tokens))
        tokens = tokens + self.cross_token_to_image(
            self.ln_t2i_q(tokens), keyvalue=self.ln_t2i_kv(image))
        tokens = tokens + self.ffn(self.ln_ffn(tokens))
        image = image + self.cross_image_to_token(
            self.ln_i2t_q(image), keyvalue=self.ln_i2t_kv(tokens))
        return tokens, image


class MaskDecoder(Module):
    """Lightweight prompt-conditioned decoder producing mask logits."""

    def __init__(self, config: SegmenterConfig, rng: np.random.Generator, dtype=np.float64):
        d = config.feat_dim
        self.config = config
        self.mask_token = Tensor(rng.normal(0.0, 0.02, (1, d)).astype(dtype),
                                 requires_grad=True)
        self.image_pos = Tensor(
            rng.normal(0.0, 0.02, (config.grid_size ** 2, d)).astype(dtype),
            requires_grad=True)
        self.blocks = [TwoWayBlock(d, config.decoder_heads, config.decoder_ffn_dim,
                                   rng, dtype)
                       for _ in range(config.decoder_blocks)]
        self.ln_tokens = LayerNorm(d, dtype=dtype)
        self.up1_w = Tensor(xavier_uniform(rng, d, 4 * (d // 2), dtype=dtype),
                            requires_grad=True)
        self.up1_b = Tensor(np.zeros(d // 2, dtype=dtype), requires_grad=True)
        self.up2_w = Tensor(xavier_uniform(rng, d // 2, 4 * (d // 8), dtype=dtype),
                            requires_grad=True)
        self.up2_b = Tensor(np.zeros(d // 8, dtype=dtype), requires_grad=True)
        self.hyper1 = Linear(d, d, rng, dtype)
        self.hyper2 = Linear(d, d // 8, rng, dtype)

    def __call__(self, grid: Tensor, sparse: SparsePromptEmbeddings,
                 dense_embed: Tensor) -> Tensor:
        b, h, w, d = grid.shape
        if d != self.config.feat_dim or sparse.tokens.shape[-1] != d:
            raise ShapeError(
                f"feature dim mismatch: grid {d}, prompts {sparse.tokens.shape[-1]}")
        from .encoder import _expand_token

        tokens = T.concat([_expand_token(self.mask_token, b), sparse.tokens], axis=1)
        image = grid.reshape(b, h * w, d) + dense_embed + self.image_pos
        for block in self.blocks:
            tokens, image = block(tokens, image)
        mask_state = self.ln_tokens(tokens).narrow(1, 0, 1).reshape(b, d)

        feats = image.reshape(b, h, w, d)
        feats = T.gelu(conv_transpose_2x2(feats, self.up1_w, self.up1_b))
        feats = T.gelu(conv_transpose_2x2(feats, self.up2_w, self.up2_b))
        hyper = self.hyper2(T.relu(self.hyper1(mask_state)))       # B, d/8

        hh, ww = 4 * h, 4 * w
        flat = feats.reshape(b, hh * ww, d // 8)
        logits = T.matmul(flat, hyper.reshape(b, d // 8, 1))
        return logits.reshape(b, hh, ww)
