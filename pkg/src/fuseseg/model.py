"""Full text-prompted segmentation model.

Pipeline: multimodal encoder -> projector -> sparse prompt block ->
frozen-by-default ViT feature grid -> two-way mask decoder -> logits.
The model consumes one canvas-resolution image per sample and derives the
two views (encoder view, segmentation view) itself via nearest-neighbor
resizing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .encoder import EncoderConfig, build_encoder
from .errors import ConfigError
from .nn import Module
from .prompt import PromptEncoder, Projector
from .segmenter import ImageEncoder, MaskDecoder, SegmenterConfig
from .synth import VOCABULARY
from .tensor import Tensor
from .tokenizer import VocabTokenizer

FREEZE_GROUPS = ("image_encoder", "multimodal_encoder", "prompt_encoder", "mask_decoder")

# trainable flags; the segmentation image encoder stays frozen by default
DEFAULT_TRAINABLE = {
    "image_encoder": False,
    "multimodal_encoder": True,
    "prompt_encoder": True,
    "mask_decoder": True,
}


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    sam: SegmenterConfig = field(default_factory=SegmenterConfig)
    projector_hidden: Optional[int] = None  # defaults to encoder embed_dim
    precision: str = "double"

    def __post_init__(self):
        if self.precision not in ("double", "single"):
            raise ConfigError(f"precision must be 'double' or 'single', got {self.precision!r}")

    @property
    def dtype(self):
        return np.float64 if self.precision == "double" else np.float32


def resize_nearest(images: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbor square resize of (B,H,W,C) or (B,H,W) arrays."""
    h = images.shape[1]
    if h == size:
        return images
    idx = np.minimum((np.arange(size) + 0.5) * h / size, h - 1).astype(np.int64)
    return images[:, idx][:, :, idx]


class ReferringSegmenter(Module):
    def __init__(self, config: ModelConfig, seed: int = 0,
                 vocabulary: Sequence[str] = tuple(VOCABULARY)):
        tokenizer = VocabTokenizer(vocabulary, config.encoder.max_text_len)
        encoder_config = config.encoder
        if encoder_config.vocab_size != tokenizer.vocab_size:
            from dataclasses import replace
            encoder_config = replace(encoder_config, vocab_size=tokenizer.vocab_size)
        self._config = config
        self._encoder_config = encoder_config
        self._tokenizer = tokenizer

        rng = np.random.default_rng(seed)
        dtype = config.dtype
        self.multimodal_encoder = build_encoder(encoder_config, rng, dtype)
        hidden = config.projector_hidden or encoder_config.embed_dim
        self.projector = Projector(encoder_config.representation_dim, hidden,
                                   config.sam.feat_dim, rng, dtype)
        self.prompt_encoder = PromptEncoder(config.sam.feat_dim, rng, dtype)
        self.image_encoder = ImageEncoder(config.sam, rng, dtype)
        self.mask_decoder = MaskDecoder(config.sam, rng, dtype)
        self.set_trainable_groups(DEFAULT_TRAINABLE)

    @property
    def config(self) -> ModelConfig:
        return self._config

    @property
    def tokenizer(self) -> VocabTokenizer:
        return self._tokenizer

    @property
    def output_size(self) -> int:
        return self._config.sam.output_size

    def module_groups(self) -> dict[str, list[Module]]:
        return {
            "image_encoder": [self.image_encoder],
            "multimodal_encoder": [self.multimodal_encoder, self.projector],
            "prompt_encoder": [self.prompt_encoder],
            "mask_decoder": [self.mask_decoder],
        }

    def group_named_parameters(self, group: str) -> dict[str, Tensor]:
        modules = self.module_groups()[group]
        out: dict[str, Tensor] = {}
        for i, module in enumerate(modules):
            prefix = group if len(modules) == 1 else f"{group}.{i}"
            out.update(dict(module.named_parameters(f"{prefix}.")))
        return out

    def named_parameters(self, prefix: str = ""):
        for group in FREEZE_GROUPS:
            yield from self.group_named_parameters(group).items()

    def set_trainable_groups(self, trainable: dict[str, bool]) -> None:
        unknown = set(trainable) - set(FREEZE_GROUPS)
        if unknown:
            raise ConfigError(f"unknown freeze groups: {sorted(unknown)}")
        for group, flag in trainable.items():
            for module in self.module_groups()[group]:
                module.set_trainable(flag)

    def forward_tokens(self, images: np.ndarray, token_ids: np.ndarray,
                       text_mask: np.ndarray) -> Tensor:
        """Mask logits of shape (B, output_size, output_size)."""
        encoder_view = resize_nearest(images, self._encoder_config.image_size)
        seg_view = resize_nearest(images, self._config.sam.image_size)
        encoded = self.multimodal_encoder.encode(encoder_view, token_ids, text_mask)
        prompt_token = self.projector(encoded.representation)
        sparse = self.prompt_encoder.build(prompt_token)
        grid = self.image_encoder(seg_view)
        return self.mask_decoder(grid, sparse, self.prompt_encoder.no_mask_embed)

    def forward(self, images: np.ndarray, expressions: Sequence[str]) -> Tensor:
        ids, mask = self._tokenizer.encode_batch(list(expressions))
        return self.forward_tokens(images, ids, mask)

    def predict_masks(self, images: np.ndarray, expressions: Sequence[str],
                      threshold: float = 0.0,
                      out_size: Optional[int] = None) -> np.ndarray:
        with T.no_grad():
            logits = self.forward(images, expressions).data
        masks = logits > threshold
        if out_size is not None and out_size != masks.shape[1]:
            masks = resize_nearest(masks, out_size)
        return masks

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ConfigError(
                f"checkpoint mismatch: missing={sorted(missing)[:3]} extra={sorted(extra)[:3]}")
        for name, p in own.items():
            if p.data.shape != state[name].shape:
                raise ConfigError(
                    f"shape mismatch for {name}: {p.data.shape} vs {state[name].shape}")
            p.data[...] = state[name].astype(p.data.dtype)
