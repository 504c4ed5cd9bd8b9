"""Shared test utilities."""

import numpy as np

from fuseseg.encoder import (EarlyFusionEncoder, EncoderConfig, FusionMode,
                             TextOnlyEncoder)
from fuseseg.model import ModelConfig, ReferringSegmenter
from fuseseg.segmenter import SegmenterConfig
from fuseseg.synth import generate_dataset


def tiny_model(seed=0, fusion=None, **encoder_overrides) -> ReferringSegmenter:
    """Smallest model whose output resolution matches a 16px canvas."""
    encoder_args = dict(num_layers=2, embed_dim=16, num_heads=2, ffn_dim=32,
                        image_size=16, patch_size=8, max_text_len=8,
                        fusion_mode=fusion or FusionMode.early(2))
    encoder_args.update(encoder_overrides)
    config = ModelConfig(
        encoder=EncoderConfig(**encoder_args),
        sam=SegmenterConfig(image_size=16, patch_size=4, embed_dim=16,
                            num_layers=1, num_heads=2, ffn_dim=32, feat_dim=16,
                            decoder_blocks=1, decoder_heads=2, decoder_ffn_dim=32),
    )
    return ReferringSegmenter(config, seed=seed)


def tiny_dataset(seed=0, n=8):
    return generate_dataset(seed=seed, n_samples=n, canvas_size=16)


def copy_tensor(dst, src):
    assert dst.data.shape == src.data.shape, (dst.data.shape, src.data.shape)
    dst.data[...] = src.data


def copy_text_side(early: EarlyFusionEncoder, dst: TextOnlyEncoder) -> None:
    """Copy the text-path weights of a fused encoder into a plain text tower."""
    copy_tensor(dst.text_embed.table, early.text_embed.table)
    copy_tensor(dst.text_embed.pos, early.text_embed.pos)
    for tgt, src in zip(dst.tower.blocks, early.blocks):
        for name in ("weight", "bias"):
            for proj in ("wq", "wk", "wv", "wo"):
                copy_tensor(getattr(getattr(tgt.attn, proj), name),
                            getattr(getattr(src.attn, proj), name))
            for lin in ("lin1", "lin2"):
                copy_tensor(getattr(getattr(tgt.ffn, lin), name),
                            getattr(getattr(src.ffn_text, lin), name))
        copy_tensor(tgt.ln_attn.gamma, src.ln_attn.gamma)
        copy_tensor(tgt.ln_attn.beta, src.ln_attn.beta)
        copy_tensor(tgt.ln_ffn.gamma, src.ln_text.gamma)
        copy_tensor(tgt.ln_ffn.beta, src.ln_text.beta)
    copy_tensor(dst.tower.ln_final.gamma, early.ln_text.gamma)
    copy_tensor(dst.tower.ln_final.beta, early.ln_text.beta)


def random_batch(config, rng: np.random.Generator, batch: int = 2):
    """Random images plus token ids with a realistic PAD tail."""
    images = rng.random((batch, config.image_size, config.image_size, 3))
    ids = np.zeros((batch, config.max_text_len), dtype=np.int64)
    mask = np.zeros((batch, config.max_text_len), dtype=np.int64)
    for b in range(batch):
        n_words = int(rng.integers(1, config.max_text_len - 1))
        ids[b, 0] = 0  # CLS
        ids[b, 1:1 + n_words] = rng.integers(4, config.vocab_size, size=n_words)
        ids[b, 1 + n_words] = 1  # SEP
        ids[b, 2 + n_words:] = 2  # PAD
        mask[b, :2 + n_words] = 1
    return images, ids, mask
