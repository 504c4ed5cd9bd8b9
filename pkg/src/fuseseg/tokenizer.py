"""Closed-vocabulary whitespace tokenizer.

Expressions come from a closed grammar, so a word-level vocabulary is
sufficient: lowercase, split on whitespace, map unknown words to [UNK].
Sequences are [CLS] words... [SEP] padded with [PAD] to a fixed length.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataFormatError

SPECIAL_TOKENS = ("[CLS]", "[SEP]", "[PAD]", "[UNK]")
CLS_ID, SEP_ID, PAD_ID, UNK_ID = range(4)


class VocabTokenizer:
    def __init__(self, words: Sequence[str], max_text_len: int):
        if max_text_len < 2:
            raise ConfigError("max_text_len must fit at least [CLS] and [SEP]")
        seen = set()
        self.words: list[str] = []
        for word in words:
            word = word.lower()
            if word in SPECIAL_TOKENS or word in seen:
                continue
            seen.add(word)
            self.words.append(word)
        self._ids = {w: i + len(SPECIAL_TOKENS) for i, w in enumerate(self.words)}
        self.max_text_len = max_text_len

    @property
    def vocab_size(self) -> int:
        return len(SPECIAL_TOKENS) + len(self.words)

    def encode(self, text: str) -> tuple[np.ndarray, np.ndarray]:
        """Token ids and 0/1 attention mask, both of length max_text_len."""
        word_ids = [self._ids.get(w, UNK_ID) for w in text.lower().split()]
        word_ids = word_ids[: self.max_text_len - 2]
        ids = [CLS_ID] + word_ids + [SEP_ID]
        mask = [1] * len(ids)
        pad = self.max_text_len - len(ids)
        ids += [PAD_ID] * pad
        mask += [0] * pad
        return np.array(ids, dtype=np.int64), np.array(mask, dtype=np.int64)

    def encode_batch(self, texts: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        pairs = [self.encode(t) for t in texts]
        return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])

    def save(self, path: str | Path) -> None:
        """One token per line, line number = id, specials first."""
        lines = list(SPECIAL_TOKENS) + self.words
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, max_text_len: int) -> "VocabTokenizer":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[:4]) != SPECIAL_TOKENS:
            raise DataFormatError(
                f"vocabulary file {path} must start with {' '.join(SPECIAL_TOKENS)}")
        return cls(lines[4:], max_text_len)
