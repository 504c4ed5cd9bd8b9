"""Parameter containers and transformer building blocks."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


class Module:
    """Base class providing recursive parameter discovery.

    Parameters are Tensor attributes; submodules are Module attributes or
    lists/tuples of Modules. Iteration order follows attribute insertion
    order, so parameter names are stable for a given architecture.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape=None, dtype=np.float64) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out)).astype(dtype)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 dtype=np.float64):
        self.weight = Tensor(xavier_uniform(rng, in_dim, out_dim, dtype=dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True)

    def __call__(self, x) -> Tensor:
        return (x @ self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float64):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self._eps = eps

    def __call__(self, x) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self._eps)


class FeedForward(Module):
    """Two linear layers with GELU in between."""

    def __init__(self, dim: int, hidden_dim: int, rng: np.random.Generator,
                 dtype=np.float64):
        self.lin1 = Linear(dim, hidden_dim, rng, dtype)
        self.lin2 = Linear(hidden_dim, dim, rng, dtype)

    def __call__(self, x) -> Tensor:
        return self.lin2(T.gelu(self.lin1(x)))


class MultiHeadAttention(Module):
    """Multi-head scaled dot-product attention (self or cross).

    `key_mask` is a constant 0/1 array over key positions, shape (B, Tk)
    or (B, Tq, Tk); masked keys receive exactly zero attention weight.
    """

    def __init__(self, dim: int, num_heads: int, rng: np.random.Generator,
                 dtype=np.float64):
        if dim % num_heads != 0:
            raise ShapeError(f"attention dim {dim} not divisible by {num_heads} heads")
        self.wq = Linear(dim, dim, rng, dtype)
        self.wk = Linear(dim, dim, rng, dtype)
        self.wv = Linear(dim, dim, rng, dtype)
        self.wo = Linear(dim, dim, rng, dtype)
        self._num_heads = num_heads
        self._head_dim = dim // num_heads

    def __call__(self, query, keyvalue=None, key_mask: np.ndarray | None = None) -> Tensor:
        kv = query if keyvalue is None else keyvalue
        q = self._split_heads(self.wq(query))          # B,h,Tq,dh
        k = self._split_heads(self.wk(kv))             # B,h,Tk,dh
        v = self._split_heads(self.wv(kv))
        scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(self._head_dim))
        if key_mask is None:
            weights = T.softmax(scores, axis=-1)
        else:
            key_mask = np.asarray(key_mask)
            if key_mask.ndim == 2:                     # (B,Tk) -> (B,1,1,Tk)
                mask4 = key_mask[:, None, None, :]
            elif key_mask.ndim == 3:                   # (B,Tq,Tk) -> (B,1,Tq,Tk)
                mask4 = key_mask[:, None, :, :]
            else:
                raise ShapeError(f"key_mask must be 2-D or 3-D, got {key_mask.shape}")
            weights = T.masked_softmax(scores, mask4, axis=-1)
        mixed = T.matmul(weights, v)                   # B,h,Tq,dh
        return self.wo(self._merge_heads(mixed))

    def _split_heads(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        return T.transpose(x.reshape(b, t, self._num_heads, self._head_dim), (0, 2, 1, 3))

    def _merge_heads(self, x: Tensor) -> Tensor:
        b, h, t, dh = x.shape
        return T.transpose(x, (0, 2, 1, 3)).reshape(b, t, h * dh)


class TransformerBlock(Module):
    """Pre-norm residual block: attention then feed-forward."""

    def __init__(self, dim: int, num_heads: int, ffn_dim: int,
                 rng: np.random.Generator, dtype=np.float64):
        self.ln_attn = LayerNorm(dim, dtype=dtype)
        self.attn = MultiHeadAttention(dim, num_heads, rng, dtype)
        self.ln_ffn = LayerNorm(dim, dtype=dtype)
        self.ffn = FeedForward(dim, ffn_dim, rng, dtype)

    def __call__(self, x, key_mask: np.ndarray | None = None) -> Tensor:
        x = x + self.attn(self.ln_attn(x), key_mask=key_mask)
        return x + self.ffn(self.ln_ffn(x))


def conv_transpose_2x2(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Stride-2 kernel-2 transposed conv: each cell expands to a 2x2 block.

    x: (B, h, w, C_in); weight: (C_in, 4*C_out); bias: (C_out,).
    Returns (B, 2h, 2w, C_out). Expressed through matmul/reshape so the
    gradient comes from the primitives.
    """
    b, h, w, c_in = x.shape
    c_out = weight.shape[1] // 4
    y = x.reshape(b, h * w, c_in) @ weight
    y = y.reshape(b, h, w, 2, 2, c_out)
    y = T.transpose(y, (0, 1, 3, 2, 4, 5))             # B,h,2,w,2,C
    return y.reshape(b, 2 * h, 2 * w, c_out) + bias
