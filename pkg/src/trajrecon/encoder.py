"""Bidirectional transformer encoder: scaled dot-product and multi-head attention."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

PAD_SCORE = -1e9


class NumericalError(RuntimeError):
    """A forward pass produced NaN or infinite values."""


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 4
    heads: int = 4
    d_ff: int | None = None  # defaults to 4 * d
    dropout: float = 0.1

    def ff_dim(self, d: int) -> int:
        return 4 * d if self.d_ff is None else self.d_ff


def _check_finite(name: str, *tensors: torch.Tensor) -> None:
    for t in tensors:
        if not torch.isfinite(t).all():
            raise NumericalError(f"{name}: non-finite input")


def masked_softmax(scores: torch.Tensor, pad_mask: torch.Tensor | None) -> torch.Tensor:
    """Row-wise softmax with padded key columns pinned to PAD_SCORE."""
    if pad_mask is not None:
        scores = scores.masked_fill(pad_mask, PAD_SCORE)
    shifted = scores - scores.amax(dim=-1, keepdim=True)
    e = torch.exp(shifted)
    return e / e.sum(dim=-1, keepdim=True)


def attention(Q: torch.Tensor, K: torch.Tensor, V: torch.Tensor,
              pad_mask: torch.Tensor | None = None, check: bool = True) -> tuple[torch.Tensor, torch.Tensor]:
    """softmax(Q K^T / sqrt(d_k)) V over the last two dimensions.

    Args:
        Q, K, V: (..., n, d_k), (..., m, d_k), (..., m, d_v).
        pad_mask: boolean, broadcastable to (..., n, m); True marks a padded key.

    Returns:
        (output, weights) with shapes (..., n, d_v) and (..., n, m).
    """
    if check:
        _check_finite("attention", Q, K, V)
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise ValueError(f"incompatible shapes Q{tuple(Q.shape)} K{tuple(K.shape)} V{tuple(V.shape)}")
    d_k = Q.shape[-1]
    scores = Q @ K.transpose(-2, -1) / math.sqrt(d_k)
    weights = masked_softmax(scores, pad_mask)
    return weights @ V, weights


class MultiHeadAttention(nn.Module):
    def __init__(self, d: int, heads: int):
        super().__init__()
        if d % heads:
            raise ValueError(f"d={d} is not divisible by heads={heads}")
        self.d, self.heads, self.d_k = d, heads, d // heads
        self.W_Q = nn.Linear(d, d, bias=False)
        self.W_K = nn.Linear(d, d, bias=False)
        self.W_V = nn.Linear(d, d, bias=False)
        self.W_O = nn.Linear(d, d, bias=False)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        B, n, _ = x.shape
        return x.view(B, n, self.heads, self.d_k).transpose(1, 2)

    def forward(self, X: torch.Tensor, pad_mask: torch.Tensor | None = None,
                return_weights: bool = False):
        """X: (B, n, d); pad_mask: (B, n) True at padded positions."""
        if X.dim() != 3 or X.shape[-1] != self.d:
            raise ValueError(f"expected (B, n, {self.d}) input, got {tuple(X.shape)}")
        B, n, _ = X.shape
        key_mask = None if pad_mask is None else pad_mask[:, None, None, :]
        out, w = attention(self._split(self.W_Q(X)), self._split(self.W_K(X)), self._split(self.W_V(X)),
                           key_mask, check=False)
        concat = out.transpose(1, 2).reshape(B, n, self.d)
        y = self.W_O(concat)
        return (y, w) if return_weights else y


def multi_head(X: torch.Tensor, params: MultiHeadAttention, pad_mask: torch.Tensor | None = None) -> torch.Tensor:
    return params(X, pad_mask)


class EncoderLayer(nn.Module):
    """Post-norm block: attention + residual + norm, GELU feed-forward + residual + norm."""

    def __init__(self, d: int, heads: int, d_ff: int, dropout: float):
        super().__init__()
        self.attn = MultiHeadAttention(d, heads)
        self.norm1 = nn.LayerNorm(d)
        self.ff1 = nn.Linear(d, d_ff)
        self.ff2 = nn.Linear(d_ff, d)
        self.norm2 = nn.LayerNorm(d)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor | None) -> torch.Tensor:
        x = self.norm1(x + self.dropout(self.attn(x, pad_mask)))
        ff = self.ff2(self.dropout(F.gelu(self.ff1(x))))
        return self.norm2(x + self.dropout(ff))


class TransformerEncoder(nn.Module):
    def __init__(self, d: int, cfg: EncoderConfig = EncoderConfig()):
        super().__init__()
        self.cfg = cfg
        self.layers = nn.ModuleList(
            EncoderLayer(d, cfg.heads, cfg.ff_dim(d), cfg.dropout) for _ in range(cfg.layers)
        )

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor | None = None) -> torch.Tensor:
        _check_finite("encoder input", x)
        for i, layer in enumerate(self.layers):
            x = layer(x, pad_mask)
            if not torch.isfinite(x).all():
                raise NumericalError(f"encoder layer {i}: non-finite activations")
        return x


def encode(tokens: torch.Tensor, pad_mask: torch.Tensor | None, encoder: TransformerEncoder) -> torch.Tensor:
    """Hidden states H, one vector per input position."""
    return encoder(tokens, pad_mask)
