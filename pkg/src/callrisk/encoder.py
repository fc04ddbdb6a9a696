"""Transformer encoder over segment-embedding sequences.

Sinusoidal absolute positions are added to the (optionally projected) input,
then each layer applies masked multi-head self-attention and a position-wise
ReLU feed-forward block, both in post-norm form: LayerNorm(x + sublayer(x)).
Padding is handled by masking key columns to -inf before the softmax, so
padded rows can never influence real ones. Per-layer attention maps are
returned for interpretability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .errors import NonFiniteError


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int
    n_heads: int
    n_layers: int
    d_ff: int
    input_dim: int | None = None  # adds a learned input projection when != d_model
    use_positional: bool = True
    dropout: float = 0.0

    def __post_init__(self):
        for name in ("d_model", "n_heads", "n_layers", "d_ff"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads


def positional_encoding(
    length: int, dim: int, dtype: torch.dtype = torch.float32, device=None
) -> Tensor:
    """(length, dim) matrix with sin at even and cos at odd dimensions.

    Frequency of pair k is 10000^(-2k/dim), so row norms are all sqrt(dim/2).
    """
    if dim % 2 != 0:
        raise ValueError(f"dim must be even, got {dim}")
    t = torch.arange(length, dtype=dtype, device=device).unsqueeze(1)
    k = torch.arange(dim // 2, dtype=dtype, device=device)
    omega = torch.pow(torch.tensor(10000.0, dtype=dtype, device=device), -2.0 * k / dim)
    pe = torch.zeros(length, dim, dtype=dtype, device=device)
    pe[:, 0::2] = torch.sin(t * omega)
    pe[:, 1::2] = torch.cos(t * omega)
    return pe


def add_position(x: Tensor) -> Tensor:
    """Add p_t to row t of a (..., L, d) tensor."""
    pe = positional_encoding(x.shape[-2], x.shape[-1], dtype=x.dtype, device=x.device)
    return x + pe


def _init_linear(weight: Tensor, generator: torch.Generator | None, fan_in: int) -> None:
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        weight.uniform_(-bound, bound, generator=generator)


class MultiHeadSelfAttention(nn.Module):
    """Scaled dot-product self-attention with h heads and key masking."""

    def __init__(self, d_model: int, n_heads: int, generator: torch.Generator | None = None):
        super().__init__()
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_k = d_model // n_heads
        self.w_q = nn.Parameter(torch.empty(d_model, d_model))
        self.w_k = nn.Parameter(torch.empty(d_model, d_model))
        self.w_v = nn.Parameter(torch.empty(d_model, d_model))
        self.w_o = nn.Parameter(torch.empty(d_model, d_model))
        for w in (self.w_q, self.w_k, self.w_v, self.w_o):
            _init_linear(w, generator, d_model)

    def _split(self, x: Tensor) -> Tensor:
        b, length, _ = x.shape
        return x.view(b, length, self.n_heads, self.d_k).transpose(1, 2)  # (B, h, L, d_k)

    def forward(self, x: Tensor, mask: Tensor) -> tuple[Tensor, Tensor]:
        """x: (B, L, D); mask: (B, L) bool, True = real key. Returns (out, attn)."""
        if not bool(mask.any(dim=1).all()):
            raise ValueError("attention needs at least one unmasked position per sequence")
        q = self._split(x @ self.w_q)
        k = self._split(x @ self.w_k)
        v = self._split(x @ self.w_v)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_k)  # (B, h, L, L)
        scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        merged = (attn @ v).transpose(1, 2).reshape(x.shape)
        return merged @ self.w_o, attn


class FeedForward(nn.Module):
    """Position-wise max(0, x W1 + b1) W2 + b2."""

    def __init__(self, d_model: int, d_ff: int, generator: torch.Generator | None = None):
        super().__init__()
        self.ffn_w1 = nn.Parameter(torch.empty(d_model, d_ff))
        self.ffn_b1 = nn.Parameter(torch.zeros(d_ff))
        self.ffn_w2 = nn.Parameter(torch.empty(d_ff, d_model))
        self.ffn_b2 = nn.Parameter(torch.zeros(d_model))
        _init_linear(self.ffn_w1, generator, d_model)
        _init_linear(self.ffn_w2, generator, d_ff)

    def forward(self, x: Tensor) -> Tensor:
        return torch.relu(x @ self.ffn_w1 + self.ffn_b1) @ self.ffn_w2 + self.ffn_b2


class EncoderLayer(nn.Module):
    def __init__(self, cfg: EncoderConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.attn = MultiHeadSelfAttention(cfg.d_model, cfg.n_heads, generator)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ff, generator)
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x: Tensor, mask: Tensor) -> tuple[Tensor, Tensor]:
        attended, attn = self.attn(x, mask)
        x = self.ln1(x + self.dropout(attended))
        x = self.ln2(x + self.dropout(self.ffn(x)))
        return x, attn


class TransformerEncoder(nn.Module):
    """Stack of encoder layers; returns final states and all attention maps."""

    def __init__(self, cfg: EncoderConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.cfg = cfg
        if cfg.input_dim is not None and cfg.input_dim != cfg.d_model:
            self.in_proj_w = nn.Parameter(torch.empty(cfg.input_dim, cfg.d_model))
            self.in_proj_b = nn.Parameter(torch.zeros(cfg.d_model))
            _init_linear(self.in_proj_w, generator, cfg.input_dim)
        else:
            self.in_proj_w = None
            self.in_proj_b = None
        self.layers = nn.ModuleList(EncoderLayer(cfg, generator) for _ in range(cfg.n_layers))

    def forward(self, emb: Tensor, mask: Tensor) -> tuple[Tensor, list[Tensor]]:
        """emb: (B, L, input_dim or d_model); mask: (B, L) bool."""
        if self.in_proj_w is not None:
            x = emb @ self.in_proj_w.to(emb.dtype) + self.in_proj_b
        else:
            if emb.shape[-1] != self.cfg.d_model:
                raise ValueError(
                    f"input dim {emb.shape[-1]} != d_model {self.cfg.d_model} "
                    "and no input projection is configured"
                )
            x = emb
        if self.cfg.use_positional:
            x = add_position(x)
        attn_maps = []
        for index, layer in enumerate(self.layers):
            x, attn = layer(x, mask)
            if not torch.isfinite(x).all():
                raise NonFiniteError(f"non-finite encoder activations in layer {index}")
            attn_maps.append(attn)
        return x, attn_maps
