"""LSTM decoder over encoder states, masked pooling, task heads, hybrid loss.

The LSTM cell implements the classic six-equation update with one weight
matrix per gate acting on the concatenation [h_prev, x_t]. Padded timesteps
pass (h, c) through untouched and emit a zero output row, so padding cannot
leak into the pooled representation. Pooling averages over real rows only by
default; dividing by the full padded length is available behind a flag for
ablation. Two heads sit on the pooled vector: a softmax over the 17 possible
aggregate assessment scores, and a sigmoid risk probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor, nn

from .encoder import EncoderConfig, TransformerEncoder, _init_linear
from .errors import NonFiniteError
from .features import SegmentEmbeddingSequence

N_SCORE_CLASSES = 17  # aggregate assessment scores 0..16
LOG_EPS = 1e-7


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters for the proposed model and every baseline."""

    name: str
    input_dim: int
    d_model: int = 256
    n_heads: int = 8
    n_layers: int = 4          # transformer encoder depth
    d_ff: int | None = None    # defaults to 4 * d_model
    recurrent_layers: int = 1  # LSTM/GRU depth
    n_score_classes: int = N_SCORE_CLASSES
    use_positional: bool = True
    strict_length_pooling: bool = False
    dropout: float = 0.0

    def __post_init__(self):
        if self.input_dim <= 0 or self.d_model <= 0:
            raise ValueError("input_dim and d_model must be positive")
        if self.recurrent_layers <= 0:
            raise ValueError("recurrent_layers must be positive")
        if self.n_score_classes <= 1:
            raise ValueError("n_score_classes must be at least 2")

    @property
    def ff_dim(self) -> int:
        return self.d_ff if self.d_ff is not None else 4 * self.d_model

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            d_model=self.d_model,
            n_heads=self.n_heads,
            n_layers=self.n_layers,
            d_ff=self.ff_dim,
            input_dim=self.input_dim,
            use_positional=self.use_positional,
            dropout=self.dropout,
        )


@dataclass
class ModelOutput:
    """Batched forward result (torch tensors)."""

    risk_prob: Tensor                       # (B,)
    score_probs: Tensor                     # (B, M)
    pooled: Tensor                          # (B, pool_dim)
    attention: list[Tensor] = field(default_factory=list)  # per layer (B, h, L, L)
    pool_weights: Tensor | None = None      # (B, L) for attention-pool models


@dataclass(frozen=True)
class Prediction:
    """Single-call prediction in plain numpy/python."""

    risk_prob: float
    score_probs: np.ndarray  # (M,)
    pooled: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.risk_prob <= 1.0 or not math.isfinite(self.risk_prob):
            raise ValueError(f"risk_prob must be a finite probability, got {self.risk_prob}")


class LstmCell(nn.Module):
    """One LSTM unit: forget/input/output gates and a candidate cell state.

    Each gate weight has shape (hidden + input, hidden) and multiplies the
    concatenation [h_prev, x_t] from the left (z @ w + b).
    """

    def __init__(self, input_dim: int, hidden_dim: int, generator: torch.Generator | None = None):
        super().__init__()
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        joint = hidden_dim + input_dim
        for gate in ("f", "i", "c", "o"):
            setattr(self, f"w_{gate}", nn.Parameter(torch.empty(joint, hidden_dim)))
            setattr(self, f"b_{gate}", nn.Parameter(torch.zeros(hidden_dim)))
            _init_linear(getattr(self, f"w_{gate}"), generator, joint)

    def init_state(self, batch: int, dtype: torch.dtype, device) -> tuple[Tensor, Tensor]:
        zero = torch.zeros(batch, self.hidden_dim, dtype=dtype, device=device)
        return zero, zero.clone()

    def step(self, x: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, tuple[Tensor, Tensor]]:
        h_prev, c_prev = state
        if not torch.isfinite(x).all():
            raise NonFiniteError("non-finite input to LSTM step")
        z = torch.cat([h_prev, x], dim=-1)
        f = torch.sigmoid(z @ self.w_f + self.b_f)
        i = torch.sigmoid(z @ self.w_i + self.b_i)
        c_tilde = torch.tanh(z @ self.w_c + self.b_c)
        c = f * c_prev + i * c_tilde
        o = torch.sigmoid(z @ self.w_o + self.b_o)
        h = o * torch.tanh(c)
        return h, (h, c)


def lstm_step(
    x: Tensor, h_prev: Tensor, c_prev: Tensor, cell: LstmCell
) -> tuple[Tensor, Tensor]:
    """Functional single-step form; returns (h_t, c_t)."""
    h, (_, c) = cell.step(x, (h_prev, c_prev))
    return h, c


def recurrent_forward(x: Tensor, mask: Tensor, cell) -> Tensor:
    """Run a cell left-to-right over (B, L, input_dim) with state pass-through.

    At masked timesteps the state is carried over unchanged and the emitted
    output row is zero.
    """
    batch, length, _ = x.shape
    state = cell.init_state(batch, x.dtype, x.device)
    outputs = []
    for t in range(length):
        h_new, new_state = cell.step(x[:, t], state)
        keep = mask[:, t].unsqueeze(-1).to(x.dtype)
        state = tuple(
            keep * s_new + (1.0 - keep) * s_old for s_new, s_old in zip(new_state, state)
        )
        outputs.append(keep * h_new)
    return torch.stack(outputs, dim=1)


def lstm_forward(states: Tensor, mask: Tensor, cells: list[LstmCell]) -> Tensor:
    """Stacked LSTM over (B, L, D); h0 = c0 = 0 per layer."""
    x = states
    for cell in cells:
        x = recurrent_forward(x, mask, cell)
    return x


def average_pool(h: Tensor, mask: Tensor, strict_length: bool = False) -> Tensor:
    """Mean over time. Default: mean of real rows only; strict mode divides by
    the full padded length instead."""
    counts = mask.sum(dim=1)
    if (counts == 0).any():
        raise ValueError("cannot pool a fully masked sequence")
    total = (h * mask.unsqueeze(-1).to(h.dtype)).sum(dim=1)
    denom = torch.full_like(counts, h.shape[1]) if strict_length else counts
    return total / denom.unsqueeze(-1).to(h.dtype)


class ScoreHead(nn.Module):
    """Softmax over the M possible aggregate assessment scores."""

    def __init__(self, in_dim: int, n_classes: int, generator: torch.Generator | None = None):
        super().__init__()
        self.w_s = nn.Parameter(torch.empty(in_dim, n_classes))
        self.b_s = nn.Parameter(torch.zeros(n_classes))
        _init_linear(self.w_s, generator, in_dim)

    def forward(self, z: Tensor) -> Tensor:
        return torch.softmax(z @ self.w_s + self.b_s, dim=-1)


class RiskHead(nn.Module):
    """Sigmoid probability of a follow-up suicidal act."""

    def __init__(self, in_dim: int, generator: torch.Generator | None = None):
        super().__init__()
        self.w_r = nn.Parameter(torch.empty(in_dim, 1))
        self.b_r = nn.Parameter(torch.zeros(1))
        _init_linear(self.w_r, generator, in_dim)

    def forward(self, z: Tensor) -> Tensor:
        return torch.sigmoid(z @ self.w_r + self.b_r).squeeze(-1)


def hybrid_loss(
    risk_target: Tensor,
    risk_prob: Tensor,
    score_target: Tensor,
    score_probs: Tensor,
    alpha: float = 0.5,
    beta: float = 0.5,
) -> Tensor:
    """alpha * binary cross-entropy + beta * categorical cross-entropy.

    score_target holds the class index per sample, or -1 when the assessment
    aggregate is missing; missing samples contribute nothing to the score term
    (its mean runs over score-present samples). Zero-weighted terms are
    skipped outright so their parameters receive no gradient at all.
    Probabilities are clamped to [eps, 1-eps] before the logs.
    """
    if alpha < 0 or beta < 0 or (alpha == 0 and beta == 0):
        raise ValueError("loss weights must be >= 0 and not both zero")
    loss = risk_prob.new_zeros(())
    if alpha != 0:
        p = risk_prob.clamp(LOG_EPS, 1.0 - LOG_EPS)
        y = risk_target.to(p.dtype)
        bce = -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p))
        loss = loss + alpha * bce.mean()
    if beta != 0:
        present = score_target >= 0
        if bool(present.any()):
            picked = score_probs[present].gather(
                1, score_target[present].unsqueeze(1)
            ).squeeze(1)
            ce = -torch.log(picked.clamp(LOG_EPS, 1.0 - LOG_EPS))
            loss = loss + beta * ce.mean()
    return loss


class SequenceRiskModel(nn.Module):
    """Uniform contract every model in the zoo satisfies."""

    config: ModelConfig

    def forward(self, emb: Tensor, mask: Tensor) -> ModelOutput:  # pragma: no cover
        raise NotImplementedError

    @torch.no_grad()
    def predict(self, seq: SegmentEmbeddingSequence) -> Prediction:
        self.eval()
        dtype = next(self.parameters()).dtype
        emb = torch.from_numpy(np.ascontiguousarray(seq.embeddings)).to(dtype).unsqueeze(0)
        mask = torch.from_numpy(np.ascontiguousarray(seq.mask)).unsqueeze(0)
        out = self.forward(emb, mask)
        return Prediction(
            risk_prob=float(out.risk_prob[0]),
            score_probs=out.score_probs[0].numpy(),
            pooled=out.pooled[0].numpy(),
        )


class ProposedModel(SequenceRiskModel):
    """Transformer encoder -> LSTM -> masked average pooling -> two heads."""

    def __init__(self, config: ModelConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.config = config
        self.encoder = TransformerEncoder(config.encoder_config(), generator)
        self.lstm_cells = nn.ModuleList(
            LstmCell(config.d_model, config.d_model, generator)
            for _ in range(config.recurrent_layers)
        )
        self.score_head = ScoreHead(config.d_model, config.n_score_classes, generator)
        self.risk_head = RiskHead(config.d_model, generator)

    def forward(self, emb: Tensor, mask: Tensor) -> ModelOutput:
        states, attn = self.encoder(emb, mask)
        hidden = lstm_forward(states, mask, list(self.lstm_cells))
        pooled = average_pool(hidden, mask, self.config.strict_length_pooling)
        return ModelOutput(
            risk_prob=self.risk_head(pooled),
            score_probs=self.score_head(pooled),
            pooled=pooled,
            attention=attn,
        )
