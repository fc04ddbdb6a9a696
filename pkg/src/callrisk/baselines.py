"""The comparison model zoo: recurrent, bidirectional, attention-pool, and
transformer classifiers sharing the proposed model's pooling, heads, and loss.

Every model consumes the same (B, L, d) embedding matrix plus mask and emits
the same ModelOutput, so one training/evaluation harness drives all of them.
"mamba" is recognized but deliberately rejected; reports render it as not
implemented instead of silently substituting something else.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .decoder import (
    LstmCell,
    ModelConfig,
    ModelOutput,
    ProposedModel,
    RiskHead,
    ScoreHead,
    SequenceRiskModel,
    average_pool,
    recurrent_forward,
)
from .encoder import TransformerEncoder, _init_linear
from .errors import ModelNotImplementedError

BASELINE_NAMES = (
    "lstm",
    "bilstm",
    "gru",
    "bigru",
    "attention_lstm",
    "attention_gru",
    "transformer",
)
MODEL_NAMES = BASELINE_NAMES + ("proposed",)
RECOGNIZED_UNIMPLEMENTED = ("mamba",)


class GruCell(nn.Module):
    """Gated recurrent unit: update/reset gates and a candidate state.

    Weights have shape (hidden + input, hidden); the candidate acts on
    [reset * h_prev, x_t].
    """

    def __init__(self, input_dim: int, hidden_dim: int, generator: torch.Generator | None = None):
        super().__init__()
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        joint = hidden_dim + input_dim
        for gate in ("z", "r", "h"):
            setattr(self, f"w_{gate}", nn.Parameter(torch.empty(joint, hidden_dim)))
            setattr(self, f"b_{gate}", nn.Parameter(torch.zeros(hidden_dim)))
            _init_linear(getattr(self, f"w_{gate}"), generator, joint)

    def init_state(self, batch: int, dtype: torch.dtype, device) -> tuple[Tensor]:
        return (torch.zeros(batch, self.hidden_dim, dtype=dtype, device=device),)

    def step(self, x: Tensor, state: tuple[Tensor]) -> tuple[Tensor, tuple[Tensor]]:
        (h_prev,) = state
        joint = torch.cat([h_prev, x], dim=-1)
        z = torch.sigmoid(joint @ self.w_z + self.b_z)
        r = torch.sigmoid(joint @ self.w_r + self.b_r)
        h_tilde = torch.tanh(torch.cat([r * h_prev, x], dim=-1) @ self.w_h + self.b_h)
        h = (1.0 - z) * h_prev + z * h_tilde
        return h, (h,)


def gru_step(x: Tensor, h_prev: Tensor, cell: GruCell) -> Tensor:
    h, _ = cell.step(x, (h_prev,))
    return h


def _reverse_real_prefix(x: Tensor, mask: Tensor) -> Tensor:
    """Reverse each sequence's real prefix in time, leaving padding in place.

    The index map is an involution on the prefix, so applying it to backward
    outputs restores original time order.
    """
    batch, length = mask.shape
    n_real = mask.sum(dim=1)  # (B,)
    t = torch.arange(length, device=x.device).unsqueeze(0).expand(batch, length)
    idx = torch.where(t < n_real.unsqueeze(1), n_real.unsqueeze(1) - 1 - t, t)
    return x.gather(1, idx.unsqueeze(-1).expand_as(x))


def _make_cell(kind: str, input_dim: int, hidden: int, generator) -> nn.Module:
    if kind == "lstm":
        return LstmCell(input_dim, hidden, generator)
    if kind == "gru":
        return GruCell(input_dim, hidden, generator)
    raise ValueError(f"unknown cell kind {kind!r}")


class RecurrentBackbone(nn.Module):
    """Stacked (optionally bidirectional) recurrent layers over the sequence.

    Bidirectional layers run a second cell over the time-reversed real prefix
    and concatenate both directions, so the output width is 2 * hidden.
    """

    def __init__(
        self,
        kind: str,
        input_dim: int,
        hidden: int,
        n_layers: int,
        bidirectional: bool,
        generator: torch.Generator | None = None,
    ):
        super().__init__()
        self.bidirectional = bidirectional
        self.out_dim = hidden * (2 if bidirectional else 1)
        fwd, bwd = [], []
        in_dim = input_dim
        for _ in range(n_layers):
            fwd.append(_make_cell(kind, in_dim, hidden, generator))
            if bidirectional:
                bwd.append(_make_cell(kind, in_dim, hidden, generator))
            in_dim = self.out_dim
        self.forward_cells = nn.ModuleList(fwd)
        self.backward_cells = nn.ModuleList(bwd)

    def forward(self, x: Tensor, mask: Tensor) -> Tensor:
        for layer in range(len(self.forward_cells)):
            fwd_out = recurrent_forward(x, mask, self.forward_cells[layer])
            if self.bidirectional:
                reversed_in = _reverse_real_prefix(x, mask)
                bwd_out = recurrent_forward(reversed_in, mask, self.backward_cells[layer])
                bwd_out = _reverse_real_prefix(bwd_out, mask)
                x = torch.cat([fwd_out, bwd_out], dim=-1)
            else:
                x = fwd_out
        return x


class AttentionPool(nn.Module):
    """Additive attention pooling: weights softmax(v . tanh(H W)) over real rows."""

    def __init__(self, dim: int, generator: torch.Generator | None = None):
        super().__init__()
        self.w_att = nn.Parameter(torch.empty(dim, dim))
        self.v_att = nn.Parameter(torch.empty(dim))
        _init_linear(self.w_att, generator, dim)
        _init_linear(self.v_att, generator, dim)

    def forward(self, h: Tensor, mask: Tensor) -> tuple[Tensor, Tensor]:
        if not bool(mask.any(dim=1).all()):
            raise ValueError("attention pooling needs at least one unmasked row per sequence")
        scores = torch.tanh(h @ self.w_att) @ self.v_att  # (B, L)
        scores = scores.masked_fill(~mask, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        pooled = (weights.unsqueeze(-1) * h).sum(dim=1)
        return pooled, weights


class RecurrentRiskModel(SequenceRiskModel):
    """LSTM/GRU variants: backbone, then mean or attention pooling, then heads."""

    def __init__(self, config: ModelConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.config = config
        kind = "lstm" if "lstm" in config.name else "gru"
        bidirectional = config.name.startswith("bi")
        self.attention_pooling = config.name.startswith("attention_")
        self.backbone = RecurrentBackbone(
            kind,
            config.input_dim,
            config.d_model,
            config.recurrent_layers,
            bidirectional,
            generator,
        )
        self.pool = AttentionPool(self.backbone.out_dim, generator) if self.attention_pooling else None
        self.score_head = ScoreHead(self.backbone.out_dim, config.n_score_classes, generator)
        self.risk_head = RiskHead(self.backbone.out_dim, generator)

    def forward(self, emb: Tensor, mask: Tensor) -> ModelOutput:
        hidden = self.backbone(emb, mask)
        if self.pool is not None:
            pooled, weights = self.pool(hidden, mask)
        else:
            pooled = average_pool(hidden, mask, self.config.strict_length_pooling)
            weights = None
        return ModelOutput(
            risk_prob=self.risk_head(pooled),
            score_probs=self.score_head(pooled),
            pooled=pooled,
            pool_weights=weights,
        )


class TransformerRiskModel(SequenceRiskModel):
    """Encoder-only baseline: transformer states, mean pooling, heads."""

    def __init__(self, config: ModelConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.config = config
        self.encoder = TransformerEncoder(config.encoder_config(), generator)
        self.score_head = ScoreHead(config.d_model, config.n_score_classes, generator)
        self.risk_head = RiskHead(config.d_model, generator)

    def forward(self, emb: Tensor, mask: Tensor) -> ModelOutput:
        states, attn = self.encoder(emb, mask)
        pooled = average_pool(states, mask, self.config.strict_length_pooling)
        return ModelOutput(
            risk_prob=self.risk_head(pooled),
            score_probs=self.score_head(pooled),
            pooled=pooled,
            attention=attn,
        )


def build_model(config: ModelConfig, seed: int | None = None) -> SequenceRiskModel:
    """Instantiate any model in the zoo with deterministic seeded parameters."""
    name = config.name
    if name in RECOGNIZED_UNIMPLEMENTED:
        raise ModelNotImplementedError(
            f"{name}: not implemented (selective state-space baseline is out of scope)"
        )
    if name not in MODEL_NAMES:
        raise ValueError(f"unknown model {name!r}; valid names: {', '.join(MODEL_NAMES)}")
    generator = None
    if seed is not None:
        generator = torch.Generator()
        generator.manual_seed(seed)
    if name == "proposed":
        return ProposedModel(config, generator)
    if name == "transformer":
        return TransformerRiskModel(config, generator)
    return RecurrentRiskModel(config, generator)
