"""Training harness: batching, AdamW optimization, validation-based selection,
checkpointing, and single-root-seed reproducibility.

All stage randomness derives from one root seed: derive_seed(root, label)
hashes "<root>:<label>" with SHA-256 and keeps 63 bits, so any stage (split,
model init, shuffling, bootstrap, ...) can be reproduced in isolation.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .data import DatasetSplit, ManifestRow, score_scale
from .decoder import ModelConfig, SequenceRiskModel, hybrid_loss
from .errors import CheckpointError, NonFiniteError
from .evaluation import confusion_metrics
from .features import cache_read

CHECKPOINT_VERSION = 1
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def derive_seed(root: int, label: str) -> int:
    digest = hashlib.sha256(f"{root}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-4
    weight_decay: float = 1e-2
    alpha: float = 0.5  # risk-head loss weight
    beta: float = 0.5   # score-head loss weight
    grad_clip: float = 1.0         # 0 disables clipping
    lr_schedule: str = "constant"  # or "cosine"
    early_stopping_patience: int = 0  # 0 disables
    selection_threshold: float = 0.5

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.alpha < 0 or self.beta < 0 or (self.alpha == 0 and self.beta == 0):
            raise ValueError("alpha/beta must be >= 0 and not both zero")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_precision: float
    val_recall: float
    val_f1: float


@dataclass
class TrainLog:
    entries: list[EpochRecord]
    selected_epoch: int

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "train_loss", "val_precision", "val_recall", "val_f1"])
            for e in self.entries:
                writer.writerow(
                    [e.epoch, repr(e.train_loss), repr(e.val_precision), repr(e.val_recall), repr(e.val_f1)]
                )


@dataclass(frozen=True)
class CallExample:
    """One training/evaluation example assembled from manifest + cache."""

    id: str
    embeddings: np.ndarray  # (L, d) float32
    mask: np.ndarray        # (L,) bool
    risk_target: bool
    score_target: int       # aggregate 0..16, or -1 when missing


def load_examples(
    rows: list[ManifestRow], cache_dir: str | Path, expect_extractor_id: str | None = None
) -> dict[str, CallExample]:
    examples = {}
    for row in rows:
        emb = cache_read(cache_dir, row.id, expect_extractor_id)
        aggregate = score_scale(row.scale)
        examples[row.id] = CallExample(
            id=row.id,
            embeddings=emb.embeddings,
            mask=emb.mask,
            risk_target=row.label.followup_suicidal_act,
            score_target=-1 if aggregate is None else aggregate,
        )
    return examples


def _stack(examples: dict[str, CallExample], ids: tuple[str, ...]):
    emb = torch.from_numpy(np.stack([examples[i].embeddings for i in ids]))
    mask = torch.from_numpy(np.stack([examples[i].mask for i in ids]))
    risk = torch.tensor([examples[i].risk_target for i in ids], dtype=torch.float32)
    score = torch.tensor([examples[i].score_target for i in ids], dtype=torch.long)
    return emb, mask, risk, score


def predict_batch(
    model: SequenceRiskModel, examples: dict[str, CallExample], ids: tuple[str, ...], batch_size: int = 64
) -> np.ndarray:
    """Risk probabilities for the given ids, in order."""
    model.eval()
    probs = []
    with torch.no_grad():
        for start in range(0, len(ids), batch_size):
            chunk = ids[start : start + batch_size]
            emb, mask, _, _ = _stack(examples, chunk)
            out = model.forward(emb, mask)
            probs.append(out.risk_prob.numpy())
    return np.concatenate(probs)


def train(
    model: SequenceRiskModel,
    examples: dict[str, CallExample],
    split: DatasetSplit,
    cfg: TrainConfig,
    seed: int,
) -> TrainLog:
    """Optimize the hybrid loss; keep and restore the best-validation-F1 state.

    Fully deterministic for fixed (model init, examples, split, cfg, seed) on
    one device: shuffling comes from a dedicated torch generator and AdamW/
    gradient math is pure CPU tensor arithmetic.
    """
    if not split.train or not split.validation:
        raise ValueError("train and validation splits must be non-empty")
    missing = [i for i in split.train + split.validation if i not in examples]
    if missing:
        raise ValueError(f"no cached embeddings for ids: {missing[:5]}")

    torch.manual_seed(derive_seed(seed, "train-globals"))  # covers dropout
    shuffle_gen = torch.Generator()
    shuffle_gen.manual_seed(derive_seed(seed, "train-shuffle"))

    train_emb, train_mask, train_risk, train_score = _stack(examples, split.train)
    val_labels = [examples[i].risk_target for i in split.validation]

    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=cfg.learning_rate,
        weight_decay=cfg.weight_decay,
        betas=ADAM_BETAS,
        eps=ADAM_EPS,
    )

    n = len(split.train)
    entries: list[EpochRecord] = []
    best_f1 = -1.0
    best_epoch = -1
    best_state = None
    since_best = 0
    for epoch in range(cfg.epochs):
        if cfg.lr_schedule == "cosine":
            scale = 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))
            for group in optimizer.param_groups:
                group["lr"] = cfg.learning_rate * scale
        model.train()
        perm = torch.randperm(n, generator=shuffle_gen)
        total_loss = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start : start + cfg.batch_size]
            out = model.forward(train_emb[idx], train_mask[idx])
            loss = hybrid_loss(
                train_risk[idx], out.risk_prob, train_score[idx], out.score_probs,
                alpha=cfg.alpha, beta=cfg.beta,
            )
            if not torch.isfinite(loss):
                raise NonFiniteError(f"non-finite loss at epoch {epoch}, batch {b}")
            optimizer.zero_grad()
            loss.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(
                    [p for p in model.parameters() if p.grad is not None], cfg.grad_clip
                )
            optimizer.step()
            total_loss += float(loss) * len(idx)

        probs = predict_batch(model, examples, split.validation)
        preds = probs >= cfg.selection_threshold
        point = confusion_metrics(preds.tolist(), val_labels)
        entries.append(
            EpochRecord(epoch, total_loss / n, point.precision, point.recall, point.f1)
        )
        if point.f1 > best_f1:
            best_f1 = point.f1
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            since_best = 0
        else:
            since_best += 1
            if cfg.early_stopping_patience and since_best >= cfg.early_stopping_patience:
                break

    model.load_state_dict(best_state)
    return TrainLog(entries=entries, selected_epoch=best_epoch)


def save_checkpoint(path: str | Path, model: SequenceRiskModel, extra: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": asdict(model.config),
        "state_dict": model.state_dict(),
        "extra": dict(extra or {}),
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> SequenceRiskModel:
    from .baselines import build_model  # local import to avoid a module cycle

    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"{path} is not a readable checkpoint: {e}") from e
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"{path} is missing checkpoint metadata")
    if payload["format_version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path} has checkpoint version {payload['format_version']}, "
            f"this build reads version {CHECKPOINT_VERSION}"
        )
    config = ModelConfig(**payload["model_config"])
    model = build_model(config, seed=0)
    try:
        model.load_state_dict(payload["state_dict"], strict=True)
    except RuntimeError as e:
        raise CheckpointError(f"checkpoint {path} does not fit its config: {e}") from e
    model.eval()
    return model
