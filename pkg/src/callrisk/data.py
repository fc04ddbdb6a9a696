"""Core domain types: assessment scale, call recordings, labels, dataset splits.

The risk assessment scale has 31 items grouped into 12 elements. Ten elements
are dichotomous (0/1), "suicidal ideation and plan" scores 0/1/4 and "acute
life events" scores 0/2, so the aggregate ranges over 0..16. An assessment
with more than five unanswered items has no usable aggregate ("missing").
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import ScaleValidationError, UnratableScaleError

# (element name, allowed scores) in canonical order; manifest columns use these names.
SCALE_ELEMENTS: tuple[tuple[str, tuple[int, ...]], ...] = (
    ("suicidal_ideation_and_plan", (0, 1, 4)),
    ("severe_depression", (0, 1)),
    ("hopelessness", (0, 1)),
    ("psychological_distress", (0, 1)),
    ("acute_life_events", (0, 2)),
    ("chronic_life_events", (0, 1)),
    ("alcohol_or_substance_misuse", (0, 1)),
    ("severe_physical_illness", (0, 1)),
    ("fear_of_being_attacked", (0, 1)),
    ("history_of_being_abused", (0, 1)),
    ("suicide_attempt_history", (0, 1)),
    ("relative_suicide_history", (0, 1)),
)

N_ELEMENTS = len(SCALE_ELEMENTS)
N_ITEMS = 31
MAX_UNANSWERED = 5
AGGREGATE_MAX = 16
HIGH_RISK_MIN = 8


class RiskLevel(enum.Enum):
    LOW = "low"
    HIGH = "high"


@dataclass(frozen=True)
class ScaleAssessment:
    """One completed (or partially completed) risk assessment."""

    element_scores: tuple[int, ...]
    answered_items: int

    def __post_init__(self):
        if len(self.element_scores) != N_ELEMENTS:
            raise ScaleValidationError(
                f"expected {N_ELEMENTS} element scores, got {len(self.element_scores)}"
            )
        for (name, allowed), score in zip(SCALE_ELEMENTS, self.element_scores):
            if score not in allowed:
                raise ScaleValidationError(
                    f"element '{name}' scored {score}, allowed values are {allowed}"
                )
        if not 0 <= self.answered_items <= N_ITEMS:
            raise ScaleValidationError(
                f"answered_items must be in [0, {N_ITEMS}], got {self.answered_items}"
            )

    @property
    def unanswered_items(self) -> int:
        return N_ITEMS - self.answered_items


def score_scale(assessment: ScaleAssessment) -> int | None:
    """Aggregate score in [0, 16], or None when too many items are unanswered."""
    if assessment.unanswered_items > MAX_UNANSWERED:
        return None
    total = sum(assessment.element_scores)
    assert 0 <= total <= AGGREGATE_MAX
    return total


def classify_manual_risk(aggregate: int | None) -> RiskLevel:
    """Threshold the aggregate score: 0-7 low, 8-16 high."""
    if aggregate is None:
        raise UnratableScaleError(
            "aggregate score is missing (more than five unanswered items); "
            "exclude the call or impute per the configured policy"
        )
    if not 0 <= aggregate <= AGGREGATE_MAX:
        raise ScaleValidationError(f"aggregate must be in [0, {AGGREGATE_MAX}], got {aggregate}")
    return RiskLevel.HIGH if aggregate >= HIGH_RISK_MIN else RiskLevel.LOW


@dataclass(frozen=True)
class RiskLabel:
    """Ground truth: did a suicidal act occur during the 12-month follow-up."""

    followup_suicidal_act: bool


@dataclass(frozen=True)
class CallRecording:
    """One call: mono waveform plus its assessment and follow-up label."""

    id: str
    waveform: np.ndarray
    sample_rate: int
    scale: ScaleAssessment
    label: RiskLabel

    def __post_init__(self):
        if self.waveform.ndim != 1:
            raise ValueError(f"waveform must be mono (1-D), got shape {self.waveform.shape}")
        if self.waveform.size == 0:
            raise ValueError("waveform is empty")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        self.waveform.setflags(write=False)

    @property
    def duration_s(self) -> float:
        return self.waveform.size / self.sample_rate


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint, exhaustive train/validation/test id partition."""

    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]
    seed: int

    def __post_init__(self):
        parts = [self.train, self.validation, self.test]
        everything = [i for part in parts for i in part]
        if len(set(everything)) != len(everything):
            raise ValueError("split parts overlap or contain duplicate ids")

    @property
    def all_ids(self) -> tuple[str, ...]:
        return self.train + self.validation + self.test


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_dataset(
    ids: list[str],
    labels: list[bool],
    seed: int,
    test_fraction: float = 0.2,
    val_fraction: float = 0.2,
) -> DatasetSplit:
    """Stratified 4:1 test split, then 4:1 validation split of the remainder.

    Deterministic under (ids, labels, seed); fractions are applied per label
    class with half-up rounding so class balance carries into every part.
    """
    if len(ids) != len(labels):
        raise ValueError("ids and labels must have equal length")
    if len(set(ids)) != len(ids):
        raise ValueError("ids must be unique")
    if len(ids) < 5:
        raise ValueError(f"need at least 5 ids to split, got {len(ids)}")

    rng = np.random.default_rng(seed)
    train: list[str] = []
    val: list[str] = []
    test: list[str] = []
    for cls in (False, True):
        members = sorted(i for i, y in zip(ids, labels) if y == cls)
        if not members:
            continue
        order = rng.permutation(len(members))
        shuffled = [members[j] for j in order]
        n_test = _round_half_up(len(shuffled) * test_fraction)
        test += shuffled[:n_test]
        rest = shuffled[n_test:]
        n_val = _round_half_up(len(rest) * val_fraction)
        val += rest[:n_val]
        train += rest[n_val:]
    return DatasetSplit(
        train=tuple(sorted(train)),
        validation=tuple(sorted(val)),
        test=tuple(sorted(test)),
        seed=seed,
    )


# --- corpus manifest (CSV) and audio persistence ---------------------------

MANIFEST_FIELDS = (
    ["id", "audio_path", "duration_s"]
    + [name for name, _ in SCALE_ELEMENTS]
    + ["answered_items", "label"]
)


@dataclass(frozen=True)
class ManifestRow:
    id: str
    audio_path: str
    duration_s: float
    scale: ScaleAssessment
    label: RiskLabel


def write_manifest(path: str | Path, rows: list[ManifestRow]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_FIELDS)
        for row in rows:
            writer.writerow(
                [row.id, row.audio_path, repr(row.duration_s)]
                + [str(s) for s in row.scale.element_scores]
                + [str(row.scale.answered_items), str(int(row.label.followup_suicidal_act))]
            )


def read_manifest(path: str | Path) -> list[ManifestRow]:
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != MANIFEST_FIELDS:
            raise ValueError(f"unexpected manifest header in {path}: {header}")
        rows = []
        for rec in reader:
            fields = dict(zip(MANIFEST_FIELDS, rec))
            scale = ScaleAssessment(
                element_scores=tuple(int(fields[name]) for name, _ in SCALE_ELEMENTS),
                answered_items=int(fields["answered_items"]),
            )
            rows.append(
                ManifestRow(
                    id=fields["id"],
                    audio_path=fields["audio_path"],
                    duration_s=float(fields["duration_s"]),
                    scale=scale,
                    label=RiskLabel(bool(int(fields["label"]))),
                )
            )
    return rows


def write_wav(path: str | Path, waveform: np.ndarray, sample_rate: int) -> None:
    """Persist mono audio as 16-bit linear-PCM WAV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    clipped = np.clip(waveform, -1.0, 1.0)
    wavfile.write(path, sample_rate, (clipped * 32767.0).astype("<i2"))


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Load a 16-bit PCM WAV back into float32 in [-1, 1]."""
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"expected mono WAV, got shape {data.shape} in {path}")
    if data.dtype != np.int16:
        raise ValueError(f"expected 16-bit PCM WAV, got dtype {data.dtype} in {path}")
    return (data.astype(np.float32) / 32767.0), int(rate)
