"""Metrics with bootstrap confidence intervals, the manual-rating baseline,
the model-comparison report, and attention-based segment ranking.

All headline numbers are percentages. Confidence intervals are percentile
bootstrap over the test set: resample (prediction, label) pairs with
replacement, recompute the metric, and report the resample mean with the
2.5/97.5 percentile bounds. Resamples where a metric's denominator is zero
are skipped and counted; too many skips flag the result.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import RiskLevel, ScaleAssessment, classify_manual_risk, score_scale
from .decoder import SequenceRiskModel
from .errors import SalienceUnavailableError
from .features import SegmentEmbeddingSequence


def f1_from_precision_recall(precision: float, recall: float) -> float:
    """Harmonic mean; 0 when both rates are 0."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class PointMetrics:
    """Full-sample precision/recall/F1 in percent."""

    precision: float
    recall: float
    f1: float
    degenerate: bool  # some denominator was zero and the value was forced to 0


def confusion_metrics(preds: list[bool], labels: list[bool]) -> PointMetrics:
    if len(preds) == 0:
        raise ValueError("cannot compute metrics on empty inputs")
    if len(preds) != len(labels):
        raise ValueError(f"preds and labels differ in length: {len(preds)} vs {len(labels)}")
    p = np.asarray(preds, dtype=bool)
    y = np.asarray(labels, dtype=bool)
    tp = int((p & y).sum())
    fp = int((p & ~y).sum())
    fn = int((~p & y).sum())
    degenerate = (tp + fp == 0) or (tp + fn == 0)
    precision = 100.0 * tp / (tp + fp) if tp + fp else 0.0
    recall = 100.0 * tp / (tp + fn) if tp + fn else 0.0
    return PointMetrics(precision, recall, f1_from_precision_recall(precision, recall), degenerate)


@dataclass(frozen=True)
class MetricTriple:
    mean: float
    ci_low: float
    ci_high: float

    def __post_init__(self):
        if not self.ci_low - 1e-9 <= self.mean <= self.ci_high + 1e-9:
            raise ValueError(f"bootstrap mean {self.mean} outside CI [{self.ci_low}, {self.ci_high}]")

    def format(self) -> str:
        return f"{self.mean:.2f} [{self.ci_low:.2f}, {self.ci_high:.2f}]"


def _metric_value(name: str, tp: int, fp: int, fn: int) -> float | None:
    """Metric in percent, or None when its denominator is zero."""
    if name == "precision":
        return 100.0 * tp / (tp + fp) if tp + fp else None
    if name == "recall":
        return 100.0 * tp / (tp + fn) if tp + fn else None
    if name == "f1":
        if tp + fp == 0 or tp + fn == 0:
            return None
        return f1_from_precision_recall(100.0 * tp / (tp + fp), 100.0 * tp / (tp + fn))
    raise ValueError(f"unknown metric {name!r}")


def bootstrap_ci(
    metric: str,
    preds: list[bool],
    labels: list[bool],
    n_bootstrap: int = 1000,
    seed: int = 0,
) -> tuple[MetricTriple, int]:
    """Percentile bootstrap for one metric; returns (triple, skipped resamples).

    Deterministic under seed. Calls for different metrics with the same seed
    draw identical resample index streams.
    """
    if n_bootstrap < 100:
        raise ValueError(f"n_bootstrap must be at least 100, got {n_bootstrap}")
    p = np.asarray(preds, dtype=bool)
    y = np.asarray(labels, dtype=bool)
    if p.size == 0 or p.shape != y.shape:
        raise ValueError("preds and labels must be equal-length and non-empty")
    rng = np.random.default_rng(seed)
    values = []
    skipped = 0
    m = p.size
    for _ in range(n_bootstrap):
        idx = rng.integers(0, m, size=m)
        rp, ry = p[idx], y[idx]
        tp = int((rp & ry).sum())
        fp = int((rp & ~ry).sum())
        fn = int((~rp & ry).sum())
        value = _metric_value(metric, tp, fp, fn)
        if value is None:
            skipped += 1
        else:
            values.append(value)
    if not values:
        raise ValueError(f"every bootstrap resample was degenerate for metric {metric!r}")
    arr = np.asarray(values)
    return MetricTriple(float(arr.mean()), float(np.percentile(arr, 2.5)), float(np.percentile(arr, 97.5))), skipped


@dataclass(frozen=True)
class MetricResult:
    precision: MetricTriple
    recall: MetricTriple
    f1: MetricTriple
    n_bootstrap: int
    seed: int
    skipped: dict[str, int] = field(default_factory=dict)
    warning: bool = False


def evaluate_predictions(
    preds: list[bool], labels: list[bool], n_bootstrap: int = 1000, seed: int = 0
) -> MetricResult:
    triples = {}
    skipped = {}
    for metric in ("precision", "recall", "f1"):
        triples[metric], skipped[metric] = bootstrap_ci(metric, preds, labels, n_bootstrap, seed)
    warning = any(s > 0.1 * n_bootstrap for s in skipped.values())
    return MetricResult(
        precision=triples["precision"],
        recall=triples["recall"],
        f1=triples["f1"],
        n_bootstrap=n_bootstrap,
        seed=seed,
        skipped=skipped,
        warning=warning,
    )


# --- manual-rating baseline -------------------------------------------------

MISSING_POLICIES = ("exclude", "low")


def manual_rating_predictions(
    scales: list[ScaleAssessment], labels: list[bool], missing_policy: str = "exclude"
) -> tuple[list[bool], list[bool], int]:
    """Manual high/low calls from aggregate scores; returns (preds, labels, n_missing).

    Missing aggregates are dropped ("exclude") or rated low ("low"); either
    way the count is reported so downstream reports can state the policy.
    """
    if missing_policy not in MISSING_POLICIES:
        raise ValueError(f"missing_policy must be one of {MISSING_POLICIES}, got {missing_policy!r}")
    preds, kept, n_missing = [], [], 0
    for scale, label in zip(scales, labels):
        aggregate = score_scale(scale)
        if aggregate is None:
            n_missing += 1
            if missing_policy == "exclude":
                continue
            preds.append(False)  # "low": missing rated low risk
        else:
            preds.append(classify_manual_risk(aggregate) is RiskLevel.HIGH)
        kept.append(label)
    if not preds:
        raise ValueError("every assessment aggregate is missing; nothing to rate")
    return preds, kept, n_missing


def manual_baseline(
    scales: list[ScaleAssessment],
    labels: list[bool],
    missing_policy: str = "exclude",
    n_bootstrap: int = 1000,
    seed: int = 0,
) -> tuple[MetricResult, int]:
    preds, kept, n_missing = manual_rating_predictions(scales, labels, missing_policy)
    return evaluate_predictions(preds, kept, n_bootstrap, seed), n_missing


# --- comparison report -------------------------------------------------------

REPORT_ROW_ORDER = (
    "manual",
    "lstm",
    "gru",
    "bilstm",
    "bigru",
    "attention_lstm",
    "attention_gru",
    "transformer",
    "mamba",
    "proposed",
)
NOT_IMPLEMENTED = "not implemented"
_CSV_FIELDS = [
    "model",
    "status",
    "precision_mean",
    "precision_lo",
    "precision_hi",
    "recall_mean",
    "recall_lo",
    "recall_hi",
    "f1_mean",
    "f1_lo",
    "f1_hi",
    "note",
]


@dataclass(frozen=True)
class ReportRow:
    model: str
    result: MetricResult | None  # None: not implemented
    note: str = ""

    @property
    def status(self) -> str:
        return "ok" if self.result is not None else NOT_IMPLEMENTED


@dataclass(frozen=True)
class CompareReport:
    rows: tuple[ReportRow, ...]
    metadata: dict[str, str] = field(default_factory=dict)

    def best_by_column(self) -> dict[str, float]:
        best = {}
        for column in ("precision", "recall", "f1"):
            means = [getattr(r.result, column).mean for r in self.rows if r.result is not None]
            if means:
                best[column] = max(means)
        return best


def compare_report(
    results: dict[str, MetricResult | None],
    metadata: dict[str, str] | None = None,
) -> CompareReport:
    """Assemble the fixed-order comparison table; mamba is always rendered as
    a not-implemented row."""
    if not any(v is not None for v in results.values()):
        raise ValueError("need at least one evaluated model to build a report")
    merged: dict[str, MetricResult | None] = dict(results)
    merged.setdefault("mamba", None)
    ordered = [name for name in REPORT_ROW_ORDER if name in merged]
    ordered += sorted(set(merged) - set(ordered))
    rows = []
    for name in ordered:
        result = merged[name]
        note = "" if result is not None else NOT_IMPLEMENTED
        rows.append(ReportRow(model=name, result=result, note=note))
    return CompareReport(rows=tuple(rows), metadata=dict(metadata or {}))


def report_to_csv(report: CompareReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_FIELDS)
    for row in report.rows:
        if row.result is None:
            writer.writerow([row.model, NOT_IMPLEMENTED] + [""] * 9 + [row.note])
        else:
            r = row.result
            cells = []
            for triple in (r.precision, r.recall, r.f1):
                cells += [f"{triple.mean:.2f}", f"{triple.ci_low:.2f}", f"{triple.ci_high:.2f}"]
            writer.writerow([row.model, "ok"] + cells + [row.note])
    return buf.getvalue()


def report_from_csv(text: str, n_bootstrap: int = 0, seed: int = 0) -> CompareReport:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != _CSV_FIELDS:
        raise ValueError(f"unexpected report header: {header}")
    rows = []
    for rec in reader:
        fields = dict(zip(_CSV_FIELDS, rec))
        if fields["status"] == NOT_IMPLEMENTED:
            rows.append(ReportRow(model=fields["model"], result=None, note=fields["note"]))
            continue
        result = MetricResult(
            precision=MetricTriple(
                float(fields["precision_mean"]), float(fields["precision_lo"]), float(fields["precision_hi"])
            ),
            recall=MetricTriple(
                float(fields["recall_mean"]), float(fields["recall_lo"]), float(fields["recall_hi"])
            ),
            f1=MetricTriple(float(fields["f1_mean"]), float(fields["f1_lo"]), float(fields["f1_hi"])),
            n_bootstrap=n_bootstrap,
            seed=seed,
        )
        rows.append(ReportRow(model=fields["model"], result=result, note=fields["note"]))
    return CompareReport(rows=tuple(rows))


def report_to_text(report: CompareReport) -> str:
    """Human-readable table; the best mean per column is marked with **bold**."""
    best = report.best_by_column()
    lines = ["# risk prediction comparison (percent, bootstrap mean [95% CI])"]
    for key in sorted(report.metadata):
        lines.append(f"# {key}: {report.metadata[key]}")
    header = f"{'model':<16} {'precision':<26} {'recall':<26} {'f1':<26}"
    lines.append(header)
    lines.append("-" * len(header))
    for row in report.rows:
        if row.result is None:
            lines.append(f"{row.model:<16} {NOT_IMPLEMENTED}")
            continue
        cells = []
        for column in ("precision", "recall", "f1"):
            triple: MetricTriple = getattr(row.result, column)
            text = triple.format()
            if triple.mean == best.get(column):
                text = f"**{text}**"
            cells.append(f"{text:<26}")
        suffix = f"  ({row.note})" if row.note else ""
        flag = "  [unstable bootstrap]" if row.result.warning else ""
        lines.append(f"{row.model:<16} " + " ".join(cells) + suffix + flag)
    return "\n".join(lines) + "\n"


# --- attention interpretability ----------------------------------------------

SALIENCE_SOURCES = ("encoder_attention", "attention_pool")


@dataclass(frozen=True)
class SegmentSalience:
    index: int
    start_s: float
    end_s: float
    weight: float


@dataclass(frozen=True)
class InterpretabilityReport:
    call_id: str
    source: str
    entries: tuple[SegmentSalience, ...]

    def indices(self) -> list[int]:
        return [e.index for e in self.entries]


def segment_salience(
    model: SequenceRiskModel,
    seq: SegmentEmbeddingSequence,
    source: str = "auto",
    encoder_layers: str = "all",
) -> tuple[np.ndarray, str]:
    """Per-segment salience weights summing to 1 over real segments.

    attention_pool: the pooling weights themselves. encoder_attention: the
    attention received by each key, averaged over heads, real query rows, and
    the selected layers ("all" or "final").
    """
    if encoder_layers not in ("all", "final"):
        raise ValueError(f"encoder_layers must be 'all' or 'final', got {encoder_layers!r}")
    model.eval()
    dtype = next(model.parameters()).dtype
    emb = torch.from_numpy(np.ascontiguousarray(seq.embeddings)).to(dtype).unsqueeze(0)
    mask = torch.from_numpy(np.ascontiguousarray(seq.mask)).unsqueeze(0)
    with torch.no_grad():
        out = model.forward(emb, mask)
    if source == "auto":
        source = "attention_pool" if out.pool_weights is not None else "encoder_attention"
    if source == "attention_pool":
        if out.pool_weights is None:
            raise SalienceUnavailableError(
                f"model {model.config.name!r} has no attention pooling weights"
            )
        return out.pool_weights[0].numpy().astype(np.float64), source
    if source == "encoder_attention":
        if not out.attention:
            raise SalienceUnavailableError(
                f"model {model.config.name!r} exposes no attention maps; "
                "segment ranking is unsupported for plain recurrent models"
            )
        maps = out.attention[-1:] if encoder_layers == "final" else out.attention
        stacked = torch.cat([m[0] for m in maps], dim=0)  # (layers*heads, L, L)
        received = stacked[:, seq.mask, :].mean(dim=(0, 1))  # mean over heads+layers+real queries
        return received.numpy().astype(np.float64), source
    raise ValueError(f"unknown salience source {source!r}; valid: {SALIENCE_SOURCES}")


def top_k_segments(
    model: SequenceRiskModel,
    seq: SegmentEmbeddingSequence,
    call_id: str,
    k: int = 10,
    chunk_s: float = 30.0,
    source: str = "auto",
    encoder_layers: str = "all",
) -> InterpretabilityReport:
    """Rank real segments by salience; ties break toward earlier segments.

    Returns at most k entries and fewer when the call has fewer real segments.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    weights, resolved = segment_salience(model, seq, source, encoder_layers)
    real = np.flatnonzero(seq.mask)
    ranked = sorted(real, key=lambda i: (-weights[i], i))[: min(k, real.size)]
    entries = tuple(
        SegmentSalience(
            index=int(i),
            start_s=float(i * chunk_s),
            end_s=float((i + 1) * chunk_s),
            weight=float(weights[i]),
        )
        for i in ranked
    )
    return InterpretabilityReport(call_id=call_id, source=resolved, entries=entries)


def render_interpretability(report: InterpretabilityReport) -> str:
    lines = [
        f"call: {report.call_id}",
        f"salience source: {report.source}",
        f"{'rank':<6}{'segment':<9}{'window':<20}{'weight':<10}",
    ]
    for rank, e in enumerate(report.entries, start=1):
        window = f"{e.start_s:.0f}-{e.end_s:.0f}s"
        lines.append(f"{rank:<6}{e.index:<9}{window:<20}{e.weight:.6f}")
    return "\n".join(lines) + "\n"


# --- permutation-test helpers -------------------------------------------------


def permutation_pvalue_f1(
    preds: list[bool], labels: list[bool], n_permutations: int = 1000, seed: int = 0
) -> tuple[float, float]:
    """One-sided p-value for observing an F1 this high under label shuffling.

    p > alpha means the classifier is indistinguishable from chance.
    """
    observed = confusion_metrics(preds, labels).f1
    rng = np.random.default_rng(seed)
    y = np.asarray(labels, dtype=bool)
    at_least = 0
    for _ in range(n_permutations):
        shuffled = y[rng.permutation(y.size)]
        if confusion_metrics(preds, shuffled.tolist()).f1 >= observed:
            at_least += 1
    return observed, (1 + at_least) / (n_permutations + 1)


def planted_overlap_pvalue(
    top_indices: list[list[int]],
    planted_runs: list[tuple[int, int]],
    n_real: list[int],
    k: int,
    n_permutations: int = 1000,
    seed: int = 0,
) -> tuple[float, float]:
    """Mean overlap of top-k segments with the planted run vs random top-k.

    The null draws k distinct real segment indices uniformly per call. Returns
    (observed mean overlap, one-sided p-value).
    """
    rng = np.random.default_rng(seed)
    runs = [set(range(a, b)) for a, b in planted_runs]
    observed = float(np.mean([len(set(t) & r) for t, r in zip(top_indices, runs)]))
    at_least = 0
    for _ in range(n_permutations):
        overlaps = []
        for run, n in zip(runs, n_real):
            draw = rng.choice(n, size=min(k, n), replace=False)
            overlaps.append(len(set(int(d) for d in draw) & run))
        if float(np.mean(overlaps)) >= observed:
            at_least += 1
    return observed, (1 + at_least) / (n_permutations + 1)
