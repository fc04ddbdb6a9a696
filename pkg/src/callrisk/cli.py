"""Command-line pipeline: synth -> extract -> train -> evaluate -> compare,
plus per-call attention reports via interpret.

Every command loads one YAML config, applies flag overrides, snapshots the
resolved config into the run directory, and is idempotent for a fixed config
and seed. Failures write a machine-readable error artifact under
<run_dir>/errors/ and exit nonzero.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import evaluation
from .baselines import MODEL_NAMES, RECOGNIZED_UNIMPLEMENTED, build_model
from .config import RunConfig, apply_overrides, load_config, save_config
from .data import read_manifest, read_wav, split_dataset, write_manifest, write_wav, ManifestRow
from .errors import CacheMissError, StaleCacheError
from .features import (
    MockExtractor,
    WhisperExtractor,
    cache_read,
    cache_write,
    extract_embeddings,
    resample,
    segment_waveform,
    write_cache_index,
)
from .synth import generate_synthetic_corpus
from .training import (
    derive_seed,
    load_checkpoint,
    load_examples,
    predict_batch,
    save_checkpoint,
    train,
)

_EVALUATABLE = MODEL_NAMES + ("manual",)


def _fail(run_dir: Path | None, command: str, error: Exception) -> None:
    """Record the failure as an artifact (when a run dir is known) and exit 1."""
    if run_dir is not None:
        try:
            errors_dir = run_dir / "errors"
            errors_dir.mkdir(parents=True, exist_ok=True)
            (errors_dir / f"{command}.json").write_text(
                json.dumps(
                    {"command": command, "error": type(error).__name__, "message": str(error)},
                    indent=2,
                )
                + "\n"
            )
        except OSError:
            pass
    click.echo(f"error: {error}", err=True)
    sys.exit(1)


def _prepare(config_path: str, overrides: dict[str, object]) -> tuple[RunConfig, Path]:
    cfg = apply_overrides(load_config(config_path), overrides)
    run_dir = Path(cfg.paths.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, run_dir / "config_resolved.yaml")
    return cfg, run_dir


def _make_extractor(cfg: RunConfig):
    if cfg.features.extractor == "mock":
        return MockExtractor(dim=cfg.features.dim)
    return WhisperExtractor()


def _expected_extractor_id(cfg: RunConfig) -> str | None:
    """Exact id for the mock extractor; reference ids depend on the weights
    path, so reference caches are checked by prefix at read time."""
    if cfg.features.extractor == "mock":
        return MockExtractor(dim=cfg.features.dim).extractor_id
    return None


def _load_examples_or_fail(cfg: RunConfig, rows):
    try:
        examples = load_examples(rows, cfg.paths.cache_dir, _expected_extractor_id(cfg))
    except CacheMissError as e:
        raise CacheMissError(f"{e.args[0]}; run 'callrisk extract' first") from e
    if cfg.features.extractor == "reference":
        sample = next(iter(examples.values()))
        cached = cache_read(cfg.paths.cache_dir, sample.id)
        if not cached.extractor_id.startswith("whisper:"):
            raise StaleCacheError(
                f"cache was written by {cached.extractor_id!r} but the config asks for the "
                "reference extractor; re-run 'callrisk extract'"
            )
    return examples


def _split_from_rows(cfg: RunConfig, rows):
    ids = [r.id for r in rows]
    labels = [r.label.followup_suicidal_act for r in rows]
    return split_dataset(ids, labels, derive_seed(cfg.seed, "split"))


config_option = click.option(
    "--config", "-c", "config_path", required=True, type=click.Path(), help="YAML run config."
)
seed_option = click.option("--seed", type=int, default=None, help="Override the root seed.")


@click.group()
def main():
    """Long-call speech risk prediction pipeline."""


@main.command()
@config_option
@seed_option
def synth(config_path, seed):
    """Generate the synthetic corpus: WAV files, manifest, planted-run map."""
    run_dir = None
    try:
        cfg, run_dir = _prepare(config_path, {"seed": seed})
        corpus = generate_synthetic_corpus(cfg.synth_config(), derive_seed(cfg.seed, "synth"))
        manifest_path = Path(cfg.paths.manifest)
        audio_dir = manifest_path.parent / "audio"
        rows = []
        for rec in corpus.recordings:
            wav_path = audio_dir / f"{rec.id}.wav"
            write_wav(wav_path, rec.waveform, rec.sample_rate)
            rows.append(
                ManifestRow(
                    id=rec.id,
                    audio_path=str(wav_path.relative_to(manifest_path.parent)),
                    duration_s=rec.duration_s,
                    scale=rec.scale,
                    label=rec.label,
                )
            )
        write_manifest(manifest_path, rows)
        planted = {k: list(v) for k, v in sorted(corpus.planted_segments.items())}
        (manifest_path.parent / "planted.json").write_text(json.dumps(planted, indent=2) + "\n")
        click.echo(f"wrote {len(rows)} calls to {manifest_path}")
    except Exception as e:  # noqa: BLE001 - boundary converts to exit status
        _fail(run_dir, "synth", e)


@main.command()
@config_option
@seed_option
@click.option("--extractor", type=click.Choice(["reference", "mock"]), default=None)
def extract(config_path, seed, extractor):
    """Segment every call and cache per-segment embeddings."""
    run_dir = None
    try:
        cfg, run_dir = _prepare(config_path, {"seed": seed, "features.extractor": extractor})
        manifest_path = Path(cfg.paths.manifest)
        if not manifest_path.exists():
            raise FileNotFoundError(
                f"manifest {manifest_path} not found; run 'callrisk synth' first "
                "(or point paths.manifest at an existing corpus)"
            )
        rows = read_manifest(manifest_path)
        worker = _make_extractor(cfg)
        entries = []
        for row in rows:
            waveform, rate = read_wav(manifest_path.parent / row.audio_path)
            if worker.sample_rate is not None and rate != worker.sample_rate:
                waveform, rate = resample(waveform, rate, worker.sample_rate), worker.sample_rate
            seq = segment_waveform(waveform, rate, cfg.features.chunk_s, cfg.features.window_s)
            emb = extract_embeddings(seq, worker)
            cache_write(cfg.paths.cache_dir, row.id, emb)
            entries.append((row.id, emb.extractor_id, len(emb), emb.dim))
        write_cache_index(cfg.paths.cache_dir, entries)
        click.echo(f"cached embeddings for {len(entries)} calls in {cfg.paths.cache_dir}")
    except Exception as e:  # noqa: BLE001
        _fail(run_dir, "extract", e)


@main.command(name="train")
@config_option
@seed_option
@click.option("--model", "model_name", type=click.Choice(MODEL_NAMES + RECOGNIZED_UNIMPLEMENTED), default=None)
def train_cmd(config_path, seed, model_name):
    """Train one model on cached embeddings; keep the best-validation-F1 state."""
    run_dir = None
    try:
        cfg, run_dir = _prepare(config_path, {"seed": seed, "model.name": model_name})
        rows = read_manifest(cfg.paths.manifest)
        examples = _load_examples_or_fail(cfg, rows)
        split = _split_from_rows(cfg, rows)
        (run_dir / "splits.json").write_text(
            json.dumps(
                {"train": split.train, "validation": split.validation, "test": split.test},
                indent=2,
            )
            + "\n"
        )
        name = cfg.model.name
        input_dim = next(iter(examples.values())).embeddings.shape[1]
        model = build_model(cfg.model_config(input_dim), seed=derive_seed(cfg.seed, f"init:{name}"))
        log = train(model, examples, split, cfg.train_config(), derive_seed(cfg.seed, f"fit:{name}"))
        save_checkpoint(
            run_dir / "checkpoints" / f"{name}.pt",
            model,
            extra={"selected_epoch": log.selected_epoch, "root_seed": cfg.seed},
        )
        log.write_csv(run_dir / f"trainlog_{name}.csv")
        best = log.entries[log.selected_epoch]
        click.echo(
            f"trained {name}: best validation F1 {best.val_f1:.2f} at epoch {log.selected_epoch}"
        )
    except Exception as e:  # noqa: BLE001
        _fail(run_dir, "train", e)


@main.command()
@config_option
@seed_option
@click.option("--model", "model_name", type=click.Choice(_EVALUATABLE), default=None)
@click.option("--checkpoint", type=click.Path(), default=None, help="Explicit checkpoint path.")
def evaluate(config_path, seed, model_name, checkpoint):
    """Bootstrap precision/recall/F1 on the test split for one model (or 'manual')."""
    run_dir = None
    try:
        overrides = {"seed": seed}
        if model_name not in (None, "manual"):
            overrides["model.name"] = model_name
        cfg, run_dir = _prepare(config_path, overrides)
        name = model_name or cfg.model.name
        rows = read_manifest(cfg.paths.manifest)
        split = _split_from_rows(cfg, rows)
        by_id = {r.id: r for r in rows}
        test_rows = [by_id[i] for i in split.test]
        labels = [r.label.followup_suicidal_act for r in test_rows]
        bootstrap_seed = derive_seed(cfg.seed, "bootstrap")
        note = ""
        if name == "manual":
            policy = cfg.eval.missing_scale_policy
            result, n_missing = evaluation.manual_baseline(
                [r.scale for r in test_rows], labels, policy, cfg.eval.n_bootstrap, bootstrap_seed
            )
            note = f"missing={'excluded' if policy == 'exclude' else 'rated_low'}(n={n_missing})"
        else:
            ckpt = Path(checkpoint) if checkpoint else run_dir / "checkpoints" / f"{name}.pt"
            if not ckpt.exists():
                raise FileNotFoundError(
                    f"checkpoint {ckpt} not found; run 'callrisk train --model {name}' first"
                )
            model = load_checkpoint(ckpt)
            examples = _load_examples_or_fail(cfg, test_rows)
            probs = predict_batch(model, examples, split.test)
            preds = (probs >= cfg.eval.threshold).tolist()
            result = evaluation.evaluate_predictions(preds, labels, cfg.eval.n_bootstrap, bootstrap_seed)
            pred_path = run_dir / "eval" / f"{name}.predictions.csv"
            pred_path.parent.mkdir(parents=True, exist_ok=True)
            lines = ["id,label,risk_prob,pred"]
            for call_id, label, prob, pred in zip(split.test, labels, probs, preds):
                lines.append(f"{call_id},{int(label)},{repr(float(prob))},{int(pred)}")
            pred_path.write_text("\n".join(lines) + "\n")
        row = evaluation.ReportRow(model=name, result=result, note=note)
        metrics_path = run_dir / "eval" / f"{name}.metrics.csv"
        metrics_path.parent.mkdir(parents=True, exist_ok=True)
        metrics_path.write_text(evaluation.report_to_csv(evaluation.CompareReport(rows=(row,))))
        click.echo(f"{name}: f1 {result.f1.format()} (precision {result.precision.format()}, recall {result.recall.format()})")
    except Exception as e:  # noqa: BLE001
        _fail(run_dir, "evaluate", e)


@main.command()
@config_option
@click.option("--run-dir", "run_dir_flag", type=click.Path(), default=None)
def compare(config_path, run_dir_flag):
    """Combine per-model evaluations into the comparison table (CSV + text)."""
    run_dir = None
    try:
        cfg, run_dir = _prepare(config_path, {"paths.run_dir": run_dir_flag})
        eval_dir = run_dir / "eval"
        metric_files = sorted(eval_dir.glob("*.metrics.csv")) if eval_dir.exists() else []
        if not metric_files:
            raise FileNotFoundError(
                f"no evaluation results under {eval_dir}; run 'callrisk evaluate' first"
            )
        results: dict[str, evaluation.MetricResult | None] = {}
        notes: dict[str, str] = {}
        for path in metric_files:
            parsed = evaluation.report_from_csv(path.read_text())
            for row in parsed.rows:
                results[row.model] = row.result
                notes[row.model] = row.note
        report = evaluation.compare_report(
            results,
            metadata={
                "bootstrap": f"n={cfg.eval.n_bootstrap}, seed={derive_seed(cfg.seed, 'bootstrap')}",
                "decision threshold": repr(cfg.eval.threshold),
                "missing scale policy": cfg.eval.missing_scale_policy,
            },
        )
        report = dataclasses.replace(
            report,
            rows=tuple(
                dataclasses.replace(r, note=notes.get(r.model, r.note)) if r.result else r
                for r in report.rows
            ),
        )
        (run_dir / "compare.csv").write_text(evaluation.report_to_csv(report))
        text = evaluation.report_to_text(report)
        (run_dir / "compare.txt").write_text(text)
        click.echo(text, nl=False)
    except Exception as e:  # noqa: BLE001
        _fail(run_dir, "compare", e)


@main.command()
@config_option
@click.option("--call-id", required=True, help="Call to explain.")
@click.option("--k", type=int, default=None, help="How many segments to report.")
@click.option("--model", "model_name", type=click.Choice(MODEL_NAMES), default=None)
@click.option("--checkpoint", type=click.Path(), default=None)
def interpret(config_path, call_id, k, model_name, checkpoint):
    """Report the top-k most attended real segments of one call."""
    run_dir = None
    try:
        overrides = {}
        if model_name:
            overrides["model.name"] = model_name
        cfg, run_dir = _prepare(config_path, overrides)
        name = cfg.model.name
        ckpt = Path(checkpoint) if checkpoint else run_dir / "checkpoints" / f"{name}.pt"
        if not ckpt.exists():
            raise FileNotFoundError(
                f"checkpoint {ckpt} not found; run 'callrisk train --model {name}' first"
            )
        model = load_checkpoint(ckpt)
        try:
            seq = cache_read(cfg.paths.cache_dir, call_id, _expected_extractor_id(cfg))
        except CacheMissError as e:
            raise CacheMissError(f"{e.args[0]}; run 'callrisk extract' first") from e
        report = evaluation.top_k_segments(
            model,
            seq,
            call_id,
            k=k or cfg.eval.top_k,
            chunk_s=cfg.features.chunk_s,
            source=cfg.eval.salience_source,
            encoder_layers=cfg.eval.encoder_layers,
        )
        text = evaluation.render_interpretability(report)
        out_path = run_dir / "interpret" / f"{call_id}.txt"
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(text)
        click.echo(text, nl=False)
    except Exception as e:  # noqa: BLE001
        _fail(run_dir, "interpret", e)


if __name__ == "__main__":
    main()
