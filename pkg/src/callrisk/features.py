"""Fixed-window segmentation, per-segment embedding extraction, on-disk cache.

Every call is truncated (or zero-padded) to a fixed observation window and cut
into fixed-length chunks, so downstream models always see the same sequence
shape. A boolean mask separates real audio from tail padding. Extractors plug
in behind a small protocol; the mock extractor is a cheap, deterministic,
linear stand-in for the pre-trained speech model consumed via the adapter.
"""

from __future__ import annotations

import hashlib
import math
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
from scipy.signal import resample_poly

from .data import CallRecording
from .errors import (
    CacheFormatError,
    CacheMissError,
    ExtractionError,
    SampleRateMismatchError,
    StaleCacheError,
)

DEFAULT_CHUNK_S = 30.0
DEFAULT_WINDOW_S = 1800.0


@dataclass(frozen=True)
class SegmentSequence:
    """Fixed-length chunk matrix with a prefix-true real-audio mask."""

    segments: np.ndarray  # (L, chunk_samples) float32
    mask: np.ndarray      # (L,) bool
    chunk_s: float
    window_s: float
    sample_rate: int

    def __post_init__(self):
        if self.segments.ndim != 2:
            raise ValueError(f"segments must be 2-D, got shape {self.segments.shape}")
        if self.mask.shape != (self.segments.shape[0],):
            raise ValueError("mask length must equal the number of segments")

    def __len__(self):
        return self.segments.shape[0]

    @property
    def n_real(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class SegmentEmbeddingSequence:
    """One embedding row per segment; padded rows are exactly zero."""

    embeddings: np.ndarray  # (L, d) float32
    mask: np.ndarray        # (L,) bool
    extractor_id: str

    def __post_init__(self):
        if self.embeddings.ndim != 2:
            raise ValueError(f"embeddings must be 2-D, got shape {self.embeddings.shape}")
        if self.mask.shape != (self.embeddings.shape[0],):
            raise ValueError("mask length must equal the number of rows")
        if not np.isfinite(self.embeddings).all():
            raise ValueError("embeddings contain non-finite values")
        if self.embeddings[~self.mask].any():
            raise ValueError("masked-out rows must be zero")

    @property
    def dim(self) -> int:
        return int(self.embeddings.shape[1])

    def __len__(self):
        return self.embeddings.shape[0]


def segment_waveform(
    waveform: np.ndarray,
    sample_rate: int,
    chunk_s: float = DEFAULT_CHUNK_S,
    window_s: float = DEFAULT_WINDOW_S,
) -> SegmentSequence:
    """Truncate at window_s, pad to window_s, and cut into chunk_s windows.

    A trailing partial chunk of real audio is zero-extended within its chunk
    and still counts as real (mask true).
    """
    if waveform.ndim != 1 or waveform.size == 0:
        raise ValueError("waveform must be non-empty mono audio")
    if chunk_s <= 0:
        raise ValueError("chunk_s must be positive")
    n_chunks_f = window_s / chunk_s
    n_chunks = int(round(n_chunks_f))
    if n_chunks <= 0 or abs(n_chunks_f - n_chunks) > 1e-9:
        raise ValueError(f"window_s must be a positive multiple of chunk_s, got {window_s}/{chunk_s}")
    chunk_samples_f = chunk_s * sample_rate
    chunk_samples = int(round(chunk_samples_f))
    if abs(chunk_samples_f - chunk_samples) > 1e-6:
        raise ValueError(f"chunk_s*sample_rate must be integral, got {chunk_samples_f}")

    clipped = waveform[: n_chunks * chunk_samples]
    n_real = math.ceil(clipped.size / chunk_samples)
    segments = np.zeros((n_chunks, chunk_samples), dtype=np.float32)
    flat = segments.reshape(-1)
    flat[: clipped.size] = clipped
    mask = np.zeros(n_chunks, dtype=bool)
    mask[:n_real] = True
    return SegmentSequence(segments, mask, float(chunk_s), float(window_s), int(sample_rate))


def segment_audio(
    rec: CallRecording,
    chunk_s: float = DEFAULT_CHUNK_S,
    window_s: float = DEFAULT_WINDOW_S,
) -> SegmentSequence:
    return segment_waveform(rec.waveform, rec.sample_rate, chunk_s, window_s)


def resample(waveform: np.ndarray, orig_rate: int, target_rate: int) -> np.ndarray:
    if orig_rate == target_rate:
        return waveform.astype(np.float32, copy=False)
    g = math.gcd(orig_rate, target_rate)
    out = resample_poly(waveform.astype(np.float64), target_rate // g, orig_rate // g)
    return out.astype(np.float32)


@runtime_checkable
class Extractor(Protocol):
    """Maps one fixed-length audio chunk to a d-dimensional embedding."""

    extractor_id: str
    dim: int
    sample_rate: int | None  # None: accepts any rate

    def extract(self, chunk: np.ndarray) -> np.ndarray: ...


class MockExtractor:
    """Deterministic linear test double for the pre-trained speech extractor.

    Features per chunk: the overall mean, means of equal sub-windows, and
    correlations against fixed cosine templates over normalized time. All are
    linear in the chunk, so a planted additive signature moves every embedding
    along one fixed direction, an all-zero chunk maps to the zero vector, and
    the output is independent of chunk position and sample rate.
    """

    sample_rate = None

    def __init__(self, dim: int = 32, n_subwindows: int = 16, n_templates: int = 16):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.n_subwindows = n_subwindows
        self.n_templates = n_templates
        self.extractor_id = f"mock-v1-d{dim}"
        n_features = 1 + n_subwindows + n_templates
        digest = hashlib.sha256(
            f"{self.extractor_id}:{n_subwindows}:{n_templates}".encode()
        ).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        self._projection = (
            rng.standard_normal((dim, n_features)) / math.sqrt(n_features)
        ).astype(np.float64)
        self._frequencies = rng.uniform(1.0, 40.0, n_templates)
        self._phases = rng.uniform(0.0, 2 * math.pi, n_templates)

    def extract(self, chunk: np.ndarray) -> np.ndarray:
        x = np.asarray(chunk, dtype=np.float64)
        if x.ndim != 1 or x.size == 0:
            raise ValueError("chunk must be non-empty mono audio")
        n = x.size
        t = (np.arange(n) + 0.5) / n
        bounds = np.linspace(0, n, self.n_subwindows + 1).astype(int)
        sub_means = np.array(
            [x[a:b].mean() if b > a else 0.0 for a, b in zip(bounds[:-1], bounds[1:])]
        )
        templates = np.cos(2 * math.pi * self._frequencies[:, None] * t[None, :] + self._phases[:, None])
        correlations = templates @ x / n
        features = np.concatenate(([x.mean()], sub_means, correlations))
        return (self._projection @ features).astype(np.float32)


WHISPER_PATH_ENV = "CALLRISK_WHISPER_PATH"


class WhisperExtractor:
    """Adapter around the pre-trained Whisper encoder used as feature extractor.

    Loads the encoder (large-v2 by default, 1280-dim) through `transformers`,
    feeds it one 30-second chunk at 16 kHz, and mean-pools the final layer's
    per-frame outputs into a single embedding. Weights location can be
    overridden with the CALLRISK_WHISPER_PATH environment variable.
    """

    sample_rate = 16000
    dim = 1280

    def __init__(self, model_path: str | None = None, device: str = "cpu"):
        import torch  # local import: heavyweight path only
        from transformers import WhisperFeatureExtractor, WhisperModel

        path = model_path or os.environ.get(WHISPER_PATH_ENV, "openai/whisper-large-v2")
        self.extractor_id = f"whisper:{Path(path).name}"
        self._torch = torch
        self._device = device
        self._frontend = WhisperFeatureExtractor.from_pretrained(path)
        self._encoder = WhisperModel.from_pretrained(path).encoder.to(device).eval()
        self.dim = int(self._encoder.config.d_model)

    def extract(self, chunk: np.ndarray) -> np.ndarray:
        inputs = self._frontend(
            chunk.astype(np.float32), sampling_rate=self.sample_rate, return_tensors="pt"
        ).input_features.to(self._device)
        with self._torch.no_grad():
            frames = self._encoder(inputs).last_hidden_state  # (1, frames, d)
        return frames.mean(dim=1).squeeze(0).cpu().numpy().astype(np.float32)


def extract_embeddings(seq: SegmentSequence, extractor: Extractor) -> SegmentEmbeddingSequence:
    """One embedding per chunk; padded chunks skip extraction and stay zero."""
    if extractor.sample_rate is not None and seq.sample_rate != extractor.sample_rate:
        raise SampleRateMismatchError(
            f"extractor '{extractor.extractor_id}' requires {extractor.sample_rate} Hz, "
            f"segments are at {seq.sample_rate} Hz (resample first)"
        )
    out = np.zeros((len(seq), extractor.dim), dtype=np.float32)
    for i in range(len(seq)):
        if not seq.mask[i]:
            continue
        try:
            row = np.asarray(extractor.extract(seq.segments[i]), dtype=np.float32)
        except Exception as e:
            raise ExtractionError(f"extractor failed on chunk {i}: {e}", chunk_index=i) from e
        if row.shape != (extractor.dim,):
            raise ExtractionError(
                f"extractor returned shape {row.shape} for chunk {i}, expected ({extractor.dim},)",
                chunk_index=i,
            )
        if not np.isfinite(row).all():
            raise ExtractionError(f"extractor returned non-finite values for chunk {i}", chunk_index=i)
        out[i] = row
    return SegmentEmbeddingSequence(out, seq.mask.copy(), extractor.extractor_id)


# --- embedding cache --------------------------------------------------------
#
# One binary file per call id, little-endian:
#   magic "SEMB" | version u32 | L u32 | d u32 | id_len u32 | extractor_id utf8
#   | crc32 u32 of payload | L*d float32 row-major | L mask bytes
# Writers go through a temp file + atomic rename, so concurrent readers never
# observe a partial file.

_CACHE_MAGIC = b"SEMB"
_CACHE_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


def _cache_file(cache_dir: str | Path, call_id: str) -> Path:
    if not call_id or any(c in call_id for c in "/\\\0") or call_id in (".", ".."):
        raise ValueError(f"call id not usable as a filename: {call_id!r}")
    return Path(cache_dir) / f"{call_id}.emb"


def cache_write(cache_dir: str | Path, call_id: str, emb: SegmentEmbeddingSequence) -> Path:
    path = _cache_file(cache_dir, call_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    ext_id = emb.extractor_id.encode("utf-8")
    payload = emb.embeddings.astype("<f4").tobytes() + emb.mask.astype(np.uint8).tobytes()
    header = _HEADER.pack(_CACHE_MAGIC, _CACHE_VERSION, len(emb), emb.dim, len(ext_id))
    blob = header + ext_id + struct.pack("<I", zlib.crc32(payload)) + payload
    tmp = path.with_name(f".{path.name}.tmp.{os.getpid()}")
    tmp.write_bytes(blob)
    os.replace(tmp, path)
    return path


def cache_read(
    cache_dir: str | Path, call_id: str, expect_extractor_id: str | None = None
) -> SegmentEmbeddingSequence:
    path = _cache_file(cache_dir, call_id)
    if not path.exists():
        raise CacheMissError(f"no cached embeddings for id {call_id!r} in {cache_dir}")
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise CacheFormatError(f"cache file {path} is truncated")
    magic, version, length, dim, id_len = _HEADER.unpack_from(blob, 0)
    if magic != _CACHE_MAGIC:
        raise CacheFormatError(f"cache file {path} has wrong magic {magic!r}")
    if version != _CACHE_VERSION:
        raise CacheFormatError(f"cache file {path} has unsupported version {version}")
    offset = _HEADER.size
    try:
        ext_id = blob[offset : offset + id_len].decode("utf-8")
        offset += id_len
        (crc_stored,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        payload = blob[offset:]
        expected_len = length * dim * 4 + length
        if len(payload) != expected_len:
            raise CacheFormatError(f"cache file {path} payload is {len(payload)} bytes, expected {expected_len}")
    except (struct.error, UnicodeDecodeError) as e:
        raise CacheFormatError(f"cache file {path} header is corrupt: {e}") from e
    if zlib.crc32(payload) != crc_stored:
        raise CacheFormatError(f"cache file {path} failed its checksum")
    if expect_extractor_id is not None and ext_id != expect_extractor_id:
        raise StaleCacheError(
            f"cache for id {call_id!r} was written by extractor {ext_id!r}, "
            f"expected {expect_extractor_id!r}; re-run extraction"
        )
    floats = np.frombuffer(payload[: length * dim * 4], dtype="<f4").reshape(length, dim).copy()
    mask = np.frombuffer(payload[length * dim * 4 :], dtype=np.uint8).astype(bool)
    return SegmentEmbeddingSequence(floats, mask, ext_id)


def write_cache_index(cache_dir: str | Path, entries: list[tuple[str, str, int, int]]) -> Path:
    """Manifest index: one line per cached id (id, extractor_id, L, d)."""
    import csv

    path = Path(cache_dir) / "index.csv"
    tmp = path.with_name(f".{path.name}.tmp.{os.getpid()}")
    with open(tmp, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "extractor_id", "n_segments", "dim"])
        for row in sorted(entries):
            writer.writerow(row)
    os.replace(tmp, path)
    return path
