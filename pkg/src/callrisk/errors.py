"""Exception types shared across the package."""


class ScaleValidationError(ValueError):
    """An assessment element score is outside its allowed value set."""


class UnratableScaleError(ValueError):
    """Manual risk rating was requested for a missing aggregate score."""


class SampleRateMismatchError(ValueError):
    """Audio sample rate does not match what the extractor requires."""


class ExtractionError(RuntimeError):
    """Embedding extraction failed for one chunk."""

    def __init__(self, message: str, chunk_index: int | None = None):
        super().__init__(message)
        self.chunk_index = chunk_index


class CacheMissError(KeyError):
    """No cached embeddings exist for the requested call id."""


class StaleCacheError(RuntimeError):
    """Cached embeddings were produced by a different extractor."""


class CacheFormatError(RuntimeError):
    """Cache file is corrupt or not in the expected binary format."""


class CheckpointError(RuntimeError):
    """Checkpoint file is unreadable, the wrong version, or shape-incompatible."""


class ConfigError(ValueError):
    """Run configuration is malformed or contains unknown keys."""


class NonFiniteError(FloatingPointError):
    """A forward pass or loss produced NaN/inf."""


class ModelNotImplementedError(NotImplementedError):
    """The model name is recognized but deliberately not implemented."""


class SalienceUnavailableError(ValueError):
    """The model exposes no attention weights to rank segments with."""
