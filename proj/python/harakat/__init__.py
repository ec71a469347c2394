"""Arabic diacritic restoration with optional speech input."""

from ._core import (
    LABELS,
    ConfigError,
    DataError,
    Diacritizer,
    DivergenceError,
    HarakatError,
    MalformedInputError,
    NormalizationError,
    ShapeError,
    apply,
    cer,
    downsample_speech,
    gradcheck,
    levenshtein,
    log_mel,
    normalize,
    strip,
    synth_corpus,
    wer,
)

__all__ = [
    "LABELS",
    "ConfigError",
    "DataError",
    "Diacritizer",
    "DivergenceError",
    "HarakatError",
    "MalformedInputError",
    "NormalizationError",
    "ShapeError",
    "apply",
    "cer",
    "downsample_speech",
    "gradcheck",
    "levenshtein",
    "log_mel",
    "normalize",
    "strip",
    "synth_corpus",
    "wer",
]
