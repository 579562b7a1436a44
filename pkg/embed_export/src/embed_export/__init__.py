"""Offline sentence-embedding exporter.

Reads a JSONL post corpus, encodes every post with a frozen pretrained
sentence encoder (mean-pooled hidden states, optionally L2-normalized),
and writes the vectors in the binary embedding-store format that the
classification pipeline consumes. The two packages share only that file
format; nothing here imports the classifier.
"""

from .errors import ConfigError, DataError, EncoderError, ExportError
from .export import DEFAULT_CHECKPOINTS, ExportConfig, export

__all__ = [
    "DEFAULT_CHECKPOINTS",
    "ConfigError",
    "DataError",
    "EncoderError",
    "ExportConfig",
    "ExportError",
    "export",
]
