"""The export pipeline: corpus in, embedding store out."""

import logging
from dataclasses import dataclass

from .corpus import read_posts
from .encoder import encode_texts, load_encoder, output_dimension
from .errors import ConfigError
from .store import write_store

log = logging.getLogger("embed_export")

# Default checkpoints per encoder family; --checkpoint overrides them.
# The store header always records the checkpoint actually used.
DEFAULT_CHECKPOINTS = {
    "roberta-class": "sentence-transformers/all-distilroberta-v1",
    "minilm-class": "sentence-transformers/paraphrase-multilingual-MiniLM-L12-v2",
}


@dataclass(frozen=True)
class ExportConfig:
    """Everything one export run depends on."""

    corpus_path: str
    output_path: str
    encoder: str = "roberta-class"
    checkpoint: str = None  # explicit model dir or id; overrides encoder
    batch_size: int = 32
    normalize: bool = True

    def __post_init__(self):
        if self.encoder not in DEFAULT_CHECKPOINTS:
            raise ConfigError(
                f"unknown encoder {self.encoder!r}; "
                f"choose from {sorted(DEFAULT_CHECKPOINTS)}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")

    def resolved_checkpoint(self):
        return self.checkpoint or DEFAULT_CHECKPOINTS[self.encoder]


def export(config):
    """Encode every post in the corpus and write the store.

    Returns the number of vectors written. Posts are encoded in sorted
    post-id order (the store's own order), so re-running the same
    configuration reproduces the output byte for byte.
    """
    texts = read_posts(config.corpus_path)
    checkpoint = config.resolved_checkpoint()
    tokenizer, model, limit = load_encoder(checkpoint)
    items = [(pid, texts[pid]) for pid in sorted(texts)]
    vectors = encode_texts(tokenizer, model, limit, items,
                           config.batch_size, config.normalize)
    write_store(config.output_path, checkpoint, output_dimension(model), vectors)
    log.info("wrote %d vectors of width %d to %s (encoder %s)",
             len(vectors), output_dimension(model), config.output_path, checkpoint)
    return len(vectors)
