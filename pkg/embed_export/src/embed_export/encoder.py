"""Frozen sentence encoding on top of a pretrained transformer.

A sentence vector is the attention-mask-weighted mean of the encoder's
last hidden states, optionally L2-normalized: the standard sentence-
encoder pooling. The model runs in eval mode under no_grad, so weights
are never touched and repeated runs of the same configuration produce
identical bytes.
"""

import logging

import numpy as np
import torch

from .errors import EncoderError

log = logging.getLogger("embed_export")

# Tokenizers report this sentinel when no length limit was configured.
_UNSET_LIMIT = 1_000_000


def load_encoder(checkpoint):
    """Load tokenizer and model, returning (tokenizer, model, token limit).

    A checkpoint that cannot be resolved locally (or from the cache)
    raises EncoderError with the remedy spelled out instead of a bare
    framework traceback.
    """
    from transformers import AutoModel, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(checkpoint)
        model = AutoModel.from_pretrained(checkpoint)
    except (OSError, ValueError) as e:
        raise EncoderError(
            f"encoder checkpoint {checkpoint!r} could not be loaded: {e}. "
            "Pass --checkpoint with a local model directory, or a model id "
            "that is already present in the local cache.") from None
    model.eval()
    limit = getattr(tokenizer, "model_max_length", None)
    if not isinstance(limit, int) or limit <= 0 or limit > _UNSET_LIMIT:
        limit = int(model.config.max_position_embeddings)
    return tokenizer, model, limit


def output_dimension(model):
    """Native width of the encoder's sentence vectors."""
    return int(model.config.hidden_size)


def encode_texts(tokenizer, model, limit, items, batch_size, normalize):
    """Encode (post_id, text) pairs into {post_id: float32 vector}.

    Texts longer than the encoder limit are truncated to it, with one
    warning per affected post. Items are processed in the given order
    in fixed-size batches, so the padding geometry (and therefore the
    exact float output) is a pure function of the inputs.
    """
    vectors = {}
    truncated = 0
    for start in range(0, len(items), batch_size):
        batch = items[start:start + batch_size]
        texts = [text for _, text in batch]
        enc = tokenizer(texts, padding=True, truncation=True,
                        max_length=limit, return_tensors="pt")
        lengths = enc["attention_mask"].sum(dim=1)
        for i, (pid, text) in enumerate(batch):
            if int(lengths[i]) == limit:
                probe = tokenizer(text, truncation=True, max_length=limit + 1)
                if len(probe["input_ids"]) > limit:
                    truncated += 1
                    log.warning("post %s exceeds the %d-token encoder limit; truncated",
                                pid, limit)
        with torch.no_grad():
            out = model(**enc)
        mask = enc["attention_mask"].unsqueeze(-1).to(out.last_hidden_state.dtype)
        summed = (out.last_hidden_state * mask).sum(dim=1)
        counts = mask.sum(dim=1).clamp(min=1e-9)
        emb = summed / counts
        if normalize:
            emb = torch.nn.functional.normalize(emb, p=2, dim=1)
        arr = emb.cpu().numpy().astype(np.float32, copy=False)
        for i, (pid, _) in enumerate(batch):
            vectors[pid] = arr[i]
    if truncated:
        log.warning("%d of %d posts were longer than the encoder limit", truncated, len(items))
    return vectors
