"""Shared fixtures: a tiny offline encoder and corpus builders.

The encoder is a one-layer BERT with a 40-word vocabulary and a
16-token length limit, built with a fixed seed and saved to a session
temp directory. It is small enough to run the whole suite in seconds
and needs no network or model cache.
"""

import json

import pytest
import torch
from transformers import BertConfig, BertModel, BertTokenizer

VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "the", "a", "and", "of", "to", "in", "on", "is", "was",
    "user", "post", "text", "set", "signal", "noise", "risk",
    "early", "model", "train", "score", "day", "night", "good",
    "bad", "happy", "sad", "alone", "help", "sleep", "work",
    "friend", "time", "word", "##s", "##ing",
]

TOKEN_LIMIT = 16
HIDDEN = 16


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("tiny-encoder")
    vocab_file = path / "vocab.txt"
    vocab_file.write_text("\n".join(VOCAB) + "\n", encoding="utf-8")
    tokenizer = BertTokenizer(str(vocab_file), model_max_length=TOKEN_LIMIT)
    tokenizer.save_pretrained(str(path))
    torch.manual_seed(1234)
    config = BertConfig(
        vocab_size=len(VOCAB), hidden_size=HIDDEN, num_hidden_layers=1,
        num_attention_heads=2, intermediate_size=32,
        max_position_embeddings=TOKEN_LIMIT, pad_token_id=0)
    model = BertModel(config)
    model.save_pretrained(str(path))
    return str(path)


def write_corpus(path, users):
    """users: list of (user_id, label, [(post_id, timestamp, text-or-None)])."""
    with open(path, "w", encoding="utf-8") as f:
        for user_id, label, posts in users:
            rendered = []
            for post_id, timestamp, text in posts:
                d = {"post_id": post_id, "timestamp": timestamp}
                if text is not None:
                    d["text"] = text
                rendered.append(d)
            rec = {"user_id": user_id, "label": label, "posts": rendered}
            f.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
    return str(path)


@pytest.fixture
def small_corpus(tmp_path):
    users = [
        ("u-alpha", "positive", [
            ("p-001", 1, "the user post about risk and sleep"),
            ("p-002", 2, "a happy day with a friend"),
        ]),
        ("u-beta", "negative", [
            ("p-003", 1, "work work work"),
            ("p-004", 2, "good night"),
            ("p-005", 3, ""),
        ]),
    ]
    return write_corpus(tmp_path / "corpus.jsonl", users)
