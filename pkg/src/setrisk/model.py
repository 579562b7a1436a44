"""Permutation-invariant set encoder with a binary classification head.

A user is a set of post embeddings. Each encoder layer applies
multi-head self-attention over the set (no positional information, so
row order carries no signal), followed by a position-wise feed-forward
block; both sublayers use residual connections and post-layer-norm.
Mean pooling over the set rows yields one user vector, and a linear
head produces the positive-class logit.
"""

import math
from collections import OrderedDict

import numpy as np
from scipy.special import expit

from .errors import ConfigError, ShapeError
from .rng import stream
from .serialize import read_container, write_container
from .tensor import Tensor

# Keeps predict_user inside the open interval (0, 1) at saturating logits.
_PROB_MARGIN = 1e-12


class ModelConfig:
    """Encoder hyperparameters; d_ff defaults to 4 * d_model."""

    FIELDS = ("input_dim", "d_model", "n_layers", "n_heads", "d_ff",
              "dropout_rate", "layer_norm_eps")

    def __init__(self, input_dim, d_model=256, n_layers=4, n_heads=8,
                 d_ff=None, dropout_rate=0.1, layer_norm_eps=1e-5):
        self.input_dim = int(input_dim)
        self.d_model = int(d_model)
        self.n_layers = int(n_layers)
        self.n_heads = int(n_heads)
        self.d_ff = int(d_ff) if d_ff is not None else 4 * self.d_model
        self.dropout_rate = float(dropout_rate)
        self.layer_norm_eps = float(layer_norm_eps)
        self._validate()

    def _validate(self):
        if self.input_dim < 1 or self.d_model < 1 or self.d_ff < 1:
            raise ConfigError("model widths must be positive")
        if self.n_layers < 1 or self.n_heads < 1:
            raise ConfigError("n_layers and n_heads must be at least 1")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.layer_norm_eps <= 0.0:
            raise ConfigError("layer_norm_eps must be positive")

    @property
    def d_k(self):
        return self.d_model // self.n_heads

    def to_dict(self):
        return {k: getattr(self, k) for k in self.FIELDS}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.FIELDS if k in d})

    def __eq__(self, other):
        return isinstance(other, ModelConfig) and self.to_dict() == other.to_dict()

    def __repr__(self):
        inner = ", ".join(f"{k}={getattr(self, k)}" for k in self.FIELDS)
        return f"ModelConfig({inner})"


class TextSet:
    """One model input: a user's post ids and their embedding rows."""

    __slots__ = ("user_id", "post_ids", "embeddings")

    def __init__(self, user_id, post_ids, embeddings):
        emb = np.asarray(embeddings, dtype=np.float64)
        post_ids = tuple(post_ids)
        if emb.ndim != 2:
            raise ShapeError(f"TextSet embeddings must be 2-D, got shape {emb.shape}")
        if len(post_ids) == 0:
            raise ShapeError("TextSet needs at least one post")
        if emb.shape[0] != len(post_ids):
            raise ShapeError(
                f"TextSet has {len(post_ids)} post ids but {emb.shape[0]} embedding rows")
        self.user_id = user_id
        self.post_ids = post_ids
        self.embeddings = emb

    @property
    def size(self):
        return len(self.post_ids)


def _param_shapes(cfg):
    """Named parameter shapes in canonical (checkpoint) order."""
    shapes = OrderedDict()
    shapes["input_proj.w"] = (cfg.input_dim, cfg.d_model)
    shapes["input_proj.b"] = (cfg.d_model,)
    for i in range(cfg.n_layers):
        p = f"layers.{i}"
        for name in ("wq", "wk", "wv", "wo"):
            shapes[f"{p}.attn.{name}"] = (cfg.d_model, cfg.d_model)
        for name in ("bq", "bk", "bv", "bo"):
            shapes[f"{p}.attn.{name}"] = (cfg.d_model,)
        shapes[f"{p}.ln1.gamma"] = (cfg.d_model,)
        shapes[f"{p}.ln1.beta"] = (cfg.d_model,)
        shapes[f"{p}.ff.w1"] = (cfg.d_model, cfg.d_ff)
        shapes[f"{p}.ff.b1"] = (cfg.d_ff,)
        shapes[f"{p}.ff.w2"] = (cfg.d_ff, cfg.d_model)
        shapes[f"{p}.ff.b2"] = (cfg.d_model,)
        shapes[f"{p}.ln2.gamma"] = (cfg.d_model,)
        shapes[f"{p}.ln2.beta"] = (cfg.d_model,)
    shapes["head.w"] = (cfg.d_model, 1)
    shapes["head.b"] = (1,)
    return shapes


class ModelParams:
    """Named float64 parameter arrays in canonical order."""

    def __init__(self, arrays):
        self.arrays = OrderedDict(arrays)

    @classmethod
    def initialize(cls, cfg, seed):
        """Xavier-uniform weights, zero biases, identity layer norms.

        Each parameter draws from its own named stream, so the values do
        not depend on initialization order.
        """
        arrays = OrderedDict()
        for name, shape in _param_shapes(cfg).items():
            leaf = name.rsplit(".", 1)[-1]
            if leaf.startswith("w"):
                fan_in, fan_out = shape
                limit = math.sqrt(6.0 / (fan_in + fan_out))
                arrays[name] = stream(seed, "init", name).uniform(-limit, limit, size=shape)
            elif leaf == "gamma":
                arrays[name] = np.ones(shape)
            else:
                arrays[name] = np.zeros(shape)
        return cls(arrays)

    def tensors(self, requires_grad=False):
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.arrays.items()}

    def copy(self):
        return ModelParams(OrderedDict((k, v.copy()) for k, v in self.arrays.items()))

    def param_count(self):
        return sum(v.size for v in self.arrays.values())

    def __getitem__(self, name):
        return self.arrays[name]

    def names(self):
        return list(self.arrays.keys())


def multi_head_self_attention(x, weights, cfg):
    """Scaled dot-product self-attention over set rows.

    ``x`` is a [K, d_model] Tensor; ``weights`` maps wq/bq/wk/bk/wv/bv/
    wo/bo to Tensors. Heads are computed in one [h, K, d_k] batch and
    merged back to [K, d_model] before the output projection.
    """
    k_rows = x.shape[0]
    h, d_k, d = cfg.n_heads, cfg.d_k, cfg.d_model
    q = (x @ weights["wq"] + weights["bq"]).reshape((k_rows, h, d_k)).transpose((1, 0, 2))
    k = (x @ weights["wk"] + weights["bk"]).reshape((k_rows, h, d_k)).transpose((1, 0, 2))
    v = (x @ weights["wv"] + weights["bv"]).reshape((k_rows, h, d_k)).transpose((1, 0, 2))
    scores = q @ k.transpose((0, 2, 1))
    attn = scores.softmax_rows(scale=1.0 / math.sqrt(d_k))
    ctx = (attn @ v).transpose((1, 0, 2)).reshape((k_rows, d))
    return ctx @ weights["wo"] + weights["bo"]


def _layer_weights(pt, i):
    p = f"layers.{i}.attn"
    return {name: pt[f"{p}.{name}"] for name in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")}


def set_logit(x, pt, cfg, mode="eval", rng=None):
    """Positive-class logit for one embedded set.

    ``x`` is a [K, input_dim] Tensor, ``pt`` a name -> Tensor mapping.
    ``mode`` "train" applies dropout (requires ``rng``); "eval" is
    deterministic.
    """
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ConfigError(
            f"embedding width mismatch: input shape {x.shape} vs input_dim={cfg.input_dim}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    drop = cfg.dropout_rate if mode == "train" else 0.0
    if drop > 0.0 and rng is None:
        raise ConfigError("train mode with dropout needs an rng")
    h = x @ pt["input_proj.w"] + pt["input_proj.b"]
    for i in range(cfg.n_layers):
        p = f"layers.{i}"
        attn_out = multi_head_self_attention(h, _layer_weights(pt, i), cfg)
        if drop > 0.0:
            attn_out = attn_out.dropout(drop, rng)
        h = (h + attn_out).layer_norm(pt[f"{p}.ln1.gamma"], pt[f"{p}.ln1.beta"],
                                      eps=cfg.layer_norm_eps)
        ff = ((h @ pt[f"{p}.ff.w1"] + pt[f"{p}.ff.b1"]).relu()
              @ pt[f"{p}.ff.w2"] + pt[f"{p}.ff.b2"])
        if drop > 0.0:
            ff = ff.dropout(drop, rng)
        h = (h + ff).layer_norm(pt[f"{p}.ln2.gamma"], pt[f"{p}.ln2.beta"],
                                eps=cfg.layer_norm_eps)
    pooled = h.mean(axis=0)
    logit = (pooled.reshape((1, cfg.d_model)) @ pt["head.w"] + pt["head.b"]).reshape(())
    return logit


def encode_set(ts, params, cfg):
    """Pooled [d_model] representation of a TextSet (eval mode)."""
    pt = params.tensors(requires_grad=False)
    x = Tensor(ts.embeddings)
    if x.shape[1] != cfg.input_dim:
        raise ConfigError(
            f"embedding width mismatch: input shape {x.shape} vs input_dim={cfg.input_dim}")
    h = x @ pt["input_proj.w"] + pt["input_proj.b"]
    for i in range(cfg.n_layers):
        p = f"layers.{i}"
        attn_out = multi_head_self_attention(h, _layer_weights(pt, i), cfg)
        h = (h + attn_out).layer_norm(pt[f"{p}.ln1.gamma"], pt[f"{p}.ln1.beta"],
                                      eps=cfg.layer_norm_eps)
        ff = ((h @ pt[f"{p}.ff.w1"] + pt[f"{p}.ff.b1"]).relu()
              @ pt[f"{p}.ff.w2"] + pt[f"{p}.ff.b2"])
        h = (h + ff).layer_norm(pt[f"{p}.ln2.gamma"], pt[f"{p}.ln2.beta"],
                                eps=cfg.layer_norm_eps)
    return h.mean(axis=0)


def predict_user(ts, params, cfg):
    """Probability that the set's user is positive, strictly in (0, 1)."""
    pt = params.tensors(requires_grad=False)
    logit = set_logit(Tensor(ts.embeddings), pt, cfg, mode="eval")
    p = float(expit(logit.data))
    return min(max(p, _PROB_MARGIN), 1.0 - _PROB_MARGIN)


class SetModel:
    """Config + parameters bundled behind a scoring interface."""

    def __init__(self, params, cfg):
        self.params = params
        self.cfg = cfg

    def predict(self, ts):
        return predict_user(ts, self.params, self.cfg)

    def save(self, path, extra=None):
        save_checkpoint(path, self.cfg, self.params, extra=extra)

    @classmethod
    def load(cls, path):
        cfg, params, _ = load_checkpoint(path)
        return cls(params, cfg)


def save_checkpoint(path, cfg, params, extra=None):
    """Write config + named parameter arrays; round trips bit-exactly."""
    header = {"kind": "model-checkpoint", "model_config": cfg.to_dict(),
              "extra": extra or {}}
    write_container(path, header, params.arrays)


def load_checkpoint(path):
    """Read a checkpoint back as (ModelConfig, ModelParams, extra dict)."""
    header, arrays = read_container(path)
    if header.get("kind") != "model-checkpoint":
        raise ConfigError(f"{path}: not a model checkpoint (kind={header.get('kind')!r})")
    cfg = ModelConfig.from_dict(header["model_config"])
    expected = _param_shapes(cfg)
    if list(arrays.keys()) != list(expected.keys()):
        raise ConfigError(f"{path}: parameter names do not match the stored config")
    for name, shape in expected.items():
        if arrays[name].shape != shape:
            raise ConfigError(
                f"{path}: parameter {name} has shape {arrays[name].shape}, expected {shape}")
    return cfg, ModelParams(arrays), header.get("extra", {})
