"""Training loop for the set encoder.

Each user contributes one sampled text-set per epoch (resampled every
epoch, which doubles as augmentation). Users are processed one at a
time with gradient accumulation over an effective batch: leaf grads sum
across the window and the optimizer consumes their mean. The loss is
class-weighted BCE computed from logits in the stable softplus form,
optimized by AdamW under a triangular cyclical learning rate.

Every random choice draws from a stream keyed by (seed, purpose, epoch,
user), so resuming from a saved state reproduces the uninterrupted run
bit for bit.
"""

import json
import math
import os
from collections import OrderedDict

import numpy as np

from .errors import ConfigError, DataError, NumericalError
from .metrics import precision_recall_f1
from .model import ModelConfig, ModelParams, TextSet, predict_user, set_logit
from .rng import stream
from .serialize import read_container, write_container
from .tensor import Tensor


class TrainConfig:
    """Optimization hyperparameters."""

    FIELDS = ("k_posts", "epochs", "effective_batch_size", "lr_min", "lr_max",
              "cycle_epochs", "weight_decay", "val_fraction", "seed",
              "class_weight_pos", "class_weight_neg")

    def __init__(self, k_posts, epochs=120, effective_batch_size=128,
                 lr_min=1e-5, lr_max=1e-4, cycle_epochs=6, weight_decay=0.01,
                 val_fraction=0.2, seed=0, class_weight_pos=None,
                 class_weight_neg=None):
        self.k_posts = int(k_posts)
        self.epochs = int(epochs)
        self.effective_batch_size = int(effective_batch_size)
        self.lr_min = float(lr_min)
        self.lr_max = float(lr_max)
        self.cycle_epochs = int(cycle_epochs)
        self.weight_decay = float(weight_decay)
        self.val_fraction = float(val_fraction)
        self.seed = int(seed)
        self.class_weight_pos = None if class_weight_pos is None else float(class_weight_pos)
        self.class_weight_neg = None if class_weight_neg is None else float(class_weight_neg)
        self._validate()

    def _validate(self):
        if self.k_posts < 1:
            raise ConfigError("k_posts must be at least 1")
        if self.epochs < 1 or self.effective_batch_size < 1 or self.cycle_epochs < 1:
            raise ConfigError("epochs, effective_batch_size, cycle_epochs must be positive")
        if not 0.0 < self.lr_min <= self.lr_max:
            raise ConfigError(f"need 0 < lr_min <= lr_max, got {self.lr_min}, {self.lr_max}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in [0, 1)")
        if self.weight_decay < 0.0:
            raise ConfigError("weight_decay must be non-negative")
        if (self.class_weight_pos is None) != (self.class_weight_neg is None):
            raise ConfigError("class weights must be overridden together or not at all")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.FIELDS}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.FIELDS if k in d})


def sample_text_set(user, store, k, rng):
    """One model input for a user: K posts sampled without replacement
    (chronological order preserved), or all posts when fewer than K."""
    n = len(user.posts)
    if n == 0:
        raise DataError(f"user {user.user_id} has no posts")
    if n > k:
        idx = np.sort(rng.choice(n, size=k, replace=False))
        posts = [user.posts[i] for i in idx]
    else:
        posts = user.posts
    pids = [p.post_id for p in posts]
    return TextSet(user.user_id, pids, store.matrix(pids))


def class_weights(n_pos, n_neg):
    """Balanced weights w_c = (n_pos + n_neg) / (2 * n_c)."""
    if n_pos < 1 or n_neg < 1:
        raise ConfigError(f"both classes need users, got n_pos={n_pos}, n_neg={n_neg}")
    total = n_pos + n_neg
    return total / (2.0 * n_pos), total / (2.0 * n_neg)


def cyclical_lr(step, steps_per_epoch, cfg):
    """Triangular wave from lr_min to lr_max and back over cycle_epochs."""
    if step < 0 or steps_per_epoch < 1:
        raise ConfigError(f"invalid step={step} or steps_per_epoch={steps_per_epoch}")
    cycle = cfg.cycle_epochs * steps_per_epoch
    half = cycle / 2.0
    pos = step % cycle
    frac = pos / half if pos <= half else (cycle - pos) / half
    return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * frac


def weighted_bce_from_logit(logit, target, weight=1.0):
    """w * (softplus(z) - y*z): BCE from logits in log-sum-exp form."""
    if target not in (0, 1, 0.0, 1.0):
        raise ConfigError(f"target must be 0 or 1, got {target}")
    loss = logit.softplus() - logit * float(target)
    return loss * float(weight) if weight != 1.0 else loss


class OptimizerState:
    """AdamW moments plus the completed-step counter."""

    def __init__(self, m, v, step=0):
        self.m = m
        self.v = v
        self.step = int(step)

    @classmethod
    def zeros(cls, params):
        return cls(m=OrderedDict((k, np.zeros_like(a)) for k, a in params.arrays.items()),
                   v=OrderedDict((k, np.zeros_like(a)) for k, a in params.arrays.items()))


def adamw_step(params, grads, state, lr, weight_decay=0.0,
               betas=(0.9, 0.999), eps=1e-8):
    """One decoupled-weight-decay Adam update, in place on ``params``."""
    b1, b2 = betas
    state.step += 1
    t = state.step
    for name, arr in params.arrays.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"gradient for parameter {name!r} is not finite")
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        arr -= lr * mhat / (np.sqrt(vhat) + eps)
        if weight_decay:
            arr -= lr * weight_decay * arr


def stratified_split(users, val_fraction, seed):
    """Per-class shuffled split into (train, val), seeded and stable
    against corpus order."""
    by_label = {"positive": [], "negative": []}
    for u in sorted(users, key=lambda u: u.user_id):
        if u.label not in by_label:
            raise DataError(f"user {u.user_id} has unusable label {u.label!r} for training")
        by_label[u.label].append(u)
    train, val = [], []
    for label, bucket in sorted(by_label.items()):
        order = stream(seed, "split", label).permutation(len(bucket))
        n_val = int(round(val_fraction * len(bucket)))
        if len(bucket) >= 2:
            n_val = min(n_val, len(bucket) - 1)
        else:
            n_val = 0
        val.extend(bucket[i] for i in order[:n_val])
        train.extend(bucket[i] for i in order[n_val:])
    train.sort(key=lambda u: u.user_id)
    val.sort(key=lambda u: u.user_id)
    return train, val


def validation_f1(params, model_cfg, users, store, k_posts, seed):
    """F1 at threshold 0.5 over fixed (epoch-independent) sampled sets."""
    decisions, labels = [], []
    for u in users:
        ts = sample_text_set(u, store, k_posts, stream(seed, "val-sample", u.user_id))
        decisions.append(1 if predict_user(ts, params, model_cfg) >= 0.5 else 0)
        labels.append(u.label_int())
    return precision_recall_f1(decisions, labels)[2]


class TrainResult:
    """Final and best-validation parameters plus the training log."""

    def __init__(self, params, best_params, best_val_f1, best_epoch, log,
                 train_user_ids, val_user_ids, opt_state):
        self.params = params
        self.best_params = best_params
        self.best_val_f1 = best_val_f1
        self.best_epoch = best_epoch
        self.log = log
        self.train_user_ids = train_user_ids
        self.val_user_ids = val_user_ids
        self.opt_state = opt_state


def _split_fingerprint(users):
    return "|".join(f"{u.user_id}:{u.label}" for u in sorted(users, key=lambda u: u.user_id))


def save_train_state(path, model_cfg, train_cfg, params, opt_state, next_epoch,
                     best_params, best_val_f1, best_epoch, fingerprint, log):
    arrays = OrderedDict()
    for name, arr in params.arrays.items():
        arrays[f"param.{name}"] = arr
    for name, arr in opt_state.m.items():
        arrays[f"opt.m.{name}"] = arr
    for name, arr in opt_state.v.items():
        arrays[f"opt.v.{name}"] = arr
    for name, arr in best_params.arrays.items():
        arrays[f"best.{name}"] = arr
    header = {"kind": "train-state", "model_config": model_cfg.to_dict(),
              "train_config": train_cfg.to_dict(),
              "counters": {"opt_step": opt_state.step, "next_epoch": next_epoch,
                           "best_val_f1": best_val_f1, "best_epoch": best_epoch},
              "fingerprint": fingerprint, "log": log}
    write_container(path, header, arrays)


def load_train_state(path):
    header, arrays = read_container(path)
    if header.get("kind") != "train-state":
        raise ConfigError(f"{path}: not a training state (kind={header.get('kind')!r})")
    params, best, m, v = OrderedDict(), OrderedDict(), OrderedDict(), OrderedDict()
    for name, arr in arrays.items():
        kind, _, rest = name.partition(".")
        if kind == "param":
            params[rest] = arr
        elif kind == "best":
            best[rest] = arr
        elif kind == "opt":
            which, _, pname = rest.partition(".")
            (m if which == "m" else v)[pname] = arr
    state = OptimizerState(m=m, v=v, step=header["counters"]["opt_step"])
    return {"model_config": ModelConfig.from_dict(header["model_config"]),
            "train_config": TrainConfig.from_dict(header["train_config"]),
            "params": ModelParams(params), "best_params": ModelParams(best),
            "opt_state": state, "counters": header["counters"],
            "fingerprint": header["fingerprint"], "log": header["log"]}


def train(users, store, model_cfg, train_cfg, resume_from=None, log_path=None,
          state_path=None):
    """Train on labeled users; returns a TrainResult.

    ``resume_from`` restores a saved training state and continues up to
    ``train_cfg.epochs`` total epochs, bit-identically to a run that was
    never interrupted. ``log_path`` appends one JSON line per epoch;
    ``state_path`` persists the full state after the final epoch.
    On divergence raises NumericalError carrying ``last_good`` (params,
    epoch) from the last completed epoch.
    """
    if not users:
        raise DataError("train: no users")
    train_users, val_users = stratified_split(users, train_cfg.val_fraction, train_cfg.seed)
    fingerprint = _split_fingerprint(users)

    n_pos = sum(1 for u in train_users if u.label == "positive")
    n_neg = len(train_users) - n_pos
    if train_cfg.class_weight_pos is not None:
        w_pos, w_neg = train_cfg.class_weight_pos, train_cfg.class_weight_neg
    else:
        w_pos, w_neg = class_weights(n_pos, n_neg)

    seed = train_cfg.seed
    log = []
    if resume_from is None:
        params = ModelParams.initialize(model_cfg, seed)
        opt_state = OptimizerState.zeros(params)
        best_params = params.copy()
        best_val_f1 = -1.0
        best_epoch = -1
        start_epoch = 0
    else:
        saved = load_train_state(resume_from)
        if saved["model_config"].to_dict() != model_cfg.to_dict():
            raise ConfigError("resume: model config does not match saved state")
        if saved["fingerprint"] != fingerprint:
            raise ConfigError("resume: corpus does not match the one the state was trained on")
        saved_tc, cur_tc = saved["train_config"].to_dict(), train_cfg.to_dict()
        for key in TrainConfig.FIELDS:
            if key != "epochs" and saved_tc[key] != cur_tc[key]:
                raise ConfigError(
                    f"resume: train config field {key!r} changed "
                    f"({saved_tc[key]!r} -> {cur_tc[key]!r}); only epochs may grow")
        params = saved["params"]
        opt_state = saved["opt_state"]
        best_params = saved["best_params"]
        best_val_f1 = saved["counters"]["best_val_f1"]
        best_epoch = saved["counters"]["best_epoch"]
        start_epoch = saved["counters"]["next_epoch"]
        log = list(saved["log"])

    steps_per_epoch = math.ceil(len(train_users) / train_cfg.effective_batch_size)
    log_file = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for epoch in range(start_epoch, train_cfg.epochs):
            last_good = params.copy()
            order = stream(seed, "shuffle", epoch).permutation(len(train_users))
            epoch_losses = []
            lr = train_cfg.lr_min
            for w0 in range(0, len(order), train_cfg.effective_batch_size):
                window = order[w0:w0 + train_cfg.effective_batch_size]
                pt = params.tensors(requires_grad=True)
                for i in window:
                    u = train_users[i]
                    ts = sample_text_set(u, store, train_cfg.k_posts,
                                         stream(seed, "sample", epoch, u.user_id))
                    logit = set_logit(Tensor(ts.embeddings), pt, model_cfg, mode="train",
                                      rng=stream(seed, "dropout", epoch, u.user_id))
                    y = u.label_int()
                    loss = weighted_bce_from_logit(logit, y, w_pos if y else w_neg)
                    value = loss.item()
                    if not np.isfinite(value):
                        err = NumericalError(
                            f"training diverged at epoch {epoch}: loss for user "
                            f"{u.user_id} is not finite")
                        err.last_good = (last_good, epoch - 1)
                        raise err
                    loss.backward()
                    epoch_losses.append(value)
                lr = cyclical_lr(opt_state.step, steps_per_epoch, train_cfg)
                grads = {n: pt[n].grad / len(window) for n in params.arrays}
                adamw_step(params, grads, opt_state, lr, train_cfg.weight_decay)
            val_f1 = (validation_f1(params, model_cfg, val_users, store,
                                    train_cfg.k_posts, seed)
                      if val_users else None)
            record = {"epoch": epoch, "step": opt_state.step, "lr": lr,
                      "train_loss": float(np.mean(epoch_losses)), "val_f1": val_f1}
            log.append(record)
            if log_file:
                log_file.write(json.dumps(record, sort_keys=True) + "\n")
                log_file.flush()
            if val_f1 is not None and val_f1 > best_val_f1:
                best_val_f1 = val_f1
                best_params = params.copy()
                best_epoch = epoch
    finally:
        if log_file:
            log_file.close()

    if best_epoch < 0:
        best_params, best_epoch = params.copy(), train_cfg.epochs - 1
        best_val_f1 = None
    result = TrainResult(params=params, best_params=best_params,
                         best_val_f1=best_val_f1, best_epoch=best_epoch, log=log,
                         train_user_ids=[u.user_id for u in train_users],
                         val_user_ids=[u.user_id for u in val_users],
                         opt_state=opt_state)
    if state_path:
        save_train_state(state_path, model_cfg, train_cfg, params, opt_state,
                         train_cfg.epochs, best_params,
                         best_val_f1 if best_val_f1 is not None else -1.0,
                         best_epoch, fingerprint, log)
    return result
