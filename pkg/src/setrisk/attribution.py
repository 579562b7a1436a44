"""Integrated-gradients attribution over input embeddings.

Attribution integrates the gradient of the pre-sigmoid positive logit
along the straight path from a baseline (zeros by default) to the
input, using a midpoint Riemann sum with m steps. Per-post scores sum
each post's embedding-dimension attributions; the completeness gap
|sum(attributions) - (F(x) - F(baseline))| is reported with every
result so callers can judge the integration error.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .model import TextSet, set_logit
from .tensor import Tensor


@dataclass
class AttributionResult:
    user_id: str
    post_ids: tuple
    post_scores: np.ndarray      # [K] per-post attribution
    attributions: np.ndarray     # [K, input_dim]
    output_delta: float          # F(x) - F(baseline)
    completeness_gap: float
    steps_used: int

    def ranked(self):
        """(post_id, score) pairs, highest first, ties by post id."""
        order = sorted(range(len(self.post_ids)),
                       key=lambda i: (-self.post_scores[i], self.post_ids[i]))
        return [(self.post_ids[i], float(self.post_scores[i])) for i in order]


def integrated_gradients_fn(fn, x, baseline=None, steps=64):
    """Midpoint-rule integrated gradients of scalar ``fn`` at ``x``.

    ``fn`` maps a Tensor of x's shape to a scalar Tensor. Returns
    (attributions, output_delta, completeness_gap).
    """
    if steps < 1:
        raise ConfigError(f"steps must be at least 1, got {steps}")
    x = np.asarray(x, dtype=np.float64)
    if baseline is None:
        baseline = np.zeros_like(x)
    else:
        baseline = np.asarray(baseline, dtype=np.float64)
        if baseline.shape != x.shape:
            raise ShapeError(
                f"baseline shape {baseline.shape} does not match input shape {x.shape}")
    diff = x - baseline
    total = np.zeros_like(x)
    for k in range(1, steps + 1):
        alpha = (k - 0.5) / steps
        point = Tensor(baseline + alpha * diff, requires_grad=True)
        fn(point).backward()
        total += point.grad
    attributions = diff * (total / steps)
    delta = float(fn(Tensor(x)).item() - fn(Tensor(baseline)).item())
    gap = abs(float(attributions.sum()) - delta)
    return attributions, delta, gap


def integrated_gradients(ts, params, cfg, steps=64, baseline=None):
    """Attribution of the positive logit over a TextSet's embeddings."""
    pt = params.tensors(requires_grad=False)
    attributions, delta, gap = integrated_gradients_fn(
        lambda x: set_logit(x, pt, cfg), ts.embeddings, baseline=baseline, steps=steps)
    return AttributionResult(user_id=ts.user_id, post_ids=ts.post_ids,
                             post_scores=attributions.sum(axis=1),
                             attributions=attributions, output_delta=delta,
                             completeness_gap=gap, steps_used=steps)


def score_posts(post_ids, embeddings, params, cfg, window, steps=32):
    """Per-post attribution scores for an arbitrarily long history.

    Posts are scored in consecutive windows of at most ``window`` rows
    (each window is one model-sized set); scores merge on the raw
    attribution scale. Inputs must already be in canonical order.
    """
    if window < 1:
        raise ConfigError(f"window must be at least 1, got {window}")
    scores = np.zeros(len(post_ids))
    for start in range(0, len(post_ids), window):
        stop = min(start + window, len(post_ids))
        chunk = TextSet("_window", post_ids[start:stop], embeddings[start:stop])
        result = integrated_gradients(chunk, params, cfg, steps=steps)
        scores[start:stop] = result.post_scores
    return scores


def select_top_k_posts(user, store, params, cfg, k, steps=32):
    """The K posts of a user's history most implicated by attribution.

    Histories no longer than K pass through unchanged. Longer ones are
    scored window-by-window; the K highest-scoring posts win, with ties
    broken by post id. Posts are canonically ordered first, so the
    selection does not depend on the order they were scanned in.
    The returned TextSet lists the winners chronologically.
    """
    posts = sorted(user.posts, key=lambda p: (p.timestamp, p.post_id))
    pids = [p.post_id for p in posts]
    if len(pids) <= k:
        return TextSet(user.user_id, pids, store.matrix(pids))
    emb = store.matrix(pids)
    scores = score_posts(pids, emb, params, cfg, window=k, steps=steps)
    ranked = sorted(range(len(pids)), key=lambda i: (-scores[i], pids[i]))
    keep = sorted(ranked[:k])
    return TextSet(user.user_id, [pids[i] for i in keep], emb[keep])
