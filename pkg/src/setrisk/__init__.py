"""Permutation-invariant set encoding over post embeddings, with
early-risk streaming evaluation, ranking/latency metrics, and
integrated-gradients attribution."""

__version__ = "0.1.0"
