"""Dense float64 tensors with tape-based reverse-mode autodiff.

Covers exactly the arithmetic a set encoder needs: 1-D vectors, 2-D
matrices, and 3-D stacks (head-batched attention), plus the fused
activations and normalizations used by the model. Each operation
records its parents and a backward rule; ``backward`` on a scalar walks
the recorded graph once in reverse execution order and accumulates
d(loss)/d(leaf) into the grad buffers of requires_grad leaves.

Tensors are immutable after construction except for their grad buffer.
Graphs are confined to one logical thread and freed with the Python
objects that hold them.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import erf, expit

from .errors import ShapeError

_ids = itertools.count()

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """A float64 array plus the tape bookkeeping for reverse mode."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._id = next(_ids)

    # ---------------------------------------------------------------- basics

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------ arithmetic

    def __add__(self, other):
        if not isinstance(other, Tensor):
            out = _node(self.data + float(other), (self,))
            if out.requires_grad:
                out._backward = lambda g: (g,)
            return out
        a, b = self, other
        if a.data.shape == b.data.shape:
            out = _node(a.data + b.data, (a, b))
            if out.requires_grad:
                out._backward = lambda g: (g, g)
            return out
        if b.data.ndim == 1 and a.data.ndim >= 2 and a.data.shape[-1] == b.data.shape[0]:
            # Row-broadcast bias add: [..., d] + [d].
            lead = tuple(range(a.data.ndim - 1))
            out = _node(a.data + b.data, (a, b))
            if out.requires_grad:
                out._backward = lambda g: (g, g.sum(axis=lead))
            return out
        raise ShapeError(f"add: incompatible shapes {a.data.shape} and {b.data.shape}")

    __radd__ = __add__

    def __neg__(self):
        out = _node(-self.data, (self,))
        if out.requires_grad:
            out._backward = lambda g: (-g,)
        return out

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return self + (-other)
        return self + (-float(other))

    def __rsub__(self, other):
        return (-self) + float(other)

    def __mul__(self, other):
        if not isinstance(other, Tensor):
            c = float(other)
            out = _node(self.data * c, (self,))
            if out.requires_grad:
                out._backward = lambda g: (g * c,)
            return out
        a, b = self, other
        if a.data.shape != b.data.shape:
            raise ShapeError(f"mul: incompatible shapes {a.data.shape} and {b.data.shape}")
        out = _node(a.data * b.data, (a, b))
        if out.requires_grad:
            out._backward = lambda g: (
                g * b.data if a.requires_grad else None,
                g * a.data if b.requires_grad else None,
            )
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("div: only division by a python scalar is supported")
        return self * (1.0 / float(other))

    def __matmul__(self, other):
        a, b = self, other
        if a.data.ndim not in (2, 3) or b.data.ndim != a.data.ndim:
            raise ShapeError(
                f"matmul: expects two 2-D or two 3-D operands, got {a.data.shape} and {b.data.shape}"
            )
        if a.data.shape[-1] != b.data.shape[-2] or a.data.shape[:-2] != b.data.shape[:-2]:
            raise ShapeError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
        out = _node(a.data @ b.data, (a, b))
        if out.requires_grad:
            out._backward = lambda g: (
                g @ b.data.swapaxes(-1, -2) if a.requires_grad else None,
                a.data.swapaxes(-1, -2) @ g if b.requires_grad else None,
            )
        return out

    # --------------------------------------------------------- shape movers

    def transpose(self, axes=None):
        if axes is None:
            if self.data.ndim != 2:
                raise ShapeError(f"transpose: axes required for shape {self.data.shape}")
            axes = (1, 0)
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))
        out = _node(self.data.transpose(axes), (self,))
        if out.requires_grad:
            out._backward = lambda g: (g.transpose(inv),)
        return out

    def reshape(self, shape):
        shape = tuple(shape) if not isinstance(shape, int) else (shape,)
        orig = self.data.shape
        out = _node(self.data.reshape(shape), (self,))
        if out.requires_grad:
            out._backward = lambda g: (g.reshape(orig),)
        return out

    # ----------------------------------------------------------- reductions

    def sum(self):
        out = _node(self.data.sum(), (self,))
        if out.requires_grad:
            shape = self.data.shape
            out._backward = lambda g: (np.broadcast_to(g, shape),)
        return out

    def mean(self, axis=None):
        if axis is None:
            n = self.data.size
            out = _node(self.data.mean(), (self,))
            if out.requires_grad:
                shape = self.data.shape
                out._backward = lambda g: (np.broadcast_to(g / n, shape),)
            return out
        n = self.data.shape[axis]
        out = _node(self.data.mean(axis=axis), (self,))
        if out.requires_grad:
            shape = self.data.shape
            out._backward = lambda g: (np.broadcast_to(np.expand_dims(g, axis) / n, shape),)
        return out

    # ---------------------------------------------------------- activations

    def relu(self):
        out = _node(np.maximum(self.data, 0.0), (self,))
        if out.requires_grad:
            mask = self.data > 0.0
            out._backward = lambda g: (g * mask,)
        return out

    def gelu(self):
        x = self.data
        cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
        out = _node(x * cdf, (self,))
        if out.requires_grad:
            pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
            out._backward = lambda g: (g * (cdf + x * pdf),)
        return out

    def sigmoid(self):
        s = expit(self.data)
        out = _node(s, (self,))
        if out.requires_grad:
            out._backward = lambda g: (g * s * (1.0 - s),)
        return out

    def softplus(self):
        out = _node(np.logaddexp(0.0, self.data), (self,))
        if out.requires_grad:
            s = expit(self.data)
            out._backward = lambda g: (g * s,)
        return out

    def dropout(self, rate, rng):
        """Inverted dropout; identity when rate == 0."""
        if not 0.0 <= rate < 1.0:
            raise ShapeError(f"dropout: rate must be in [0, 1), got {rate}")
        if rate == 0.0:
            return self
        keep = (rng.random(self.data.shape) >= rate) / (1.0 - rate)
        out = _node(self.data * keep, (self,))
        if out.requires_grad:
            out._backward = lambda g: (g * keep,)
        return out

    # ------------------------------------------------------------ fused ops

    def softmax_rows(self, scale=1.0):
        """Row-wise softmax of ``scale * x`` along the last axis, stabilized."""
        if scale <= 0.0:
            raise ShapeError(f"softmax_rows: scale must be positive, got {scale}")
        z = scale * self.data
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=-1, keepdims=True)
        out = _node(y, (self,))
        if out.requires_grad:
            out._backward = lambda g: (scale * y * (g - (g * y).sum(axis=-1, keepdims=True)),)
        return out

    def layer_norm(self, gamma, beta, eps=1e-5):
        """Normalize the last axis to zero mean/unit variance, then affine."""
        d = self.data.shape[-1]
        if gamma.data.shape != (d,) or beta.data.shape != (d,):
            raise ShapeError(
                f"layer_norm: gamma/beta shapes {gamma.data.shape}/{beta.data.shape} "
                f"do not match feature width {d}"
            )
        x = self.data
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        out = _node(xhat * gamma.data + beta.data, (self, gamma, beta))
        if out.requires_grad:
            lead = tuple(range(x.ndim - 1))

            def _bw(g):
                dxhat = g * gamma.data
                dx = inv * (
                    dxhat
                    - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
                )
                return (
                    dx if self.requires_grad else None,
                    (g * xhat).sum(axis=lead) if gamma.requires_grad else None,
                    g.sum(axis=lead) if beta.requires_grad else None,
                )

            out._backward = _bw
        return out

    # -------------------------------------------------------------- backward

    def backward(self):
        """Accumulate d(self)/d(leaf) into every requires_grad leaf.

        ``self`` must be scalar. Repeated calls without resetting leaf
        grads accumulate, which is what gradient accumulation relies on.
        """
        if self.data.shape != ():
            raise ShapeError(f"backward: expected a scalar, got shape {self.data.shape}")
        if not self.requires_grad:
            return
        nodes = []
        seen = {id(self)}
        stack = [self]
        while stack:
            node = stack.pop()
            nodes.append(node)
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    seen.add(id(p))
                    stack.append(p)
        # Creation ids are monotone, so descending id order is reverse
        # execution order; every node is visited exactly once.
        nodes.sort(key=lambda n: n._id, reverse=True)
        grads = {id(self): np.ones((), dtype=np.float64)}
        for node in nodes:
            g = grads.pop(id(node))
            if node._backward is None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad = node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                acc = grads.get(id(p))
                grads[id(p)] = pg if acc is None else acc + pg


def _node(data, parents):
    """Internal constructor for op results; prunes non-grad parents."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = parents if out.requires_grad else ()
    out._backward = None
    out._id = next(_ids)
    return out


def concat(tensors, axis=-1):
    """Concatenate tensors along ``axis`` (the feature axis by default)."""
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    ndim = tensors[0].data.ndim
    for t in tensors[1:]:
        if t.data.ndim != ndim:
            raise ShapeError(
                f"concat: rank mismatch {tensors[0].data.shape} vs {t.data.shape}"
            )
    out = _node(np.concatenate([t.data for t in tensors], axis=axis), tensors)
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]
        out._backward = lambda g: tuple(np.split(g, splits, axis=axis))
    return out
