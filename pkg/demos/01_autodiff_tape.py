"""
A tour of the reverse-mode tape
===============================

Every gradient in this package flows through one small Tensor class:
float64 arrays plus a tape of backward closures. This script builds a
few expressions, runs backward, and checks one gradient against
central finite differences.
"""

import numpy as np

from setrisk.rng import stream
from setrisk.tensor import Tensor

# A Tensor wraps an ndarray. Marking it trainable makes backward()
# accumulate into .grad.
rng = stream(0, "demo", "tape")
w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
x = Tensor(rng.normal(size=(4, 3)))

# Expressions compose like numpy. Reductions, matmul, activations and
# the usual arithmetic all record their backward rule on the tape.
y = (x @ w).relu().sum()
y.backward()
print("y          =", y.item())
print("dy/dw[0,0] =", w.grad[0, 0])

# The same loss evaluated twice with a perturbed entry gives the
# centered difference, which should agree to ~1e-9.
h = 1e-6
w.data[0, 0] += h
y_plus = (x @ w).relu().sum().item()
w.data[0, 0] -= 2 * h
y_minus = (x @ w).relu().sum().item()
w.data[0, 0] += h
fd = (y_plus - y_minus) / (2 * h)
print("finite diff =", fd)
print("abs error   =", abs(fd - w.grad[0, 0]))

# Gradients accumulate across backward calls until reset, which is how
# per-user gradients are averaged into one update during training.
w.grad = None
for _ in range(3):
    ((x @ w).gelu().sum()).backward()
print("accumulated three backward passes; grad norm =",
      float(np.linalg.norm(w.grad)))
