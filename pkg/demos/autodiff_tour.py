"""
Reverse-mode differentiation and gradient reversal
==================================================

A tiny two-layer classifier built from ``advcl.tensor`` primitives, checked
against central differences, then the same graph with a gradient reversal
layer in the middle.
"""
import numpy as np

from advcl.tensor import Tensor, backward, gradient_reversal, relu, softmax_cross_entropy

rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(8, 5)))
W1 = Tensor(rng.normal(size=(5, 4)) * 0.5, requires_grad=True)
W2 = Tensor(rng.normal(size=(4, 3)) * 0.5, requires_grad=True)
y = rng.integers(0, 3, 8)


def loss(reverse=False):
    h = relu(x @ W1)
    if reverse:
        h = gradient_reversal(h)
    return softmax_cross_entropy(h @ W2, y)


# analytic gradient of W1
backward(loss())
analytic = W1.grad.copy()

# central differences, one coordinate at a time
numeric = np.zeros_like(W1.data)
h = 1e-6
for idx in np.ndindex(W1.shape):
    old = W1.data[idx]
    W1.data[idx] = old + h
    up = loss().item()
    W1.data[idx] = old - h
    down = loss().item()
    W1.data[idx] = old
    numeric[idx] = (up - down) / (2 * h)
print("max |analytic - numeric|:", np.abs(analytic - numeric).max())

# reversal leaves the forward value alone and flips everything upstream
W1.grad = W2.grad = None
backward(loss(reverse=True))
print("same loss:", loss(reverse=True).item() == loss().item())
print("W1 grad negated:", np.array_equal(W1.grad, -analytic))
