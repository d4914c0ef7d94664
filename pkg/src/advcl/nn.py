"""Linear layers, MLPs, Glorot initialization and plain SGD."""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError
from .tensor import Tensor, relu


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


class Linear:
    """Affine map ``x @ weight + bias`` with weight stored as in x out."""

    def __init__(self, in_features: int, out_features: int, seed=None):
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        self.weight = Tensor(np.zeros((self.in_features, self.out_features)), requires_grad=True)
        self.bias = Tensor(np.zeros(self.out_features), requires_grad=True)
        self._trainable = True
        init_params(self, seed)

    @property
    def trainable(self) -> bool:
        return self._trainable

    @trainable.setter
    def trainable(self, flag: bool) -> None:
        self._trainable = bool(flag)
        for p in self.parameters():
            p.requires_grad = self._trainable
            p.grad = None

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def num_parameters(self) -> int:
        return self.weight.size + self.bias.size

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    def __repr__(self) -> str:
        return f"Linear({self.in_features}, {self.out_features}, trainable={self.trainable})"


def init_params(layer: Linear, seed=None) -> Linear:
    """Glorot-uniform weights and zero biases, reproducible under ``seed``."""
    rng = np.random.default_rng(seed)
    bound = glorot_bound(layer.in_features, layer.out_features)
    layer.weight.data = rng.uniform(-bound, bound, size=(layer.in_features, layer.out_features))
    layer.bias.data = np.zeros(layer.out_features)
    return layer


class Mlp:
    """Stack of :class:`Linear` layers with ReLU between consecutive layers.

    ``sizes`` lists every width including input and output, so
    ``Mlp([784, 175, 128])`` has two layers.  ``final_relu`` adds a ReLU
    after the last layer as well.
    """

    def __init__(self, sizes: Sequence[int], final_relu: bool = False, seed=None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ContractError(f"invalid MLP sizes {sizes}")
        self.sizes = sizes
        self.final_relu = bool(final_relu)
        if not isinstance(seed, np.random.SeedSequence):
            seed = np.random.SeedSequence(seed)
        seeds = np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key).spawn(len(sizes) - 1)
        self.layers = [Linear(a, b, seed=s) for a, b, s in zip(sizes[:-1], sizes[1:], seeds)]

    @property
    def in_features(self) -> int:
        return self.sizes[0]

    @property
    def out_features(self) -> int:
        return self.layers[-1].out_features

    @property
    def trainable(self) -> bool:
        return all(layer.trainable for layer in self.layers)

    def freeze(self) -> None:
        for layer in self.layers:
            layer.trainable = False

    def unfreeze(self) -> None:
        for layer in self.layers:
            layer.trainable = True

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def num_parameters(self) -> int:
        return sum(layer.num_parameters() for layer in self.layers)

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.final_relu:
                x = relu(x)
        return x

    def __repr__(self) -> str:
        arrows = "->".join(str(s) for s in self.sizes)
        return f"Mlp({arrows}, final_relu={self.final_relu}, trainable={self.trainable})"


def sgd_step(params: Iterable[Tensor], lr: float) -> None:
    """``p <- p - lr * grad`` for every trainable parameter, then clear grads.

    Frozen parameters (``requires_grad`` off) are skipped untouched.  A
    trainable parameter without a gradient means the caller stepped a
    module that took no part in the loss, which is reported as an error.
    """
    params = list(params)
    for p in params:
        if p.requires_grad and p.grad is None:
            raise ContractError(f"trainable parameter {p!r} has no gradient")
    for p in params:
        if p.requires_grad:
            p.data = p.data - lr * p.grad
        p.grad = None


class SGD:
    """Plain SGD with one learning rate per named parameter group.

    Groups used by the harness are ``shared``, ``private`` and
    ``discriminator``.  :meth:`decay` scales every rate by ``decay_factor``.
    """

    def __init__(self, lrs: dict[str, float], decay_factor: float = 1.0):
        self.initial = {k: float(v) for k, v in lrs.items()}
        self.lrs = dict(self.initial)
        self.decay_factor = float(decay_factor)

    def step(self, group: str, params: Iterable[Tensor]) -> None:
        sgd_step(params, self.lrs[group])

    def decay(self) -> None:
        for k in self.lrs:
            self.lrs[k] *= self.decay_factor

    def reset(self) -> None:
        self.lrs = dict(self.initial)


class PlateauDecay:
    """Trigger a decay when the monitored loss fails to improve for
    ``patience`` consecutive epochs."""

    def __init__(self, optimizer: SGD, patience: int = 3):
        self.optimizer = optimizer
        self.patience = int(patience)
        self.best = np.inf
        self.bad_epochs = 0

    def update(self, value: float) -> bool:
        if value < self.best:
            self.best = value
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.optimizer.decay()
            self.bad_epochs = 0
            return True
        return False
