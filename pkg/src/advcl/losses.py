"""Task, adversarial and difference losses of ACL and their weighted sum.

Each loss accepts an optional :class:`Features` object so the harness can
encode a batch once and share the shared/private features between terms.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, LabelError
from .model import AclModel
from .tensor import Tensor, gradient_reversal, softmax_cross_entropy, take_rows


@dataclass
class JointBatch:
    """Rows drawn from the current task and the replay memory.

    ``t`` holds 1-based task labels; ``from_memory`` flags replayed rows.
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    from_memory: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.intp)
        self.t = np.asarray(self.t, dtype=np.intp)
        n = len(self.x)
        if self.from_memory is None:
            self.from_memory = np.zeros(n, dtype=bool)
        self.from_memory = np.asarray(self.from_memory, dtype=bool)
        if not (len(self.y) == len(self.t) == len(self.from_memory) == n):
            raise DimensionError("x, y, t and from_memory must have equal length")
        if n and self.t.min() < 1:
            raise LabelError("task label 0 is reserved for fake features")

    def __len__(self) -> int:
        return len(self.x)

    def tasks(self) -> list[int]:
        return sorted(int(k) for k in np.unique(self.t))


@dataclass
class Features:
    """Encoded batch: shared features for all rows, private per task group."""

    z_shared: Tensor | None
    groups: dict = field(default_factory=dict)  # task -> (row index, z_private or None)


def encode(model: AclModel, batch: JointBatch) -> Features:
    """Run S once over the batch and each task's P^k over its own rows."""
    if len(batch) and batch.t.max() > model.seen_tasks:
        raise LabelError(f"task label {batch.t.max()} beyond seen tasks {model.seen_tasks}")
    x = Tensor(batch.x)
    zs = model.encode_shared(x) if model.config.use_shared else None
    groups = {}
    for k in batch.tasks():
        idx = np.flatnonzero(batch.t == k)
        zp = model.encode_private(batch.x[idx], k) if model.config.use_private else None
        groups[k] = (idx, zp)
    return Features(zs, groups)


def _check_labels(model: AclModel, batch: JointBatch) -> None:
    c = model.config.classes_per_task
    if len(batch) == 0:
        raise ContractError("empty batch")
    if batch.y.min() < 0 or batch.y.max() >= c:
        raise LabelError(f"class labels must lie in [0, {c})")
    if batch.t.max() > model.seen_tasks:
        raise LabelError(f"task label {batch.t.max()} beyond seen tasks {model.seen_tasks}")


def task_loss(model: AclModel, batch: JointBatch, features: Features | None = None) -> Tensor:
    """Mean cross-entropy with every row routed through its own task head."""
    _check_labels(model, batch)
    features = features or encode(model, batch)
    n = len(batch)
    total = None
    for k, (idx, zp) in features.groups.items():
        zs = None if features.z_shared is None else take_rows(features.z_shared, idx)
        if len(idx) == n and zs is not None:
            zs = features.z_shared
        logits = model.head_logits(k, zp, zs)
        term = softmax_cross_entropy(logits, batch.y[idx]) * (len(idx) / n)
        total = term if total is None else total + term
    return total


def adv_loss_for_S(model: AclModel, batch: JointBatch, features: Features | None = None) -> Tensor:
    """Task-label cross-entropy of D on gradient-reversed shared features.

    Descending this loss in the shared parameters ascends the
    discriminator's error.  D's own parameters pick up gradients here too,
    but the harness never steps D with them.
    """
    if len(batch) == 0:
        raise ContractError("empty batch")
    if np.any(batch.t == 0):
        raise ContractError("fake label present in a real batch")
    features = features or encode(model, batch)
    logits = model.forward_discriminator(gradient_reversal(features.z_shared))
    return softmax_cross_entropy(logits, batch.t)


def sample_fake_features(model: AclModel, n: int, rng: np.random.Generator) -> np.ndarray:
    cfg = model.config
    return cfg.noise_mean + np.sqrt(cfg.noise_var) * rng.standard_normal((n, cfg.latent_dim_s))


def adv_loss_for_D(model: AclModel, batch: JointBatch, noise_n: int,
                   rng: np.random.Generator | None = None,
                   z_shared: np.ndarray | None = None) -> Tensor:
    """Discriminator loss on detached real features (labels t) plus
    ``noise_n`` Gaussian rows labelled 0.

    ``z_shared`` may supply already-computed shared features; otherwise S is
    evaluated here.  Either way no gradient reaches the shared encoder.
    """
    if noise_n < 0:
        raise ContractError("noise_n must be non-negative")
    if z_shared is None:
        z_shared = model.encode_shared(batch.x).data
    fake = sample_fake_features(model, noise_n, rng or np.random.default_rng())
    z = np.concatenate([np.asarray(z_shared, dtype=np.float64), fake], axis=0)
    labels = np.concatenate([batch.t, np.zeros(noise_n, dtype=np.intp)])
    return softmax_cross_entropy(model.forward_discriminator(Tensor(z)), labels)


def orthogonality(z_shared: Tensor, z_private: Tensor) -> Tensor:
    """Squared Frobenius norm of ``z_shared^T @ z_private``."""
    if z_shared.ndim != 2 or z_private.ndim != 2 or z_shared.shape[0] != z_private.shape[0]:
        raise DimensionError(f"feature shapes {z_shared.shape} and {z_private.shape} "
                             "need the same number of rows")
    cross = z_shared.T @ z_private
    return (cross * cross).sum()


def _unit_rows(z: Tensor, eps: float = 1e-6) -> Tensor:
    # norms are treated as constants, so only directions receive gradient
    norms = np.linalg.norm(z.data, axis=1, keepdims=True) + eps
    return z * Tensor(np.broadcast_to(1.0 / norms, z.shape).copy())


def normalized_orthogonality(z_shared: Tensor, z_private: Tensor) -> Tensor:
    """Scale-free variant: rows L2-normalized, result divided by ``n**2``.

    Lies in [0, 1] and cannot be lowered by shrinking either feature map,
    which the plain sum of squares rewards.
    """
    n = z_shared.shape[0]
    return orthogonality(_unit_rows(z_shared), _unit_rows(z_private)) * (1.0 / n ** 2)


def diff_loss(model: AclModel, x, k: int, features: Features | None = None,
              normalize: bool = False) -> Tensor:
    """Orthogonality penalty between S(x) and P^k(x) for rows of task k.

    ``normalize`` switches to :func:`normalized_orthogonality`.
    """
    if features is not None:
        idx, zp = features.groups[k]
        zs = take_rows(features.z_shared, idx)
        if len(idx) == features.z_shared.shape[0]:
            zs = features.z_shared
    else:
        zs, zp = model.encode_shared(x), model.encode_private(x, k)
    return (normalized_orthogonality if normalize else orthogonality)(zs, zp)


def diff_loss_joint(model: AclModel, batch: JointBatch, features: Features | None = None,
                    normalize: bool = False) -> Tensor:
    """Orthogonality penalty summed over every task group in the batch,
    each group paired with its own private encoder."""
    features = features or encode(model, batch)
    total = None
    for k in features.groups:
        term = diff_loss(model, None, k, features, normalize)
        total = term if total is None else total + term
    return total


def total_loss(lambdas, l_adv: Tensor | None, l_task: Tensor | None,
               l_diff: Tensor | None) -> Tensor:
    """``lambda1*l_adv + lambda2*l_task + lambda3*l_diff``; absent terms are skipped."""
    if len(lambdas) != 3 or any(l < 0 for l in lambdas):
        raise ContractError("lambdas must be three non-negative weights")
    total = None
    for lam, term in zip(lambdas, (l_adv, l_task, l_diff)):
        if term is None:
            continue
        weighted = term * float(lam)
        total = weighted if total is None else total + weighted
    if total is None:
        raise ContractError("no loss terms to combine")
    return total
