"""Shared/private ACL architecture with per-task growth, and the ordinary
single-module network used by the fine-tuning and joint-training baselines."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .container import read_container, write_container
from .errors import CapacityError, ConfigError, ContractError, DimensionError
from .nn import Mlp
from .tensor import Tensor, concat


def _seed(base, *key) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(base), spawn_key=tuple(int(k) for k in key))


def _as_input(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class AclConfig:
    """Architecture and loss weights of an ACL model.

    Defaults are the MNIST-scale sizes: a 784-175-128 shared encoder, a
    784-128 ReLU private encoder per task, heads 256-256-28-C and a
    128-64-64-(T+1) discriminator.
    """

    input_dim: int = 784
    shared_hidden: tuple = (175,)
    latent_dim_s: int = 128
    private_hidden: tuple = ()
    latent_dim_p: int = 128
    head_hidden: tuple = (256, 28)
    classes_per_task: int = 2
    max_tasks: int = 5
    discriminator_hidden: tuple = (64, 64)
    lambdas: tuple = (0.05, 1.0, 0.1)
    noise_mean: float = 0.0
    noise_var: float = 1.0
    use_shared: bool = True
    use_private: bool = True
    use_discriminator: bool = True

    def __post_init__(self):
        for name in ("shared_hidden", "private_hidden", "head_hidden",
                     "discriminator_hidden", "lambdas"):
            setattr(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        dims = [self.input_dim, self.latent_dim_s, self.latent_dim_p,
                *self.shared_hidden, *self.private_hidden, *self.head_hidden,
                *self.discriminator_hidden]
        if any(int(d) < 1 for d in dims):
            raise ConfigError("all layer widths must be positive", "model")
        if self.classes_per_task < 2:
            raise ConfigError("need at least two classes per task", "model.classes_per_task")
        if self.max_tasks < 1:
            raise ConfigError("need at least one task", "model.max_tasks")
        if len(self.lambdas) != 3 or any(l < 0 for l in self.lambdas):
            raise ConfigError("lambdas must be three non-negative weights", "model.lambdas")
        if self.noise_var < 0:
            raise ConfigError("noise variance must be non-negative", "model.noise_var")
        if not (self.use_shared or self.use_private):
            raise ConfigError("at least one of shared/private encoders is required",
                              "model.use_shared")
        if self.use_discriminator and not self.use_shared:
            raise ConfigError("the discriminator acts on shared features", "model.use_discriminator")

    @property
    def head_input_dim(self) -> int:
        return (self.latent_dim_p if self.use_private else 0) + \
               (self.latent_dim_s if self.use_shared else 0)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


class AclModel:
    """Shared encoder S, private encoders P^k, heads p^k and discriminator D.

    Task indices are 1-based throughout, matching the task labels carried
    by the data (label 0 is reserved for fake features).
    """

    def __init__(self, config: AclConfig, seed: int = 0):
        self.config = config
        self.seed = int(seed)
        cfg = config
        self.shared = (Mlp([cfg.input_dim, *cfg.shared_hidden, cfg.latent_dim_s],
                           seed=_seed(seed, 0, 0)) if cfg.use_shared else None)
        self.discriminator = (Mlp([cfg.latent_dim_s, *cfg.discriminator_hidden, cfg.max_tasks + 1],
                                  seed=_seed(seed, 0, 1)) if cfg.use_discriminator else None)
        self.privates: list[Mlp] = []
        self.heads: list[Mlp] = []
        self._append_task(_seed(seed, 1))

    @property
    def seen_tasks(self) -> int:
        return len(self.heads)

    def _append_task(self, seq) -> None:
        cfg = self.config
        s_private, s_head = np.random.SeedSequence(seq.entropy, spawn_key=seq.spawn_key).spawn(2)
        if cfg.use_private:
            self.privates.append(Mlp([cfg.input_dim, *cfg.private_hidden, cfg.latent_dim_p],
                                     final_relu=True, seed=s_private))
        self.heads.append(Mlp([cfg.head_input_dim, *cfg.head_hidden, cfg.classes_per_task],
                              seed=s_head))

    def grow(self, seed=None) -> "AclModel":
        """Freeze the newest private module and head, then add fresh ones."""
        if self.seen_tasks >= self.config.max_tasks:
            raise CapacityError(f"model already holds {self.seen_tasks} of "
                                f"{self.config.max_tasks} tasks")
        self.freeze_task(self.seen_tasks)
        self._append_task(_seed(self.seed, self.seen_tasks + 1) if seed is None
                          else np.random.SeedSequence(seed))
        return self

    def _check_task(self, k: int) -> None:
        if not 1 <= int(k) <= self.seen_tasks:
            raise IndexError(f"task {k} not in 1..{self.seen_tasks}")

    def task_modules(self, k: int) -> list[Mlp]:
        self._check_task(k)
        mods = [self.heads[k - 1]]
        if self.config.use_private:
            mods.insert(0, self.privates[k - 1])
        return mods

    def freeze_task(self, k: int) -> None:
        for m in self.task_modules(k):
            m.freeze()

    def unfreeze_all(self) -> None:
        for m in self.modules():
            m.unfreeze()

    def modules(self) -> list[Mlp]:
        mods = []
        if self.shared is not None:
            mods.append(self.shared)
        if self.discriminator is not None:
            mods.append(self.discriminator)
        mods.extend(self.privates)
        mods.extend(self.heads)
        return mods

    # -- forward passes ---------------------------------------------------
    def encode_shared(self, x) -> Tensor:
        if self.shared is None:
            raise ContractError("model has no shared encoder")
        return self.shared(_as_input(x))

    def encode_private(self, x, k: int) -> Tensor:
        self._check_task(k)
        if not self.config.use_private:
            raise ContractError("model has no private encoders")
        return self.privates[k - 1](_as_input(x))

    def head_logits(self, k: int, z_private: Tensor | None, z_shared: Tensor | None) -> Tensor:
        """Head ``k`` applied to ``z_P (+) z_S``, private columns first."""
        self._check_task(k)
        parts = [z for z in (z_private, z_shared) if z is not None]
        z = parts[0] if len(parts) == 1 else concat(parts)
        return self.heads[k - 1](z)

    def forward_task(self, x, k: int) -> Tensor:
        self._check_task(k)
        x = _as_input(x)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise DimensionError(f"input shape {x.shape} does not match input_dim "
                                 f"{self.config.input_dim}")
        zp = self.encode_private(x, k) if self.config.use_private else None
        zs = self.encode_shared(x) if self.config.use_shared else None
        return self.head_logits(k, zp, zs)

    def forward_discriminator(self, z) -> Tensor:
        if self.discriminator is None:
            raise ContractError("model has no discriminator")
        z = _as_input(z)
        if z.ndim != 2 or z.shape[1] != self.config.latent_dim_s:
            raise DimensionError(f"discriminator expects n x {self.config.latent_dim_s}, "
                                 f"got {z.shape}")
        return self.discriminator(z)

    # -- parameters -------------------------------------------------------
    def shared_parameters(self) -> list[Tensor]:
        return [] if self.shared is None else self.shared.parameters()

    def task_parameters(self, k: int) -> list[Tensor]:
        return [p for m in self.task_modules(k) for p in m.parameters()]

    def discriminator_parameters(self) -> list[Tensor]:
        return [] if self.discriminator is None else self.discriminator.parameters()

    def parameters(self) -> list[Tensor]:
        return [p for m in self.modules() for p in m.parameters()]

    def parameter_counts(self) -> dict:
        per_private = self.privates[0].num_parameters() if self.privates else 0
        per_head = self.heads[0].num_parameters()
        counts = {
            "shared": 0 if self.shared is None else self.shared.num_parameters(),
            "discriminator": 0 if self.discriminator is None else self.discriminator.num_parameters(),
            "private_per_task": per_private,
            "head_per_task": per_head,
            "tasks": self.seen_tasks,
        }
        counts["total"] = (counts["shared"] + counts["discriminator"]
                           + self.seen_tasks * (per_private + per_head))
        return counts

    def num_parameters(self) -> int:
        return sum(m.num_parameters() for m in self.modules())

    # -- persistence ------------------------------------------------------
    def named_modules(self) -> list[tuple[str, Mlp]]:
        named = []
        if self.shared is not None:
            named.append(("shared", self.shared))
        if self.discriminator is not None:
            named.append(("discriminator", self.discriminator))
        for k in range(1, self.seen_tasks + 1):
            if self.config.use_private:
                named.append((f"private.{k}", self.privates[k - 1]))
            named.append((f"head.{k}", self.heads[k - 1]))
        return named

    def save(self, path) -> None:
        blocks, frozen = [], {}
        for name, mod in self.named_modules():
            frozen[name] = not mod.trainable
            for i, layer in enumerate(mod.layers):
                blocks.append((f"{name}.{i}.weight", layer.weight.data))
                blocks.append((f"{name}.{i}.bias", layer.bias.data))
        meta = {"kind": "acl_model", "config": self.config.to_dict(), "seed": self.seed,
                "seen_tasks": self.seen_tasks, "frozen": frozen}
        write_container(path, meta, blocks)

    @classmethod
    def load(cls, path) -> "AclModel":
        meta, blocks = read_container(path)
        if meta.get("kind") != "acl_model":
            raise ContractError(f"{path} is not an ACL model checkpoint")
        model = cls(AclConfig(**meta["config"]), seed=meta["seed"])
        while model.seen_tasks < meta["seen_tasks"]:
            model.grow()
        values = dict(blocks)
        for name, mod in model.named_modules():
            for i, layer in enumerate(mod.layers):
                layer.weight.data = values[f"{name}.{i}.weight"].copy()
                layer.bias.data = values[f"{name}.{i}.bias"].copy()
            if meta["frozen"][name]:
                mod.freeze()
            else:
                mod.unfreeze()
        return model


@dataclass
class OrdConfig:
    """Ordinary single-module MLP used by ORD-FT / ORD-JT.

    ``head_mode="shared"`` gives one C-way output reused by every task;
    ``"sliced"`` gives T*C outputs with task k reading its own slice.
    """

    input_dim: int = 784
    hidden: tuple = (256, 256)
    classes_per_task: int = 2
    max_tasks: int = 5
    head_mode: str = "shared"

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if self.head_mode not in ("shared", "sliced"):
            raise ConfigError(f"unknown head_mode {self.head_mode!r}", "ord.head_mode")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d


class OrdNet:
    def __init__(self, config: OrdConfig, seed: int = 0):
        self.config = config
        outputs = config.classes_per_task * (config.max_tasks if config.head_mode == "sliced" else 1)
        self.net = Mlp([config.input_dim, *config.hidden, outputs], seed=_seed(seed, 0))
        self.seen_tasks = config.max_tasks

    def forward_task(self, x, k: int) -> Tensor:
        if not 1 <= int(k) <= self.config.max_tasks:
            raise IndexError(f"task {k} not in 1..{self.config.max_tasks}")
        out = self.net(_as_input(x))
        if self.config.head_mode == "shared":
            return out
        c = self.config.classes_per_task
        cols = np.arange((k - 1) * c, k * c)
        return out.T.rows(cols).T

    def parameters(self) -> list[Tensor]:
        return self.net.parameters()

    def num_parameters(self) -> int:
        return self.net.num_parameters()

    def parameter_counts(self) -> dict:
        return {"total": self.num_parameters()}
