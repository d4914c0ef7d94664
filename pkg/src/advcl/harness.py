"""Sequential training and evaluation of ACL and the ordinary baselines.

The per-batch update follows the ACL training loop: shared, private and
adversarial terms are combined and applied to the shared encoder and the
current task's private module and head, then the discriminator takes its
own step on detached shared features plus Gaussian fakes.
"""
from __future__ import annotations

import dataclasses
import functools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import data as data_mod
from .data import TaskDataset, as_float
from .errors import AclError, ConfigError, DataError, TrainingError
from .losses import (JointBatch, adv_loss_for_D, adv_loss_for_S, diff_loss,
                     diff_loss_joint, encode, task_loss, total_loss)
from .memory import EpisodicMemory, joint_batches, memory_bytes, multitask_batches, update_memory
from .metrics import ResultMatrix, acc, arch_bytes, bwt, format_mb
from .model import AclConfig, AclModel, OrdConfig, OrdNet
from .nn import SGD, PlateauDecay
from .tensor import backward, no_grad, softmax_cross_entropy, zero_grad

log = logging.getLogger(__name__)

# Cumulative ablation rows: (S, P, D, L_diff, RB)
ABLATION_ROWS = (
    (True, False, False, False, False),
    (False, True, False, False, False),
    (True, False, True, False, False),
    (True, True, False, True, False),
    (True, True, False, False, False),
    (True, True, False, False, True),
    (True, True, False, True, True),
    (True, True, True, False, False),
    (True, True, True, True, False),
    (True, True, True, False, True),
    (True, True, True, True, True),
)
SWITCH_NAMES = ("use_shared", "use_private", "use_disc", "use_diff", "use_replay")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a run.

    ``dataset`` is a dict with ``kind`` in ``split_mnist``,
    ``permuted_mnist`` or ``synthetic`` plus that generator's arguments.
    Task count, classes per task and input width of ``model`` are taken
    from the generated tasks.
    """

    name: str = "split_mnist"
    dataset: dict = field(default_factory=lambda: {"kind": "split_mnist"})
    model: AclConfig = field(default_factory=AclConfig)
    ord: OrdConfig = field(default_factory=OrdConfig)
    lr_shared: float = 0.05
    lr_private: float = 0.05
    lr_disc: float = 0.05
    lr_decay: float = 0.8
    lr_patience: int = 3
    epochs: int = 5
    batch_size: int = 64
    memory_per_task: int = 0
    use_shared: bool = True
    use_private: bool = True
    use_disc: bool = True
    use_diff: bool = True
    use_replay: bool = False
    diff_on_memory: bool = False
    diff_mode: str = "normalized"
    freeze_shared_after: int = 0
    noise_ratio: float = 1.0
    eval_batch: int = 2000
    seeds: list = field(default_factory=lambda: [1, 2, 3])

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = AclConfig(**self.model)
        if isinstance(self.ord, dict):
            self.ord = OrdConfig(**self.ord)
        self.seeds = [int(s) for s in self.seeds]
        self.validate()

    def validate(self) -> None:
        if self.use_disc and not self.use_shared:
            raise ConfigError("the discriminator needs the shared module", "use_disc")
        if self.use_diff and not (self.use_shared and self.use_private):
            raise ConfigError("the difference loss needs shared and private modules", "use_diff")
        if not (self.use_shared or self.use_private):
            raise ConfigError("enable the shared or the private module", "use_shared")
        for key in ("epochs", "batch_size", "eval_batch"):
            if getattr(self, key) < 1:
                raise ConfigError("must be at least 1", key)
        if self.memory_per_task < 0:
            raise ConfigError("must be non-negative", "memory_per_task")
        for key in ("lr_shared", "lr_private", "lr_disc"):
            if getattr(self, key) <= 0:
                raise ConfigError("learning rates must be positive", key)
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("must lie in (0, 1]", "lr_decay")
        if self.diff_mode not in ("normalized", "sum"):
            raise ConfigError("must be 'normalized' or 'sum'", "diff_mode")
        if self.noise_ratio < 0:
            raise ConfigError("must be non-negative", "noise_ratio")
        if "kind" not in self.dataset:
            raise ConfigError("missing dataset kind", "dataset.kind")
        if self.dataset["kind"] not in ("split_mnist", "permuted_mnist", "synthetic"):
            raise ConfigError(f"unknown dataset kind {self.dataset['kind']!r}", "dataset.kind")

    @property
    def replay(self) -> bool:
        return self.use_replay and self.memory_per_task > 0

    @property
    def switches(self) -> tuple:
        return tuple(getattr(self, n) for n in SWITCH_NAMES)

    def with_switches(self, switches) -> "ExperimentConfig":
        return dataclasses.replace(self, **dict(zip(SWITCH_NAMES, switches)))

    def model_config(self, tasks: list[TaskDataset]) -> AclConfig:
        return dataclasses.replace(
            self.model,
            input_dim=tasks[0].input_dim,
            classes_per_task=tasks[0].classes,
            max_tasks=len(tasks),
            use_shared=self.use_shared,
            use_private=self.use_private,
            use_discriminator=self.use_disc,
        )

    def ord_config(self, tasks: list[TaskDataset]) -> OrdConfig:
        return dataclasses.replace(self.ord, input_dim=tasks[0].input_dim,
                                   classes_per_task=tasks[0].classes, max_tasks=len(tasks))

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["model"] = self.model.to_dict()
        d["ord"] = self.ord.to_dict()
        d["dataset"] = dict(self.dataset)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        _check_keys(d, {f.name for f in dataclasses.fields(cls)}, "")
        if "model" in d:
            _check_keys(d["model"], {f.name for f in dataclasses.fields(AclConfig)}, "model.")
        if "ord" in d:
            _check_keys(d["ord"], {f.name for f in dataclasses.fields(OrdConfig)}, "ord.")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def _check_keys(d, allowed, prefix) -> None:
    if not isinstance(d, dict):
        raise ConfigError("expected an object", prefix.rstrip(".") or "<root>")
    for key in d:
        if key not in allowed:
            raise ConfigError("unknown key", prefix + key)


@dataclass
class RunRecord:
    method: str
    seed: int
    R: ResultMatrix
    acc: float
    bwt: float | None
    structural_zero: bool
    task_seconds: list
    param_counts: dict
    arch_bytes: int
    memory_bytes: int
    config: dict
    extra: dict = field(default_factory=dict)

    @property
    def arch_mb(self) -> str:
        return format_mb(self.arch_bytes)

    @property
    def memory_mb(self) -> str:
        return format_mb(self.memory_bytes)

    def to_dict(self) -> dict:
        return {
            "method": self.method, "seed": self.seed, "R": self.R.to_list(),
            "acc": self.acc, "bwt": self.bwt, "structural_zero": self.structural_zero,
            "task_seconds": list(self.task_seconds), "param_counts": self.param_counts,
            "arch_bytes": self.arch_bytes, "arch_mb": self.arch_mb,
            "memory_bytes": self.memory_bytes, "memory_mb": self.memory_mb,
            "config": self.config, "extra": self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(d["method"], d["seed"], ResultMatrix.from_list(d["R"]), d["acc"], d["bwt"],
                   d["structural_zero"], d["task_seconds"], d["param_counts"],
                   d["arch_bytes"], d["memory_bytes"], d["config"], d.get("extra", {}))


# -- data -------------------------------------------------------------------------
@functools.lru_cache(maxsize=4)
def _load_tasks_cached(spec_json: str, data_dir: str | None) -> tuple:
    spec = json.loads(spec_json)
    kind = spec.pop("kind")
    if kind == "synthetic":
        return tuple(data_mod.make_synthetic_tasks(**spec))
    train, test = data_mod.load_mnist(data_dir)
    if kind == "split_mnist":
        pairs = tuple(tuple(p) for p in spec.pop("pairs", data_mod.SPLIT_MNIST_PAIRS))
        return tuple(data_mod.make_split_tasks(train, test, pairs, **spec))
    if kind == "permuted_mnist":
        return tuple(data_mod.make_permuted_tasks(train, test, **spec))
    raise ConfigError(f"unknown dataset kind {kind!r}", "dataset.kind")


def load_tasks(dataset: dict, data_dir=None) -> list[TaskDataset]:
    spec = dict(dataset)
    data_dir = spec.pop("data_dir", data_dir)
    return list(_load_tasks_cached(json.dumps(spec, sort_keys=True),
                                   None if data_dir is None else str(data_dir)))


# -- evaluation -------------------------------------------------------------------
def predict(model, x: np.ndarray, k: int, batch: int = 2000) -> np.ndarray:
    """Argmax class of ``model.forward_task`` (ties go to the lowest index)."""
    preds = []
    with no_grad():
        for start in range(0, len(x), batch):
            logits = model.forward_task(as_float(x[start:start + batch]), k).data
            preds.append(np.argmax(logits, axis=1))
    return np.concatenate(preds) if preds else np.empty(0, dtype=np.intp)


def accuracy(model, split, k: int, batch: int = 2000) -> float:
    if len(split) == 0:
        raise DataError(f"empty test split for task {k}")
    return float(np.mean(predict(model, split.x, k, batch) == split.y))


def evaluate(model, tasks: list[TaskDataset], batch: int = 2000) -> list[float]:
    """Test accuracy on each given task, using each task's own label."""
    if any(t is None for t in tasks):
        raise DataError("missing test set")
    return [accuracy(model, t.test, t.task, batch) for t in tasks]


def validation_loss(model, task: TaskDataset, batch: int = 2000) -> float:
    if len(task.valid) == 0:
        return 0.0
    total = 0.0
    with no_grad():
        for start in range(0, len(task.valid), batch):
            xb = as_float(task.valid.x[start:start + batch])
            yb = task.valid.y[start:start + batch]
            total += softmax_cross_entropy(model.forward_task(xb, task.task), yb).item() * len(yb)
    return total / len(task.valid)


# -- ACL --------------------------------------------------------------------------
def acl_step(model: AclModel, batch: JointBatch, k: int, config: ExperimentConfig,
             opt: SGD, rng: np.random.Generator, trainable_tasks=None) -> dict:
    """One update of shared/private modules followed by one of D.

    ``trainable_tasks`` lists the tasks whose private module and head are
    stepped (default: only the current task ``k``).
    """
    features = encode(model, batch)
    l_task = task_loss(model, batch, features)
    l_adv = adv_loss_for_S(model, batch, features) if config.use_disc else None
    l_diff = None
    if config.use_diff:
        norm = config.diff_mode == "normalized"
        if config.diff_on_memory:
            l_diff = diff_loss_joint(model, batch, features, norm)
        elif k in features.groups:
            l_diff = diff_loss(model, None, k, features, norm)
    loss = total_loss(model.config.lambdas, l_adv, l_task, l_diff)
    out = {"task": l_task.item(), "adv": None if l_adv is None else l_adv.item(),
           "diff": None if l_diff is None else l_diff.item()}
    if loss.requires_grad:
        backward(loss)
        if model.shared is not None:
            opt.step("shared", model.shared_parameters())
        tasks = [k] if trainable_tasks is None else trainable_tasks
        for j in tasks:
            if j in features.groups:
                opt.step("private", model.task_parameters(j))
    zero_grad(model.parameters())
    if config.use_disc:
        with no_grad():
            z = model.encode_shared(batch.x).data
        noise_n = int(round(config.noise_ratio * len(batch)))
        l_d = adv_loss_for_D(model, batch, noise_n, rng, z_shared=z)
        backward(l_d)
        opt.step("discriminator", model.discriminator_parameters())
        out["disc"] = l_d.item()
    return out


def _optimizer(config: ExperimentConfig) -> SGD:
    return SGD({"shared": config.lr_shared, "private": config.lr_private,
                "discriminator": config.lr_disc}, decay_factor=config.lr_decay)


def _structural_zero(config: ExperimentConfig) -> bool:
    return (not config.use_shared) or config.freeze_shared_after == 1


def train_acl(config: ExperimentConfig, seed: int = 0, tasks=None,
              on_task_end: Callable | None = None) -> RunRecord:
    """Learn the tasks in order; fill row k of R after task k.

    ``on_task_end(k, model, R, memory)`` is called after each task.
    """
    tasks = load_tasks(config.dataset) if tasks is None else list(tasks)
    T = len(tasks)
    model = AclModel(config.model_config(tasks), seed=seed)
    mem = EpisodicMemory(config.memory_per_task if config.replay else 0,
                         tasks[0].classes)
    rng = np.random.default_rng([seed, 1])
    opt = _optimizer(config)
    R = ResultMatrix(T)
    seconds = []
    for k, task in enumerate(tasks, start=1):
        start = time.perf_counter()
        try:
            if k > 1:
                model.grow()
            if config.freeze_shared_after and k > config.freeze_shared_after and model.shared:
                model.shared.freeze()
            opt.reset()
            plateau = PlateauDecay(opt, config.lr_patience)
            for epoch in range(config.epochs):
                for batch in joint_batches(task, mem if config.replay else None,
                                           config.batch_size, rng):
                    acl_step(model, batch, k, config, opt, rng)
                plateau.update(validation_loss(model, task, config.eval_batch))
            if config.replay:
                mem = update_memory(mem, task, seed=[seed, k, 2])
            model.freeze_task(k)
            R.set_row(k, evaluate(model, tasks[:k], config.eval_batch))
        except AclError as exc:
            raise TrainingError(k, exc) from exc
        seconds.append(time.perf_counter() - start)
        log.info("acl seed=%s task=%d R=%s", seed, k, np.round(R.values[k - 1, :k], 4))
        if on_task_end is not None:
            on_task_end(k, model, R, mem)
    return RunRecord(
        method="ACL", seed=seed, R=R, acc=acc(R),
        bwt=bwt(R) if T > 1 else None,
        structural_zero=_structural_zero(config),
        task_seconds=seconds, param_counts=model.parameter_counts(),
        arch_bytes=arch_bytes(model), memory_bytes=memory_bytes(mem),
        config=config.to_dict(),
    )


# -- ordinary network ---------------------------------------------------------------
def _ord_loss(net: OrdNet, batch: JointBatch):
    if net.config.head_mode == "shared":
        return softmax_cross_entropy(net.forward_task(batch.x, 1), batch.y)
    n, total = len(batch), None
    for k in batch.tasks():
        idx = np.flatnonzero(batch.t == k)
        term = softmax_cross_entropy(net.forward_task(batch.x[idx], k), batch.y[idx]) * (len(idx) / n)
        total = term if total is None else total + term
    return total


def _ord_epoch(net, batches, opt) -> None:
    for batch in batches:
        loss = _ord_loss(net, batch)
        backward(loss)
        opt.step("shared", net.parameters())


def train_ord_ft(config: ExperimentConfig, seed: int = 0, tasks=None) -> RunRecord:
    """Fine-tune one ordinary network through the task sequence.

    No growth and no adversary; replay is used only when the config asks
    for it (the replay control of the sweep).
    """
    tasks = load_tasks(config.dataset) if tasks is None else list(tasks)
    T = len(tasks)
    net = OrdNet(config.ord_config(tasks), seed=seed)
    mem = EpisodicMemory(config.memory_per_task if config.replay else 0, tasks[0].classes)
    rng = np.random.default_rng([seed, 1])
    opt = _optimizer(config)
    R = ResultMatrix(T)
    seconds = []
    for k, task in enumerate(tasks, start=1):
        start = time.perf_counter()
        opt.reset()
        plateau = PlateauDecay(opt, config.lr_patience)
        for epoch in range(config.epochs):
            _ord_epoch(net, joint_batches(task, mem if config.replay else None,
                                          config.batch_size, rng), opt)
            plateau.update(validation_loss(net, task, config.eval_batch))
        if config.replay:
            mem = update_memory(mem, task, seed=[seed, k, 2])
        R.set_row(k, evaluate(net, tasks[:k], config.eval_batch))
        seconds.append(time.perf_counter() - start)
        log.info("ord-ft seed=%s task=%d R=%s", seed, k, np.round(R.values[k - 1, :k], 4))
    return RunRecord(
        method="ORD-FT" + ("+RB" if config.replay else ""), seed=seed, R=R, acc=acc(R),
        bwt=bwt(R) if T > 1 else None, structural_zero=False, task_seconds=seconds,
        param_counts=net.parameter_counts(), arch_bytes=arch_bytes(net),
        memory_bytes=memory_bytes(mem), config=config.to_dict(),
    )


def _joint_validation_loss(model, tasks, batch) -> float:
    n = sum(len(t.valid) for t in tasks)
    if n == 0:
        return 0.0
    return sum(validation_loss(model, t, batch) * len(t.valid) for t in tasks) / n


def train_joint(config: ExperimentConfig, seed: int = 0, use_acl_architecture: bool = False,
                tasks=None) -> RunRecord:
    """Multitask training on the union of all tasks (ORD-JT or ACL-JT).

    Only the final row of R is filled, so BWT is not reported.  ORD-JT
    always reads task-specific output slices: as an upper bound it is given
    the task identity, whatever ``config.ord.head_mode`` says.
    """
    tasks = load_tasks(config.dataset) if tasks is None else list(tasks)
    T = len(tasks)
    rng = np.random.default_rng([seed, 1])
    opt = _optimizer(config)
    plateau = PlateauDecay(opt, config.lr_patience)
    start = time.perf_counter()
    if use_acl_architecture:
        model = AclModel(config.model_config(tasks), seed=seed)
        while model.seen_tasks < T:
            model.grow()
        model.unfreeze_all()
        everything = list(range(1, T + 1))
        for epoch in range(config.epochs):
            for batch in multitask_batches(tasks, config.batch_size, rng):
                acl_step(model, batch, T, config, opt, rng, trainable_tasks=everything)
            plateau.update(_joint_validation_loss(model, tasks, config.eval_batch))
        method, counts = "ACL-JT", model.parameter_counts()
    else:
        ord_cfg = dataclasses.replace(config.ord_config(tasks), head_mode="sliced")
        model = OrdNet(ord_cfg, seed=seed)
        for epoch in range(config.epochs):
            _ord_epoch(model, multitask_batches(tasks, config.batch_size, rng), opt)
            plateau.update(_joint_validation_loss(model, tasks, config.eval_batch))
        method, counts = "ORD-JT", model.parameter_counts()
    R = ResultMatrix(T)
    R.set_row(T, evaluate(model, tasks, config.eval_batch))
    stored = sum(t.train.x.size + t.valid.x.size for t in tasks)
    return RunRecord(
        method=method, seed=seed, R=R, acc=acc(R), bwt=None, structural_zero=False,
        task_seconds=[time.perf_counter() - start], param_counts=counts,
        arch_bytes=arch_bytes(model), memory_bytes=4 * stored, config=config.to_dict(),
    )


def reference_accuracies(config: ExperimentConfig, seed: int = 0, tasks=None,
                         use_acl_architecture: bool = True) -> list[float]:
    """``a*_k``: accuracy on task k of a joint model trained on tasks 1..k."""
    tasks = load_tasks(config.dataset) if tasks is None else list(tasks)
    out = []
    for k in range(1, len(tasks) + 1):
        rec = train_joint(config, seed, use_acl_architecture, tasks=tasks[:k])
        out.append(rec.R.get(k, k))
    return out


# -- grids ------------------------------------------------------------------------
METHODS = {
    "acl": lambda cfg, seed: train_acl(cfg, seed),
    "ord-ft": lambda cfg, seed: train_ord_ft(cfg, seed),
    "ord-jt": lambda cfg, seed: train_joint(cfg, seed, False),
    "acl-jt": lambda cfg, seed: train_joint(cfg, seed, True),
}


def _run_job(job) -> dict:
    method, cfg_dict, seed = job
    return METHODS[method](ExperimentConfig.from_dict(cfg_dict), seed).to_dict()


def run_many(jobs: list[tuple[str, ExperimentConfig, int]], workers: int = 1) -> list[RunRecord]:
    """Run independent (method, config, seed) jobs, optionally in worker processes."""
    payload = [(m, c.to_dict(), s) for m, c, s in jobs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            dicts = list(pool.map(_run_job, payload))
    else:
        dicts = [_run_job(p) for p in payload]
    return [RunRecord.from_dict(d) for d in dicts]


def summarize(records: list[RunRecord]) -> dict:
    accs = np.array([r.acc for r in records])
    bwts = [r.bwt for r in records if r.bwt is not None]
    return {
        "acc_mean": float(accs.mean()), "acc_std": float(accs.std()),
        "bwt_mean": float(np.mean(bwts)) if bwts else None,
        "bwt_std": float(np.std(bwts)) if bwts else None,
        "structural_zero": all(r.structural_zero for r in records),
    }


def run_ablation_grid(config: ExperimentConfig, rows=None, seeds=None,
                      workers: int = 1) -> list[dict]:
    """One row per cumulative ablation setting, averaged over seeds.

    ``rows`` selects 1-based row numbers (default all eleven).  Rows with
    replay use ``memory_per_task``, or one sample per class when it is 0.
    """
    rows = list(range(1, len(ABLATION_ROWS) + 1)) if rows is None else list(rows)
    seeds = config.seeds if seeds is None else list(seeds)
    jobs, labels = [], []
    for r in rows:
        if not 1 <= r <= len(ABLATION_ROWS):
            raise ConfigError(f"no ablation row {r}", "rows")
        switches = ABLATION_ROWS[r - 1]
        cfg = config.with_switches(switches)
        if cfg.use_replay and cfg.memory_per_task == 0:
            cfg = dataclasses.replace(cfg, memory_per_task=_classes_per_task(config))
        for s in seeds:
            jobs.append(("acl", cfg, s))
            labels.append(r)
    records = run_many(jobs, workers)
    table = []
    for r in rows:
        recs = [rec for rec, lab in zip(records, labels) if lab == r]
        row = {"row": r, **dict(zip(("S", "P", "D", "diff", "RB"), ABLATION_ROWS[r - 1]))}
        row.update(summarize(recs))
        row["records"] = recs
        table.append(row)
    return table


def _classes_per_task(config: ExperimentConfig) -> int:
    return load_tasks(config.dataset)[0].classes


def replay_sweep(config: ExperimentConfig, samples_per_class, method: str = "acl",
                 seeds=None, workers: int = 1) -> list[dict]:
    """ACC/BWT for each replay size ``s`` (``m = s * C``; ``s = 0`` disables replay)."""
    seeds = config.seeds if seeds is None else list(seeds)
    C = _classes_per_task(config)
    jobs, labels = [], []
    for s in samples_per_class:
        if s < 0:
            raise ConfigError("samples per class must be non-negative", "samples_per_class")
        cfg = dataclasses.replace(config, memory_per_task=int(s) * C, use_replay=s > 0)
        for seed in seeds:
            jobs.append((method, cfg, seed))
            labels.append(s)
    records = run_many(jobs, workers)
    table = []
    for s in samples_per_class:
        recs = [rec for rec, lab in zip(records, labels) if lab == s]
        row = {"method": method, "samples_per_class": s}
        row.update(summarize(recs))
        row["records"] = recs
        table.append(row)
    return table
