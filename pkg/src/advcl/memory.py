"""Episodic replay memory with a fixed per-task, per-class budget."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .container import read_container, write_container
from .data import TaskDataset, as_float
from .errors import BudgetError, ContractError, DataError
from .losses import JointBatch

BYTES_PER_VALUE = 4


def uniform_selector(labels: np.ndarray, cls: int, count: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Pick ``count`` row indices of class ``cls`` uniformly without replacement."""
    pool = np.flatnonzero(labels == cls)
    if len(pool) < count:
        raise DataError(f"class {cls} has {len(pool)} samples, need {count}")
    return np.sort(rng.choice(pool, size=count, replace=False))


@dataclass(frozen=True)
class MemoryBlock:
    """Samples stored for one task; arrays are read-only."""

    task: int
    x: np.ndarray
    y: np.ndarray


@dataclass
class EpisodicMemory:
    per_task_budget: int
    classes_per_task: int
    blocks: tuple = ()

    def __post_init__(self):
        if self.per_task_budget < 0:
            raise BudgetError("budget must be non-negative")
        if self.per_task_budget % self.classes_per_task:
            raise BudgetError(f"budget m={self.per_task_budget} not divisible by "
                              f"C={self.classes_per_task}")

    @property
    def samples_per_class(self) -> int:
        return self.per_task_budget // self.classes_per_task

    def __len__(self) -> int:
        return sum(len(b.y) for b in self.blocks)

    @property
    def tasks(self) -> list[int]:
        return [b.task for b in self.blocks]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stacked ``(x, y, t)`` over all stored tasks, x as float64."""
        if not self.blocks:
            return np.empty((0, 0)), np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp)
        x = np.concatenate([as_float(b.x) for b in self.blocks])
        y = np.concatenate([b.y for b in self.blocks]).astype(np.intp)
        t = np.concatenate([np.full(len(b.y), b.task, dtype=np.intp) for b in self.blocks])
        return x, y, t

    def save(self, path) -> None:
        blocks, tasks, raw_dtypes = [], [], []
        for b in self.blocks:
            blocks.append((f"task.{b.task}.x", b.x.astype(np.float64)))
            blocks.append((f"task.{b.task}.y", b.y.astype(np.float64)))
            tasks.append(b.task)
            raw_dtypes.append(str(b.x.dtype))
        meta = {"kind": "episodic_memory", "per_task_budget": self.per_task_budget,
                "classes_per_task": self.classes_per_task, "tasks": tasks,
                "x_dtypes": raw_dtypes}
        write_container(path, meta, blocks)

    @classmethod
    def load(cls, path) -> "EpisodicMemory":
        meta, arrays = read_container(path)
        if meta.get("kind") != "episodic_memory":
            raise ContractError(f"{path} is not a replay-memory dump")
        values = dict(arrays)
        blocks = []
        for task, dtype in zip(meta["tasks"], meta["x_dtypes"]):
            x = _readonly(values[f"task.{task}.x"].astype(dtype))
            y = _readonly(values[f"task.{task}.y"].astype(np.intp))
            blocks.append(MemoryBlock(task, x, y))
        return cls(meta["per_task_budget"], meta["classes_per_task"], tuple(blocks))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def update_memory(mem: EpisodicMemory, dataset: TaskDataset, seed=None,
                  selector: Callable = uniform_selector) -> EpisodicMemory:
    """Return a new memory holding ``m / C`` training samples per class of
    ``dataset`` on top of every previously stored block."""
    if dataset.task in mem.tasks:
        raise ContractError(f"task {dataset.task} is already stored")
    rng = np.random.default_rng(seed)
    s = mem.samples_per_class
    labels = dataset.train.y
    idx = np.concatenate([selector(labels, c, s, rng) for c in range(mem.classes_per_task)])
    block = MemoryBlock(dataset.task, _readonly(dataset.train.x[idx]), _readonly(labels[idx]))
    return EpisodicMemory(mem.per_task_budget, mem.classes_per_task, mem.blocks + (block,))


def joint_batches(dataset: TaskDataset, mem: EpisodicMemory | None, batch_size: int,
                  rng: np.random.Generator) -> Iterator[JointBatch]:
    """One epoch over the current task's training split plus all memory.

    The union is shuffled and each element appears exactly once; the last
    batch may be short.
    """
    if batch_size < 1:
        raise ContractError("batch_size must be at least 1")
    x_cur = dataset.train.x
    n_cur = len(dataset.train.y)
    if mem is not None and len(mem):
        x_mem, y_mem, t_mem = mem.arrays()
    else:
        x_mem = np.empty((0,) + x_cur.shape[1:])
        y_mem = t_mem = np.empty(0, dtype=np.intp)
    total = n_cur + len(y_mem)
    if total == 0:
        raise DataError("no samples in the current task or memory")
    order = rng.permutation(total)
    for start in range(0, total, batch_size):
        sel = order[start:start + batch_size]
        cur = sel[sel < n_cur]
        old = sel[sel >= n_cur] - n_cur
        x = np.concatenate([as_float(x_cur[cur]), x_mem[old]]) if len(old) else as_float(x_cur[cur])
        y = np.concatenate([dataset.train.y[cur], y_mem[old]])
        t = np.concatenate([np.full(len(cur), dataset.task, dtype=np.intp), t_mem[old]])
        flags = np.concatenate([np.zeros(len(cur), bool), np.ones(len(old), bool)])
        yield JointBatch(x, y, t, flags)


def memory_bytes(mem: EpisodicMemory, bytes_per_value: int = BYTES_PER_VALUE) -> int:
    """Storage of all entries at ``bytes_per_value`` bytes per stored number."""
    return int(sum(b.x.size for b in mem.blocks)) * int(bytes_per_value)


def multitask_batches(tasks: list[TaskDataset], batch_size: int,
                      rng: np.random.Generator) -> Iterator[JointBatch]:
    """One shuffled epoch over the training splits of several tasks at once."""
    if batch_size < 1:
        raise ContractError("batch_size must be at least 1")
    sizes = [len(t.train) for t in tasks]
    total = sum(sizes)
    if total == 0:
        raise DataError("no training samples")
    owner = np.repeat(np.arange(len(tasks)), sizes)
    local = np.concatenate([np.arange(n) for n in sizes])
    order = rng.permutation(total)
    for start in range(0, total, batch_size):
        sel = np.sort(order[start:start + batch_size])
        xs, ys, ts = [], [], []
        for j in np.unique(owner[sel]):
            rows = local[sel[owner[sel] == j]]
            xs.append(as_float(tasks[j].train.x[rows]))
            ys.append(tasks[j].train.y[rows])
            ts.append(np.full(len(rows), tasks[j].task, dtype=np.intp))
        yield JointBatch(np.concatenate(xs), np.concatenate(ys), np.concatenate(ts))
