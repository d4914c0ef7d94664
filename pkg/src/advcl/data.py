"""MNIST IDX parsing and task-stream construction.

MNIST-derived tasks keep their pixels as ``uint8`` and are scaled to
``[0, 1]`` in steps of 1/255 when a batch is materialized (:func:`as_float`),
which keeps ten permuted copies of MNIST within a few hundred megabytes.
"""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError, LengthError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
SPLIT_MNIST_PAIRS = ((0, 1), (2, 3), (4, 5), (6, 7), (8, 9))


def as_float(x: np.ndarray) -> np.ndarray:
    """Inputs as float64; raw ``uint8`` pixels are divided by 255."""
    if x.dtype == np.uint8:
        return x / 255.0
    return np.asarray(x, dtype=np.float64)


# -- IDX files ------------------------------------------------------------------
def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    """Parse an unsigned-byte IDX file (optionally gzip-compressed)."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise LengthError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if expected_magic is not None and magic != expected_magic:
        raise FormatError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    if magic >> 16 != 0 or (magic >> 8) & 0xFF != 0x08:
        raise FormatError(f"{path}: magic 0x{magic:08x} is not an unsigned-byte IDX file")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise LengthError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header < count:
        raise LengthError(f"{path}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


@dataclass
class RawSplit:
    """Images as raw bytes (n, rows, cols) and digit labels."""

    pixels: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def images(self) -> np.ndarray:
        return self.pixels / 255.0

    def flat(self) -> np.ndarray:
        return self.pixels.reshape(len(self.pixels), -1)


def load_idx(images_path, labels_path) -> RawSplit:
    pixels = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if len(pixels) != len(labels):
        raise FormatError(f"{len(pixels)} images but {len(labels)} labels")
    return RawSplit(pixels, labels.astype(np.intp))


def default_data_dir() -> Path:
    env = os.environ.get("ACL_DATA_DIR")
    if env:
        return Path(env)
    local = Path.cwd() / "data" / "mnist"
    if local.is_dir():
        return local
    return Path.home() / ".cache" / "advcl" / "mnist"


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        if (directory / name).exists():
            return directory / name
    raise DataError(f"{stem}[.gz] not found in {directory}")


def load_mnist(data_dir=None) -> tuple[RawSplit, RawSplit]:
    """Load the MNIST train and test splits from ``data_dir``
    (default: ``$ACL_DATA_DIR``, then ``./data/mnist``)."""
    directory = Path(data_dir) if data_dir is not None else default_data_dir()
    out = []
    for split in ("train", "test"):
        img, lab = MNIST_FILES[split]
        out.append(load_idx(_find(directory, img), _find(directory, lab)))
    return out[0], out[1]


# -- tasks ------------------------------------------------------------------------
@dataclass
class Split:
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    def inputs(self) -> np.ndarray:
        return as_float(self.x)


@dataclass
class TaskDataset:
    """One task: train/valid/test splits with within-task labels.

    ``task`` is the 1-based task label carried by every sample.
    ``source_index`` records which raw rows fed each split.
    """

    task: int
    train: Split
    valid: Split
    test: Split
    class_map: dict = field(default_factory=dict)
    source_index: dict = field(default_factory=dict)
    permutation: np.ndarray | None = None

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.train.x.shape[1:]))

    @property
    def classes(self) -> int:
        return len(self.class_map)


def _split_train_valid(n: int, valid_fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    order = rng.permutation(n)
    n_valid = int(np.floor(valid_fraction * n))
    return np.sort(order[n_valid:]), np.sort(order[:n_valid])


def make_split_tasks(train: RawSplit, test: RawSplit, pairs=SPLIT_MNIST_PAIRS,
                     valid_fraction: float = 0.15, seed: int = 0) -> list[TaskDataset]:
    """Class-split tasks, e.g. 5-Split MNIST with digit pairs (0,1) ... (8,9)."""
    flat = [c for group in pairs for c in group]
    if len(set(flat)) != len(flat):
        raise ConfigError(f"class groups overlap: {pairs}", "dataset.pairs")
    x_train, x_test = train.flat(), test.flat()
    tasks = []
    for k, group in enumerate(pairs, start=1):
        class_map = {int(c): i for i, c in enumerate(group)}
        lookup = np.full(max(int(train.labels.max()), int(test.labels.max()), *group) + 1, -1)
        for c, i in class_map.items():
            lookup[c] = i
        pool = np.flatnonzero(np.isin(train.labels, group))
        rng = np.random.default_rng([seed, k])
        tr, va = _split_train_valid(len(pool), valid_fraction, rng)
        tr, va = pool[tr], pool[va]
        te = np.flatnonzero(np.isin(test.labels, group))
        tasks.append(TaskDataset(
            task=k,
            train=Split(x_train[tr], lookup[train.labels[tr]]),
            valid=Split(x_train[va], lookup[train.labels[va]]),
            test=Split(x_test[te], lookup[test.labels[te]]),
            class_map=class_map,
            source_index={"train": tr, "valid": va, "test": te},
        ))
    return tasks


def make_permuted_tasks(train: RawSplit, test: RawSplit, n_tasks: int, seed: int = 0,
                        valid_fraction: float = 0.15, subsample: float = 1.0) -> list[TaskDataset]:
    """Permuted-pixel tasks over all ten digits.

    Task 1 keeps the identity permutation.  ``subsample`` keeps that
    fraction of the train and valid rows (test stays complete).
    """
    if n_tasks < 1:
        raise ConfigError("need at least one task", "dataset.n_tasks")
    if not 0 < subsample <= 1:
        raise ConfigError("subsample must lie in (0, 1]", "dataset.subsample")
    rng = np.random.default_rng(seed)
    tr, va = _split_train_valid(len(train), valid_fraction, rng)
    if subsample < 1:
        tr = np.sort(rng.choice(tr, size=int(round(subsample * len(tr))), replace=False))
        va = np.sort(rng.choice(va, size=int(round(subsample * len(va))), replace=False))
    x_train, x_test = train.flat(), test.flat()
    d = x_train.shape[1]
    classes = {int(c): int(c) for c in range(10)}
    tasks = []
    for k in range(1, n_tasks + 1):
        perm = np.arange(d) if k == 1 else rng.permutation(d)
        tasks.append(TaskDataset(
            task=k,
            train=Split(x_train[tr][:, perm], train.labels[tr]),
            valid=Split(x_train[va][:, perm], train.labels[va]),
            test=Split(x_test[:, perm], test.labels.copy()),
            class_map=classes,
            source_index={"train": tr, "valid": va, "test": np.arange(len(test))},
            permutation=perm,
        ))
    return tasks


def make_synthetic_tasks(n_tasks: int, classes_per_task: int, input_dim: int,
                         n_per_class: int, seed: int = 0, mean_norm: float = 3.0,
                         n_valid_per_class: int | None = None,
                         n_test_per_class: int | None = None) -> list[TaskDataset]:
    """Gaussian-cluster tasks with unit covariance.

    Each task draws its own class means, isotropically at distance
    ``mean_norm`` from the origin.
    """
    if min(n_tasks, classes_per_task, input_dim, n_per_class) < 1:
        raise ConfigError("synthetic task counts must be positive", "dataset")
    n_valid = max(1, n_per_class // 4) if n_valid_per_class is None else n_valid_per_class
    n_test = n_per_class if n_test_per_class is None else n_test_per_class
    rng = np.random.default_rng(seed)
    tasks = []
    for k in range(1, n_tasks + 1):
        means = rng.standard_normal((classes_per_task, input_dim))
        means *= mean_norm / np.linalg.norm(means, axis=1, keepdims=True)

        def draw(per_class):
            y = np.repeat(np.arange(classes_per_task), per_class)
            x = means[y] + rng.standard_normal((len(y), input_dim))
            return Split(x, y.astype(np.intp))

        tasks.append(TaskDataset(k, draw(n_per_class), draw(n_valid), draw(n_test),
                                 class_map={c: c for c in range(classes_per_task)}))
    return tasks
