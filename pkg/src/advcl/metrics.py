"""Average accuracy, backward transfer, intransigence and memory sizes."""
from __future__ import annotations

import csv
import io

import numpy as np

from .errors import ContractError, UndefinedMetricError

BYTES_PER_PARAMETER = 4
BYTES_PER_MB = 10 ** 6


class ResultMatrix:
    """T x T accuracies; ``R[n, i]`` is accuracy on task i after training task n.

    Indices are 1-based in :meth:`set` / :meth:`get` and 0-based on the raw
    ``values`` array.  Unset cells (including the whole upper triangle)
    hold NaN.
    """

    def __init__(self, n_tasks: int, values=None):
        self.n_tasks = int(n_tasks)
        if values is None:
            values = np.full((self.n_tasks, self.n_tasks), np.nan)
        self.values = np.array(values, dtype=np.float64)
        if self.values.shape != (self.n_tasks, self.n_tasks):
            raise ContractError(f"result matrix must be {self.n_tasks}x{self.n_tasks}")
        upper = np.triu_indices(self.n_tasks, k=1)
        if not np.all(np.isnan(self.values[upper])):
            raise ContractError("entries above the diagonal must stay unset")
        lower = self.values[np.tril_indices(self.n_tasks)]
        lower = lower[~np.isnan(lower)]
        if np.any(lower < 0) or np.any(lower > 1):
            raise ContractError("accuracies must lie in [0, 1]")

    def set(self, n: int, i: int, accuracy: float) -> None:
        if not 1 <= i <= n <= self.n_tasks:
            raise ContractError(f"cannot write R[{n},{i}]: need 1 <= i <= n <= {self.n_tasks}")
        if not 0.0 <= accuracy <= 1.0:
            raise ContractError(f"accuracy {accuracy} outside [0, 1]")
        self.values[n - 1, i - 1] = accuracy

    def get(self, n: int, i: int) -> float:
        return float(self.values[n - 1, i - 1])

    def set_row(self, n: int, accuracies) -> None:
        for i, a in enumerate(accuracies, start=1):
            self.set(n, i, float(a))

    @property
    def last_row(self) -> np.ndarray:
        return self.values[-1]

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.values).copy()

    def to_list(self) -> list:
        return [[None if np.isnan(v) else float(v) for v in row] for row in self.values]

    @classmethod
    def from_list(cls, rows) -> "ResultMatrix":
        vals = np.array([[np.nan if v is None else v for v in row] for row in rows], dtype=float)
        return cls(len(vals), vals)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        for row in self.values:
            writer.writerow(["" if np.isnan(v) else repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ResultMatrix":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        return cls(len(rows), [[np.nan if c.strip() == "" else float(c) for c in r] for r in rows])

    def __repr__(self) -> str:
        return f"ResultMatrix(T={self.n_tasks})"


def _values(R) -> np.ndarray:
    return R.values if isinstance(R, ResultMatrix) else np.asarray(R, dtype=np.float64)


def acc(R) -> float:
    """Mean accuracy over all tasks after the final task."""
    last = _values(R)[-1]
    if np.any(np.isnan(last)):
        raise ContractError("final row of R has unset entries")
    return float(np.mean(last))


def bwt(R) -> float:
    """Mean of ``R[T, i] - R[i, i]`` over the first T-1 tasks."""
    v = _values(R)
    T = len(v)
    if T < 2:
        raise UndefinedMetricError("backward transfer needs at least two tasks")
    final, diag = v[-1, :-1], np.diag(v)[:-1]
    if np.any(np.isnan(final)) or np.any(np.isnan(diag)):
        raise ContractError("BWT needs the diagonal and final row of R")
    return float(np.mean(final - diag))


def intransigence(a_star, R) -> np.ndarray:
    """Per-task ``a_star[k] - R[k, k]``: reference accuracy minus the
    accuracy reached on task k right after learning it sequentially."""
    a_star = np.asarray(a_star, dtype=np.float64)
    diag = np.diag(_values(R))
    if a_star.shape != diag.shape:
        raise ContractError(f"{len(a_star)} reference accuracies for {len(diag)} tasks")
    if np.any(np.isnan(diag)):
        raise ContractError("intransigence needs the diagonal of R")
    return a_star - diag


def arch_bytes(model, bytes_per_parameter: int = BYTES_PER_PARAMETER) -> int:
    """Parameter storage under the 4-byte-per-number convention."""
    if model is None:
        return 0
    return int(model.num_parameters()) * int(bytes_per_parameter)


def megabytes(n_bytes: int) -> float:
    return n_bytes / BYTES_PER_MB


def format_mb(n_bytes: int) -> str:
    """Decimal megabytes rounded to one place, e.g. 8467200 -> '8.5'."""
    return f"{megabytes(n_bytes):.1f}"


def format_mean_std(values, scale: float = 100.0, digits: int = 2) -> str:
    """``'62.07(0.51)'`` style cell from per-seed values (fractions by default)."""
    arr = np.asarray(values, dtype=np.float64) * scale
    std = float(np.std(arr)) if len(arr) > 1 else 0.0
    return f"{float(np.mean(arr)):.{digits}f}({std:.{digits}f})"
