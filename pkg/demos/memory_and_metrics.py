"""
Replay memory and continual-learning metrics
============================================

Fills a per-class replay memory over a short synthetic stream, reports its
size, and scores a hand-written accuracy matrix.
"""
import numpy as np

from advcl.data import make_synthetic_tasks
from advcl.memory import EpisodicMemory, memory_bytes, update_memory
from advcl.metrics import ResultMatrix, acc, bwt, format_mb, intransigence

tasks = make_synthetic_tasks(n_tasks=3, classes_per_task=2, input_dim=784, n_per_class=50)
mem = EpisodicMemory(per_task_budget=6, classes_per_task=2)
for task in tasks:
    mem = update_memory(mem, task, seed=task.task)
    print(f"after task {task.task}: {len(mem)} rows, {memory_bytes(mem):,} bytes")

# 100 colour images of 84x84 at four bytes per value
x = np.zeros((100, 84, 84, 3), dtype=np.uint8)
print("100 images:", format_mb(x.size * 4), "MB")

R = ResultMatrix(3)
R.set_row(1, [0.99])
R.set_row(2, [0.97, 0.98])
R.set_row(3, [0.95, 0.97, 0.99])
print(R.to_csv())
print(f"ACC {acc(R):.4f}  BWT {bwt(R):+.4f}")
print("intransigence:", intransigence([0.995, 0.99, 0.99], R))
