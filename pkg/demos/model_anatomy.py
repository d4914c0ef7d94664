"""
Shared and private encoders
===========================

Builds the MNIST-sized model, grows it for a second task and shows the
three loss terms on a random batch.
"""
import numpy as np

from advcl.losses import JointBatch, adv_loss_for_S, diff_loss, task_loss
from advcl.model import AclConfig, AclModel

model = AclModel(AclConfig(max_tasks=5), seed=0)
for name, count in model.parameter_counts().items():
    print(f"{name:>14}: {count:,}")

# every task gets its own private encoder and head; the shared part is reused
model.freeze_task(1)
model.grow(seed=1)
print("tasks seen:", model.seen_tasks)

rng = np.random.default_rng(0)
x = rng.uniform(0, 1, (16, 784))
batch = JointBatch(x, rng.integers(0, 2, 16), np.full(16, 2))
print("task loss        ", task_loss(model, batch).item())
print("adversarial loss ", adv_loss_for_S(model, batch).item())
print("diff loss (raw)  ", diff_loss(model, x, 2).item())
print("diff loss (unit) ", diff_loss(model, x, 2, normalize=True).item())
