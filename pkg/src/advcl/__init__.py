"""Adversarial continual learning on a small numpy autodiff engine.

Modules:
    tensor   -- float64 tensors with reverse-mode differentiation
    nn       -- linear layers, MLPs, Glorot init, SGD
    model    -- shared/private ACL model with per-task growth; ordinary MLP baseline
    losses   -- task, adversarial and orthogonality losses
    memory   -- episodic replay memory
    metrics  -- ACC, BWT, intransigence, memory accounting
    data     -- MNIST IDX loading and task streams
    harness  -- sequential training, baselines, ablation grid, replay sweep
    cli      -- command-line front end
"""
from .errors import AclError
from .harness import (ExperimentConfig, RunRecord, evaluate, replay_sweep, run_ablation_grid,
                      train_acl, train_joint, train_ord_ft)
from .metrics import ResultMatrix, acc, bwt, intransigence
from .model import AclConfig, AclModel, OrdConfig, OrdNet
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "AclConfig", "AclError", "AclModel", "ExperimentConfig", "OrdConfig", "OrdNet",
    "ResultMatrix", "RunRecord", "Tensor", "acc", "bwt", "evaluate", "intransigence",
    "replay_sweep", "run_ablation_grid", "train_acl", "train_joint", "train_ord_ft",
]
