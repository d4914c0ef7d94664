"""
5-Split MNIST
=============

Trains ACL and the fine-tuning baseline on the five digit-pair tasks and
prints the comparison table. Needs the MNIST files (see
``scripts/fetch_mnist.py``) and takes a few minutes per seed on one core.
Pass ``--quick`` for a two-epoch run.
"""
import sys

from advcl import ExperimentConfig, train_acl, train_ord_ft
from advcl.cli import comparison_rows, render_table

quick = "--quick" in sys.argv
config = ExperimentConfig(epochs=2 if quick else 5, seeds=[1] if quick else [1, 2, 3])

groups = {}
for train in (train_acl, train_ord_ft):
    for seed in config.seeds:
        rec = train(config, seed=seed)
        groups.setdefault(rec.method, []).append(rec)
        print(f"{rec.method} seed {seed}: ACC {100 * rec.acc:.2f} BWT {100 * rec.bwt:+.2f}")

print(render_table(comparison_rows(groups)))
