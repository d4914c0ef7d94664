import dataclasses
from pathlib import Path

import numpy as np
import pytest

from advcl.data import default_data_dir
from advcl.harness import ExperimentConfig
from advcl.model import AclConfig, OrdConfig

ROOT = Path(__file__).resolve().parents[1]

# (criterion number, passed, detail) lines collected by test_acceptance
VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(VERDICTS):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def mnist_dir():
    for d in (default_data_dir(), ROOT / "data" / "mnist"):
        if d.is_dir() and any(d.glob("train-images*")):
            return d
    return None


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mnist_path():
    d = mnist_dir()
    if d is None:
        pytest.skip("MNIST IDX files not found; run scripts/fetch_mnist.py")
    return d


def small_config(**kw):
    """Synthetic 3-task setup that trains in a couple of seconds."""
    base = ExperimentConfig(
        name="tiny",
        dataset={"kind": "synthetic", "n_tasks": 3, "classes_per_task": 2, "input_dim": 20,
                 "n_per_class": 120, "seed": 0},
        model=AclConfig(shared_hidden=(32,), latent_dim_s=16, latent_dim_p=16,
                        head_hidden=(16,), discriminator_hidden=(16,)),
        ord=OrdConfig(hidden=(32, 32)),
        epochs=3, batch_size=32, seeds=[1],
    )
    return dataclasses.replace(base, **kw)


def tiny_model_config(**kw):
    base = AclConfig(input_dim=6, shared_hidden=(5,), latent_dim_s=4, latent_dim_p=3,
                     head_hidden=(4,), classes_per_task=2, max_tasks=3,
                     discriminator_hidden=(5,))
    return dataclasses.replace(base, **kw)
