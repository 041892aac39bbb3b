import numpy as np
import pytest

from gridseek.task import Task


@pytest.fixture
def tiny_task():
    """2x2 grid, 3 features per cell, targets at cells 1 and 3."""
    rng = np.random.default_rng(7)
    return Task(id="tiny", grid_shape=(2, 2),
                features=rng.standard_normal((4, 3)),
                labels=np.array([0, 1, 0, 1]))


def make_task(labels, d=3, seed=0, grid_shape=None):
    labels = np.asarray(labels)
    n = labels.size
    if grid_shape is None:
        grid_shape = (1, n)
    rng = np.random.default_rng(seed)
    return Task(id=f"t{seed}", grid_shape=grid_shape,
                features=rng.standard_normal((n, d)), labels=labels)
