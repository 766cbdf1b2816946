import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from fltransfer.fda import Curve, TaskDataset
from fltransfer.kernels import KernelSpec
from fltransfer.simgen import ScenarioConfig


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run Monte-Carlo acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte-Carlo acceptance test, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def random_task(rng, n=8, grid_points=15, task_id="target", grid=None):
    grid = np.linspace(0.0, 1.0, grid_points) if grid is None else grid
    curves = tuple(Curve(grid, rng.standard_normal(grid.size), f"{task_id}_{i}") for i in range(n))
    return TaskDataset(curves, rng.standard_normal(n), task_id)


def random_kernel(rng):
    variant = rng.integers(6)
    if variant == 0:
        return KernelSpec.eigen_expansion(decay=rng.uniform(1.2, 4.0), truncation=int(rng.integers(1, 200)))
    if variant == 1:
        return KernelSpec.matern(float(rng.choice([0.5, 1.5, 2.5])), rng.uniform(0.05, 2.0))
    if variant == 2:
        return KernelSpec.gaussian(rng.uniform(0.05, 2.0))
    if variant == 3:
        return KernelSpec.periodic(rng.uniform(0.2, 2.0), rng.uniform(0.3, 2.0))
    if variant == 4:
        return KernelSpec.ornstein_uhlenbeck(rng.uniform(0.5, 30.0))
    return KernelSpec.wiener()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def make_task():
    return random_task


@pytest.fixture
def make_kernel():
    return random_kernel


@pytest.fixture
def small_scenario():
    return ScenarioConfig(beta_scenario=2, h=1.0, transferable_ids=(1, 2), L=3, n0=24, nl=20, grid_points=20,
                          seed=3)
