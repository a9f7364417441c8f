from __future__ import annotations
from pathlib import Path
import sys

import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from src.model import (  # noqa: E402
    InitialLaw,
    IntensityFn,
    KernelSpec,
    ModelSpec,
    PastInfluenceLaw,
    RandomKernelLaw,
)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run Monte Carlo acceptance runs")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte Carlo acceptance run (needs --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def make_model(
    kernel=None,
    psi=None,
    initial=None,
    past=None,
    law="deterministic",
    **weights,
) -> ModelSpec:
    return ModelSpec(
        kernel_law=RandomKernelLaw(base=kernel or KernelSpec(), law=law, **weights),
        psi=psi or IntensityFn(phi="constant", c=1.0),
        initial=initial or InitialLaw(age0="exponential", rate=1.0),
        past=past or PastInfluenceLaw(mode="zero"),
    )


@pytest.fixture
def refractory_model() -> ModelSpec:
    """Bounded, age dependent: the H1 regime."""
    return make_model(
        kernel=KernelSpec(family="exponential", alpha=0.5, beta=2.0),
        psi=IntensityFn(phi="clipped_affine", mu=0.5, a=1.0, cap=2.0, delta=0.1),
    )


@pytest.fixture
def linear_model() -> ModelSpec:
    """Unbounded, age independent: the H2 regime."""
    return make_model(
        kernel=KernelSpec(family="exponential", alpha=1.0, beta=4.0),
        psi=IntensityFn(phi="affine", mu=1.0, a=1.0),
    )


@pytest.fixture
def constant_model() -> ModelSpec:
    return make_model(
        kernel=KernelSpec(family="exponential", alpha=0.7, beta=1.5),
        psi=IntensityFn(phi="constant", c=1.0),
        past=PastInfluenceLaw(mode="hawkes_past"),
    )


@pytest.fixture
def model_factory():
    return make_model
