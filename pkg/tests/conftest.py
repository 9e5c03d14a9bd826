import numpy as np
import pytest

from har_kit.data import generate
from har_kit.hierarchy import parse_hierarchy
from har_kit.types import SynthSpec


def pytest_addoption(parser):
    parser.addoption(
        "--run-slow", action="store_true", help="run desk-scale reproductions"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def toy_hierarchy():
    # coarse 0 = {0, 1}, coarse 1 = {2, 3}
    return parse_hierarchy("A: a0, a1\nB: b0, b1\n")


@pytest.fixture
def toy_spec():
    return SynthSpec(
        coarse_count=2,
        fines_per_coarse=2,
        dim=6,
        per_class=25,
        coarse_separation=0.6,
        fine_separation=0.3,
        noise_sigma=0.03,
        seed=7,
    )


@pytest.fixture
def toy_generated(toy_spec):
    return generate(toy_spec)


@pytest.fixture
def toy_data(toy_generated):
    return toy_generated[0]


@pytest.fixture
def toy_data_hierarchy(toy_generated):
    # same block structure as toy_hierarchy, generated names
    return toy_generated[1]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
