import numpy as np
import pytest

from degenflow.model import build_drift, build_example


@pytest.fixture(scope="session")
def kinetic():
    model, _ = build_example("kinetic", d=1)
    return model


@pytest.fixture(scope="session")
def wave4():
    model, _ = build_example("wave", theta=1.0, d_space=1, n=4, delta=0.4)
    return model


def assert_within_se(value, expected, stderr, n_se=5.0, floor=1e-12):
    band = max(n_se * stderr, floor)
    assert abs(value - expected) <= band, (
        f"value {value} not within {n_se} standard errors "
        f"({stderr}) of {expected}")
