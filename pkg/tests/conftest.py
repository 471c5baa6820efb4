import time

import numpy as np
import pytest

from aubin.chain import prepare_reference
from aubin.fixtures import fixture

SESSION_START = time.perf_counter()


def pytest_collection_modifyitems(items):
    # stable sort: marked tests move to the end, everything else keeps its order
    items.sort(key=lambda item: item.get_closest_marker("run_last") is not None)


@pytest.fixture(scope="session")
def ex1():
    return prepare_reference(fixture("example1"))


@pytest.fixture(scope="session")
def ex2():
    return prepare_reference(fixture("example2"))


@pytest.fixture(scope="session")
def quad():
    return prepare_reference(fixture("quadratic"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_problem(H, g, cone, x=None, p=None, name="custom", variables=None, parameters=("p",)):
    from aubin.exprs import problem_from_dict

    variables = variables or [f"x{i + 1}" for i in range(len(H))]
    if isinstance(cone, int):
        cone = {"type": "orthant_nonpositive", "dim": cone}
    return problem_from_dict(
        {
            "name": name,
            "parameters": list(parameters),
            "variables": list(variables),
            "H": list(H),
            "g": list(g),
            "cone": cone,
            "reference": {"p": p or [0.0] * len(parameters), "x": x or [0.0] * len(variables)},
        }
    )
