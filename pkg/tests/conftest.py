import functools

import numpy as np
import pytest

from srqc import expr as ex
from srqc.models import load_model
from srqc.operators import MeasureDensity
from srqc.srgeom import Hypersurface, SRStructure, VectorField

SEED = 0
ACCEPTANCE_LINES = []


def P(text, dim=3, **kw):
    return ex.parse(text, dim, **kw)


def martinet_structure(k=1):
    return SRStructure([VectorField([1, 0, 0]), VectorField([0, 1, P(f"x1^{2 * k}")])])


def heisenberg_structure():
    return SRStructure([VectorField([1, 0, 0]), VectorField([0, 1, P("x1")])])


def grushin_structure():
    return SRStructure([VectorField([1, 0]), VectorField([0, P("x1", 2)])])


@functools.lru_cache(maxsize=None)
def cached_model(name, **params):
    return load_model(name, params or None)


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)


@pytest.fixture
def martinet():
    return martinet_structure()


@pytest.fixture
def heisenberg():
    return heisenberg_structure()


@pytest.fixture
def grushin():
    return grushin_structure()


@pytest.fixture
def Z3():
    return Hypersurface(P("x1"), 3)


@pytest.fixture
def Z2():
    return Hypersurface(P("x1", 2), 2)


@pytest.fixture
def grushin_measure():
    return MeasureDensity(P("1/x1", 2), "popp-closed-form")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
