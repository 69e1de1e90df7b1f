import os

import numpy as np
import pytest

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_corpus():
    """4 subjects x 8 expressions, rendered once per session."""
    from pixalign import synthetic

    return synthetic.make_corpus(4, seed=5)


@pytest.fixture(scope="session")
def template():
    from pixalign import synthetic

    return synthetic.template_landmarks()
