from pathlib import Path

import numpy as np
import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mini_splits():
    from se2din import data

    return data.load_splits(FIXTURES / "mini_rot.se2d")


@pytest.fixture(scope="session")
def tiny_model():
    from se2din.model import Model

    return Model.load(FIXTURES / "tiny_order2.se2d")


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
