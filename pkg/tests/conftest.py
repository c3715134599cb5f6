import random

import pytest

from forestveil import lhe

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def jl_keys():
    return lhe.keygen(1024, "joye-libert", rng=random.Random(101))


@pytest.fixture(scope="session")
def paillier_keys():
    return lhe.keygen(1024, "paillier", rng=random.Random(202))


@pytest.fixture(scope="session", params=["paillier", "joye-libert"])
def keys(request, jl_keys, paillier_keys):
    return paillier_keys if request.param == "paillier" else jl_keys


@pytest.fixture
def rng():
    return random.Random(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
