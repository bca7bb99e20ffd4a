import copy

import numpy as np
import pytest

from neurovvo.feeder import bundled_feeder, parse_feeder

TWO_BUS = {
    "name": "two",
    "base": {"kva": 1000.0, "kv": 4.16, "impedance_unit": "pu"},
    "buses": [{"id": "1", "phases": "a", "kind": "substation"},
              {"id": "2", "phases": "a", "load": {"a": {"p": 100.0, "q": 50.0}}}],
    "branches": [{"id": "1-2", "from": "1", "to": "2", "phases": "a",
                  "impedance": {"aa": {"r": 0.01, "x": 0.02}}, "s_max": 1000.0}],
    "ders": [],
    "limits": {"d1": 1, "d2": 1},
}


def two_bus_doc(**changes):
    doc = copy.deepcopy(TWO_BUS)
    doc.update(changes)
    return doc


@pytest.fixture(scope="session")
def toy2():
    return bundled_feeder("toy2")


@pytest.fixture(scope="session")
def toy4():
    return bundled_feeder("toy4")


@pytest.fixture(scope="session")
def toy8():
    return bundled_feeder("toy8")


@pytest.fixture(scope="session")
def desk7():
    return bundled_feeder("desk7")


@pytest.fixture
def two_bus():
    return parse_feeder(two_bus_doc())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record one verdict line per acceptance criterion; printed in the terminal summary."""
    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
