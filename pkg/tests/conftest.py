import time
from dataclasses import replace

import pytest

from sbc_lab import expr as ex
from sbc_lab.config import REFERENCE_TRAJECTORY, scenario
from sbc_lab.plant import validation_model
from sbc_lab.sim import simulate

# criterion number -> (passed, line); filled by the acceptance module
ACCEPTANCE: dict = {}


class ScenarioRuns:
    """Full-length validation runs, simulated once per session on first use.

    C2 is recorded at every step so the finite-difference checks can use it;
    the 1 kHz trace is a row subsample of the same run.
    """

    def __init__(self):
        self._cache = {}

    def fine(self, name: str):
        key = (name, 1)
        if key not in self._cache:
            spec = scenario(name)
            start = time.perf_counter()
            trace = simulate(spec.model, spec.controller, spec.trajectory, replace(spec.sim, record_stride=1))
            self._cache[key] = (spec, trace, time.perf_counter() - start)
        return self._cache[key]

    def get(self, name: str):
        if name == "c2":
            spec, trace, runtime = self.fine(name)
            return spec, trace.every(spec.sim.record_stride), runtime
        if name not in self._cache:
            spec = scenario(name)
            start = time.perf_counter()
            trace = simulate(spec.model, spec.controller, spec.trajectory, spec.sim)
            self._cache[name] = (spec, trace, time.perf_counter() - start)
        return self._cache[name]


@pytest.fixture(scope="session")
def runs():
    return ScenarioRuns()


@pytest.fixture(scope="session")
def model():
    return validation_model()


@pytest.fixture(scope="session")
def trajectory():
    return ex.parse(REFERENCE_TRAJECTORY)


@pytest.fixture
def acceptance():
    def record(number: int, title: str, passed: bool, detail: str):
        ACCEPTANCE[number] = (passed, f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {title}: {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number][1])
