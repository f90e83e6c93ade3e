import dataclasses

import numpy as np
import pytest

from cmcd.sim.presets import offline_scenarios, unseen_scenarios
from cmcd.sim.scenario import run_scenario


@pytest.fixture(scope="session")
def short_scenario():
    return dataclasses.replace(offline_scenarios(0, n_placements=1)[0], duration=6.0)


@pytest.fixture(scope="session")
def short_run(short_scenario):
    return run_scenario(short_scenario)


@pytest.fixture(scope="session")
def free_run():
    s = dataclasses.replace(unseen_scenarios(0)[-1], duration=3.0)
    return run_scenario(s)


@pytest.fixture(autouse=True)
def _output_root(tmp_path_factory, monkeypatch):
    # subcommands run without --out must not write into the working tree
    monkeypatch.setenv("CMCD_OUTPUT_ROOT", str(tmp_path_factory.getbasetemp() / "cmcd-out"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance results, filled by tests/test_acceptance.py and printed at the end
ACCEPTANCE: dict = {}
N_CRITERIA = 10


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n not in ACCEPTANCE:
            terminalreporter.write_line(f"criterion {n:2d} NOT RUN")
            continue
        ok, name, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
