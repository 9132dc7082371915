"""Shared fixtures and the acceptance summary printer."""
import numpy as np
import pytest

from graybox_dryer import dataio

ACCEPTANCE = {}

SMALL_SCENARIO = dataio.ScenarioSpec(n_batches=3, samples_per_batch=500)


@pytest.fixture(scope="session")
def small_data():
    ds, truth = dataio.gen_synthetic(SMALL_SCENARIO, seed=3)
    return ds, truth


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
