import time

import pytest

from eve_neuron.config import load_config
from eve_neuron.data import build_task

_acceptance = []

SMALL = {"data.n_steps": "700", "data.in_len": "16", "data.horizon": "4",
         "model.n_units": "8", "train.max_epochs": "4", "train.batch_size": "32"}


def small_config(**extra):
    over = dict(SMALL)
    over.update({k.replace("__", "."): str(v) for k, v in extra.items()})
    return load_config(None, over)


@pytest.fixture(scope="session")
def small_task():
    return build_task(small_config().data)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_call(item):
    t0 = time.perf_counter()
    yield
    item.user_properties.append(("seconds", time.perf_counter() - t0))


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        secs = dict(report.user_properties).get("seconds", 0.0)
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome, secs))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, secs in _acceptance:
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}  ({secs:.1f}s)")
