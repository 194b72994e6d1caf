import os

import numpy as np
import pytest
from hypothesis import settings

from eegseq.gradcheck import check_gradients

GRAD_TOL = 1e-4

settings.register_profile("default", derandomize=True, deadline=None)
settings.register_profile("stress", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def assert_grads(f, tensors, tol=GRAD_TOL):
    errs = check_gradients(f, tensors)
    worst = max(errs.values())
    assert worst < tol, f"gradient mismatch {errs}"
    return worst


_acceptance: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or report.outcome != "passed":
        if _acceptance.get(name) != "FAIL":
            _acceptance[name] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance.items():
        terminalreporter.write_line(f"{outcome}  {name}")
