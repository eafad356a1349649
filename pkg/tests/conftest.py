import sys

import numpy as np
import pytest

from abayes.benchmarks.conjugate import ConjugateGaussianBenchmark


@pytest.fixture(scope="session")
def conj():
    return ConjugateGaussianBenchmark()


@pytest.fixture(scope="session")
def conj_y(conj):
    return conj.observed()


@pytest.fixture(scope="session")
def conj_post(conj, conj_y):
    mean, var, log_ev = conj.oracle_posterior(conj_y)
    return mean, float(np.sqrt(var)), log_ev


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    report = getattr(mod, "REPORT", None)
    if report:
        terminalreporter.section("acceptance criteria")
        for key in sorted(report):
            terminalreporter.write_line(report[key])
