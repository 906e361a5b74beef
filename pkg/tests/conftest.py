from pathlib import Path

import numpy as np
import pytest

from gbfl.blackbox import LogisticBlackBox
from gbfl.data import Dataset, FeatureBounds

DATA_DIR = Path(__file__).parent / "data"
WDBC = DATA_DIR / "wdbc.csv"


def stump_model(threshold=5.0, sharpness=1.0, d=2):
    """Class 1 iff x0 > threshold (a tie goes to class 0)."""
    w = np.zeros(d)
    w[0] = sharpness
    return LogisticBlackBox.binary(w, -sharpness * threshold)


def uniform_data(n=1000, d=2, seed=0, hi=10.0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, hi, (n, d))
    y = (X[:, 0] > 5).astype(int)
    return Dataset(X, y, tuple(f"x{j}" for j in range(d)), 2, {"0": 0, "1": 1})


@pytest.fixture
def stump():
    return stump_model()


@pytest.fixture
def box2():
    return FeatureBounds(np.zeros(2), np.full(2, 10.0))


@pytest.fixture
def uniform2():
    return uniform_data()


# ---------------------------------------------------------------------------- acceptance summary

_VERDICTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    """``verdict(n, ok, detail)`` records the outcome of acceptance criterion ``n``."""
    def record(n, ok, detail=""):
        _VERDICTS[n] = (bool(ok), detail)
        return bool(ok)
    return record


def pytest_runtest_logreport(report):
    # a criterion whose test crashed before reaching its verdict still gets a FAIL line
    if report.when == "call" and report.failed and "test_acceptance.py::test_criterion_" in report.nodeid:
        n = int(report.nodeid.split("test_criterion_")[1].split("_")[0])
        _VERDICTS.setdefault(n, (False, "raised before reaching a verdict"))


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        ok, detail = _VERDICTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
