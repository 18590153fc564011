import re

import numpy as np
import pytest

from memcal.design import Sample

_ACCEPTANCE: dict[int, dict] = {}


def tiny_sample(y=True):
    """N=4, s={1,2}, d=(2,2), x=(1,2), y=(1,3)."""
    return Sample(
        indices=np.array([0, 1]),
        d=np.array([2.0, 2.0]),
        x_s=np.array([[1.0], [2.0]]),
        y_s=np.array([1.0, 3.0]) if y else None,
        N=4,
        ids=np.array([1, 2]),
    )


def random_instance(rng, n=None, k=None, positive=False, y_scale=1.0):
    """Random unequal-probability sample with a feasible target near the HT mean."""
    k = k or int(rng.integers(1, 5))
    n = n or int(rng.integers(k + 3, 51))
    pi = rng.uniform(0.05, 0.9, size=n)
    N = int(np.ceil(pi.sum() * rng.uniform(1.5, 4.0))) + n
    x = rng.uniform(0.5, 2.0, size=(n, k)) if positive else rng.normal(size=(n, k))
    if k > 1 and rng.random() < 0.5:
        x[:, 0] = 1.0
    y = x @ rng.normal(size=k) + y_scale * rng.normal(size=n)
    s = Sample(indices=np.arange(n), d=1.0 / pi, x_s=x, y_s=y, N=N, ids=np.arange(1, n + 1))
    ht = s.ht_mean(x)
    target = ht * (1.0 + 0.05 * rng.uniform(-1, 1, size=k))
    return s, x, np.atleast_1d(target)


@pytest.fixture
def tiny():
    return tiny_sample()


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    entry = _ACCEPTANCE.setdefault(int(m.group(1)), {"ok": True, "ran": False, "name": report.nodeid})
    if report.when == "call":
        entry["ran"] = True
    if report.failed:
        entry["ok"] = False
    if report.skipped:
        entry["ok"] = None


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[num]
        status = "SKIP" if e["ok"] is None or not e["ran"] else ("PASS" if e["ok"] else "FAIL")
        name = e["name"].split("::")[-1]
        terminalreporter.write_line(f"criterion {num:>2}: {status}  ({name})")
