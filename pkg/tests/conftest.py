import numpy as np
import pytest

from argocov.core import GeoPoint, ProfileDataset

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"ACCEPTANCE {number:2d} {'PASS' if passed else 'FAIL'}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {k}: {detail}")


def random_dataset(rng, n_floats=3, n_levels=5, lat=(38.0, 42.0), lon=(-177.0, -173.0)):
    """Small random dataset of independent normal residuals."""
    fid, la, lo, pr = [], [], [], []
    for f in range(n_floats):
        a, b = rng.uniform(*lat), rng.uniform(*lon)
        for p in np.sort(rng.choice(np.arange(5, 2000, 5), n_levels, replace=False)):
            fid.append(f"{f:04d}")
            la.append(a)
            lo.append(b)
            pr.append(float(p))
    n = len(la)
    return ProfileDataset.from_arrays(fid, la, lo, pr, rng.normal(size=n), rng.normal(size=n) * 0.2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_data(rng):
    return random_dataset(rng)


@pytest.fixture
def point():
    return GeoPoint(40.0, -175.0, 500.0)
