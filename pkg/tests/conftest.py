import numpy as np
import pytest

from mdns.geometry import SiteSet


def random_sites(rng, n, lo=0.0, hi=1.0, elev=False, scale=1.0):
    lon = rng.uniform(lo, hi, n)
    lat = rng.uniform(lo, hi, n)
    e = rng.uniform(0, 1000, n) if elev else None
    return SiteSet(lon, lat, e, distance_scale=scale)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


#: criterion number -> (passed, detail); filled by the acceptance suite
ACCEPTANCE = {}


def record_criterion(k, passed, detail):
    ACCEPTANCE[k] = (bool(passed), detail)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
