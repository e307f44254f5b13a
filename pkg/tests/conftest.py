import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from artifact.geometry import Intrinsics, PoseSE3
from artifact.grid import DepthMap, ImageBuf

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_image(rng, h, w, c=3):
    return ImageBuf(rng.uniform(0.0, 1.0, size=(h, w, c)))


def random_depth(rng, h, w, lo=1.0, hi=10.0, holes=0.0):
    d = rng.uniform(lo, hi, size=(h, w))
    if holes:
        d[rng.random((h, w)) < holes] = 0.0
    return DepthMap(d)


def small_pose(rng, rot=0.02, trans=0.1):
    return PoseSE3.from_axis_angle(rng.normal(0, rot, 3), rng.normal(0, trans, 3))


def default_K(h, w, f=50.0):
    return Intrinsics(f, f, (w - 1) / 2.0, (h - 1) / 2.0)


# acceptance criteria record one line each; printed after the run
ACCEPTANCE_LINES = {}


def record_criterion(number, title, ok, detail=""):
    ACCEPTANCE_LINES[number] = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}" + (
        f"  [{detail}]" if detail else "")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
