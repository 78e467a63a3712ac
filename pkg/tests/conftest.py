import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bevlift.config import load_config
from bevlift.geometry import CalibrationSet, CameraIntrinsics, extend_transform

settings.register_profile("bevlift", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("bevlift")

# acceptance criterion number -> (passed, detail, seconds)
ACCEPTANCE_RESULTS = {}

# radar (x fwd, y left, z up) -> camera (x right, y down, z fwd)
RADAR_TO_CAM = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, detail, secs = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'} ({secs:.2f}s) {detail}")


@pytest.fixture
def simple_calib():
    """640x480 pinhole, f=100, identity extrinsic (camera frame == radar frame)."""
    intr = CameraIntrinsics.from_pinhole(100.0, 100.0, 320.0, 240.0, 640, 480)
    return CalibrationSet(intr, extend_transform(np.eye(3)))


@pytest.fixture
def forward_calib():
    """Small forward-looking camera in radar coordinates."""
    intr = CameraIntrinsics.from_pinhole(60.0, 60.0, 40.0, 30.0, 80, 60)
    return CalibrationSet(intr, extend_transform(RADAR_TO_CAM, (0.0, 0.3, 0.1)))


@pytest.fixture(scope="session")
def vod_cfg():
    return load_config("vod")


@pytest.fixture(scope="session")
def tj4d_cfg():
    return load_config("tj4d")
