import math

import numpy as np
import pytest

from reflectobs.geometry import CameraIntrinsics, Extrinsics, GroundPlane


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def intrinsics():
    return CameraIntrinsics(500.0, 500.0, 319.5, 179.5, 640, 360)


@pytest.fixture
def mount():
    return Extrinsics.looking_forward(0.6, math.radians(25.0))


@pytest.fixture
def floor():
    return GroundPlane(np.array([0.0, 0.0, 1.0]), 0.6)


def random_planar_pair(rng, mount, max_step=0.4, max_yaw=0.2):
    """Two camera poses of a robot moving forward on the floor."""
    x0, y0, th0 = rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-math.pi, math.pi)
    step = rng.uniform(0.05, max_step)
    dth = rng.uniform(-max_yaw, max_yaw)
    x1 = x0 + step * math.cos(th0 + dth / 2)
    y1 = y0 + step * math.sin(th0 + dth / 2)
    return mount.camera_pose(x1, y1, th0 + dth), mount.camera_pose(x0, y0, th0)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
