import numpy as np
import pytest

from poseuq import CameraIntrinsics, box_mesh, octahedron_mesh


@pytest.fixture
def cam64():
    return CameraIntrinsics(fx=80.0, fy=80.0, cx=32.0, cy=32.0, width=64, height=64)


@pytest.fixture
def cam_vga():
    return CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


@pytest.fixture
def box():
    return box_mesh(0.1)


@pytest.fixture
def octa():
    return octahedron_mesh(0.08)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
