import numpy as np
import pytest

from fidtrack.geometry import CameraIntrinsics, DistortionCoeffs


@pytest.fixture
def camera():
    return CameraIntrinsics(fx=800.0, fy=800.0, cx=320.0, cy=240.0, width=640, height=480)


@pytest.fixture
def no_distortion():
    return DistortionCoeffs()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
