import numpy as np
import pytest

from carmsim.geometry import CArmPose
from carmsim.phantom import Volume, generate_phantom
from carmsim.projector import render


@pytest.fixture(scope="session")
def phantom42():
    return generate_phantom(42)


@pytest.fixture(scope="session")
def warm_kernel(phantom42):
    # compile the ray-casting kernel once so timed tests measure physics only
    volume, landmarks = phantom42
    pose = CArmPose(
        isocenter=landmarks.get(1).position_mm, detector_res=(8, 8)
    )
    render(volume, pose)
    return True


def small_pose(isocenter, res=64, **kwargs):
    return CArmPose(isocenter=isocenter, detector_res=(res, res), **kwargs)


@pytest.fixture()
def uniform_cube():
    """100 mm cube of mu = 0.02/mm at 2 mm spacing."""
    data = np.full((50, 50, 50), 0.02, dtype=np.float32)
    return Volume(data, (2.0, 2.0, 2.0))
