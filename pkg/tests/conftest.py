import numpy as np
import pytest

from egoshift.fixtures import dual_arm_model, planar_model, synthetic_episode
from egoshift.geometry import CameraModel, RigidTransform, profile_camera


@pytest.fixture(scope="session")
def dual_arm():
    return dual_arm_model()


@pytest.fixture(scope="session")
def planar():
    return planar_model()


@pytest.fixture(scope="session")
def sim_camera():
    return profile_camera("sim")


@pytest.fixture(scope="session")
def small_episode():
    """8-frame synthetic episode at a reduced 160x120 resolution."""
    cam = profile_camera("sim").with_resolution(160, 120)
    return synthetic_episode(n_frames=8, seed=1, camera=cam)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def simple_camera(width=64, height=64, f=60.0, extrinsic=None, depth_max=10.0):
    return CameraModel(
        f, f, width / 2.0, height / 2.0, width, height,
        extrinsic or RigidTransform.identity(), 1.0, depth_max,
    )
