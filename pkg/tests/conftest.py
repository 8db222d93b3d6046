import numpy as np
import pytest

from splatad.scene import Camera, GaussianCloud


def random_cloud(rng: np.random.Generator, n: int = 10, radius: float = 1.0) -> GaussianCloud:
    return GaussianCloud(
        means=rng.uniform(-radius, radius, size=(n, 3)),
        log_scales=np.log(rng.uniform(0.05, 0.35, size=(n, 3)) * radius),
        rotations=rng.normal(size=(n, 4)),
        opacity_logits=rng.normal(size=n) * 1.5,
        colors=rng.uniform(size=(n, 3)),
    )


def random_camera(
    rng: np.random.Generator, size: int = 32, dist: float = 4.0, fov_deg: float = 45.0
) -> Camera:
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    return Camera.look_at(
        eye=d * dist,
        target=np.zeros(3),
        up=np.array([0.0, 1.0, 0.0]),
        width=size,
        height=size,
        fov_x=np.deg2rad(fov_deg),
        near=0.1,
        far=50.0,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
