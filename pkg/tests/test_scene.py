import numpy as np
import pytest

from splatad.errors import CulledBehindCamera
from splatad.scene import (
    Camera,
    Gaussian3D,
    GaussianCloud,
    covariance,
    normalize_quat,
    project_cloud,
    project_gaussian,
    quat_to_rotmat,
)

from conftest import random_camera, random_cloud


def quat_rotmat_reference(q):
    """Explicit high-precision R from a unit quaternion (oracle)."""
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def splat(mean=(0, 0, 0), log_scale=(0, 0, 0), rotation=(1, 0, 0, 0), logit=0.0, color=(1, 1, 1)):
    return Gaussian3D(
        mean=np.array(mean, dtype=float),
        log_scale=np.array(log_scale, dtype=float),
        rotation=np.array(rotation, dtype=float),
        opacity_logit=logit,
        color=np.array(color, dtype=float),
    )


class TestCovariance:
    def test_identity(self):
        assert np.allclose(covariance(splat()), np.eye(3), atol=1e-15)

    def test_axis_aligned_scale(self):
        g = splat(log_scale=(np.log(2.0), 0.0, 0.0))
        assert np.allclose(covariance(g), np.diag([4.0, 1.0, 1.0]), atol=1e-12)

    def test_matches_explicit_product(self, rng):
        for _ in range(200):
            q = rng.normal(size=4)
            ls = rng.normal(size=3)
            g = splat(log_scale=ls, rotation=q)
            R = quat_rotmat_reference(q)
            S = np.diag(np.exp(ls))
            ref = R @ S @ S.T @ R.T
            assert np.abs(covariance(g) - ref).max() < 1e-12

    def test_symmetric_positive_definite_property(self, rng):
        n = 10_000
        cloud = random_cloud(rng, n=n)
        from splatad.scene import cloud_covariances

        cov = cloud_covariances(cloud)
        assert np.abs(cov - np.swapaxes(cov, 1, 2)).max() < 1e-14
        eig = np.linalg.eigvalsh(cov)
        assert eig.min() > 0


class TestProjection:
    def cam(self, size=33):
        return Camera(
            width=size, height=size, fx=40.0, fy=40.0, cx=size / 2, cy=size / 2,
            rotation=np.eye(3), translation=np.zeros(3), near=0.1, far=100.0,
        )

    def test_on_axis_isotropic(self):
        cam = self.cam()
        sigma, d = 0.2, 5.0
        g = splat(mean=(0, 0, d), log_scale=np.log(sigma) * np.ones(3))
        out = project_gaussian(g, cam, cov2d_floor=0.0)
        assert np.allclose(out["mean2d"], [cam.cx, cam.cy], atol=1e-12)
        expect = (cam.fx * sigma / d) ** 2
        assert np.allclose(out["cov2d"], expect * np.eye(2), atol=1e-10)
        assert out["depth"] == pytest.approx(d)

    def test_behind_camera_culled(self):
        with pytest.raises(CulledBehindCamera):
            project_gaussian(splat(mean=(0, 0, -1.0)), self.cam())

    def test_mean2d_jacobian_vs_finite_differences(self, rng):
        scene_radius = 1.0
        h = 1e-5 * scene_radius
        for _ in range(20):
            cam = random_camera(rng)
            mean = rng.uniform(-0.8, 0.8, size=3)
            g = splat(mean=mean, log_scale=np.log(0.1) * np.ones(3))
            p_cam = cam.rotation @ mean + cam.translation
            from splatad.scene import projection_jacobian

            J = projection_jacobian(p_cam[None], cam.fx, cam.fy)[0] @ cam.rotation
            for k in range(3):
                dm = np.zeros(3)
                dm[k] = h
                up = project_gaussian(splat(mean=mean + dm), cam)["mean2d"]
                dn = project_gaussian(splat(mean=mean - dm), cam)["mean2d"]
                fd = (up - dn) / (2 * h)
                denom = np.maximum(np.abs(fd), 1e-3)
                assert (np.abs(J[:, k] - fd) / denom).max() < 1e-5

    def test_depth_ordering_preserved(self):
        cam = self.cam()
        near = project_gaussian(splat(mean=(0.3, 0.2, 3.0)), cam)["depth"]
        far = project_gaussian(splat(mean=(0.3, 0.2, 7.0)), cam)["depth"]
        assert near < far

    def test_project_cloud_flags_out_of_range(self, rng):
        cloud = GaussianCloud(
            means=np.array([[0, 0, 5.0], [0, 0, -2.0]]),
            log_scales=np.zeros((2, 3)),
            rotations=np.array([[1, 0, 0, 0]] * 2, dtype=float),
            opacity_logits=np.zeros(2),
            colors=np.ones((2, 3)) * 0.5,
        )
        _, _, _, _, in_range = project_cloud(cloud, self.cam())
        assert in_range.tolist() == [True, False]


class TestTypes:
    def test_quaternions_normalized_on_construction(self, rng):
        cloud = random_cloud(rng, n=50)
        norms = np.linalg.norm(cloud.rotations, axis=1)
        assert np.abs(norms - 1).max() < 1e-9

    def test_opacity_in_open_interval(self, rng):
        cloud = random_cloud(rng, n=50)
        assert ((cloud.opacities > 0) & (cloud.opacities < 1)).all()

    def test_scene_radius_covers_means(self, rng):
        cloud = random_cloud(rng, n=50)
        centroid = cloud.means.mean(axis=0)
        assert cloud.scene_radius >= np.linalg.norm(cloud.means - centroid, axis=1).max() - 1e-12

    def test_camera_validation(self):
        with pytest.raises(ValueError):
            Camera(width=8, height=8, fx=-1, fy=1, cx=4, cy=4,
                   rotation=np.eye(3), translation=np.zeros(3))
        with pytest.raises(ValueError):
            Camera(width=8, height=8, fx=1, fy=1, cx=4, cy=4,
                   rotation=np.eye(3), translation=np.zeros(3), near=2.0, far=1.0)

    def test_look_at_rotation_orthonormal(self, rng):
        for _ in range(50):
            cam = random_camera(rng)
            R = cam.rotation
            assert np.abs(R @ R.T - np.eye(3)).max() < 1e-9
            assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)
