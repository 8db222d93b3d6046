"""3D Gaussian splat scene representation.

Conventions used throughout the package:

* quaternions are (w, x, y, z), kept unit-norm;
* scales are stored in log-space, opacities in logit-space, so plain
  gradient steps cannot leave the valid domain;
* ``Camera.rotation`` / ``Camera.translation`` map world points into the
  camera frame (``x_cam = R @ x_world + t``) with +z looking forward;
* pixel coordinates follow ``u = fx * x/z + cx``, ``v = fy * y/z + cy``.

``GaussianCloud`` stores splats as structure-of-arrays for vectorized
rendering; ``Gaussian3D`` is the single-splat view used by the scalar API.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CulledBehindCamera, EmptyCloud

QUAT_NORM_TOL = 1e-9


def normalize_quat(q: np.ndarray) -> np.ndarray:
    """Return q / |q|; works on (4,) or (N, 4) arrays."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / norm


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for unit quaternions (w, x, y, z); (4,)->(3,3), (N,4)->(N,3,3)."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R[0] if single else R


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a ⊗ b, broadcasting over leading axes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def rotmat_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for a rotation matrix (Shepperd's method)."""
    R = np.asarray(R, dtype=np.float64)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(R[i, i] - R[j, j] - R[k, k] + 1.0) * 2
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    return q / np.linalg.norm(q)


@dataclass
class Gaussian3D:
    """One anisotropic Gaussian primitive."""

    mean: np.ndarray          # (3,) world units
    log_scale: np.ndarray     # (3,) log of per-axis std-dev
    rotation: np.ndarray      # (4,) unit quaternion (w, x, y, z)
    opacity_logit: float
    color: np.ndarray         # (3,) RGB in [0, 1], view-independent

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(3)
        self.rotation = normalize_quat(np.asarray(self.rotation, dtype=np.float64).reshape(4))
        self.color = np.asarray(self.color, dtype=np.float64).reshape(3)

    @property
    def opacity(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.opacity_logit)))


@dataclass
class GaussianCloud:
    """Splat scene as structure-of-arrays.

    All arrays share the leading splat axis. ``scene_radius`` is the
    bounding-sphere radius around the centroid of the means.
    """

    means: np.ndarray           # (N, 3)
    log_scales: np.ndarray      # (N, 3)
    rotations: np.ndarray       # (N, 4) unit quaternions
    opacity_logits: np.ndarray  # (N,)
    colors: np.ndarray          # (N, 3)
    scene_radius: float = 0.0

    def __post_init__(self) -> None:
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.log_scales = np.atleast_2d(np.asarray(self.log_scales, dtype=np.float64))
        self.rotations = normalize_quat(np.atleast_2d(np.asarray(self.rotations, dtype=np.float64)))
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(-1)
        self.colors = np.atleast_2d(np.asarray(self.colors, dtype=np.float64))
        if self.scene_radius <= 0.0 and len(self) > 0:
            self.scene_radius = default_scene_radius(self.means)

    def __len__(self) -> int:
        return self.means.shape[0]

    @property
    def opacities(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.opacity_logits))

    def splat(self, i: int) -> Gaussian3D:
        return Gaussian3D(
            mean=self.means[i],
            log_scale=self.log_scales[i],
            rotation=self.rotations[i],
            opacity_logit=float(self.opacity_logits[i]),
            color=self.colors[i],
        )

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            means=self.means.copy(),
            log_scales=self.log_scales.copy(),
            rotations=self.rotations.copy(),
            opacity_logits=self.opacity_logits.copy(),
            colors=self.colors.copy(),
            scene_radius=self.scene_radius,
        )

    def subset(self, mask: np.ndarray) -> "GaussianCloud":
        return GaussianCloud(
            means=self.means[mask],
            log_scales=self.log_scales[mask],
            rotations=self.rotations[mask],
            opacity_logits=self.opacity_logits[mask],
            colors=self.colors[mask],
            scene_radius=self.scene_radius,
        )

    @staticmethod
    def from_splats(splats: list[Gaussian3D], scene_radius: float = 0.0) -> "GaussianCloud":
        return GaussianCloud(
            means=np.stack([g.mean for g in splats]),
            log_scales=np.stack([g.log_scale for g in splats]),
            rotations=np.stack([g.rotation for g in splats]),
            opacity_logits=np.array([g.opacity_logit for g in splats]),
            colors=np.stack([g.color for g in splats]),
            scene_radius=scene_radius,
        )


def default_scene_radius(means: np.ndarray) -> float:
    centroid = means.mean(axis=0)
    r = float(np.max(np.linalg.norm(means - centroid, axis=1))) if len(means) else 0.0
    return max(r, 1e-6)


@dataclass
class Camera:
    """Pinhole camera with a world-to-camera rigid transform."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray     # (3, 3), world-to-camera
    translation: np.ndarray  # (3,)
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self) -> None:
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.near < self.far):
            raise ValueError("need 0 < near < far")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def world_to_camera_matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    @staticmethod
    def look_at(
        eye: np.ndarray,
        target: np.ndarray,
        up: np.ndarray,
        width: int,
        height: int,
        fov_x: float,
        near: float = 0.01,
        far: float = 100.0,
    ) -> "Camera":
        """Camera at ``eye`` looking toward ``target`` (+z forward, +y down image)."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward = forward / np.linalg.norm(forward)
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(forward, up)
        n = np.linalg.norm(right)
        if n < 1e-9:  # looking along 'up': pick any perpendicular
            alt = np.array([1.0, 0.0, 0.0]) if abs(forward[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
            right = np.cross(forward, alt)
            n = np.linalg.norm(right)
        right = right / n
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])  # rows: camera axes in world coords
        t = -R @ eye
        fx = 0.5 * width / np.tan(0.5 * fov_x)
        return Camera(
            width=width, height=height, fx=fx, fy=fx,
            cx=width / 2.0, cy=height / 2.0,
            rotation=R, translation=t, near=near, far=far,
        )


def scale_matrix(log_scale: np.ndarray) -> np.ndarray:
    return np.diag(np.exp(np.asarray(log_scale, dtype=np.float64)))


def covariance(g: Gaussian3D) -> np.ndarray:
    """3x3 covariance R S Sᵀ Rᵀ of one splat; symmetric positive definite."""
    R = quat_to_rotmat(normalize_quat(g.rotation))
    M = R * np.exp(g.log_scale)[None, :]  # R @ S with S diagonal
    return M @ M.T


def cloud_covariances(cloud: GaussianCloud) -> np.ndarray:
    """(N, 3, 3) covariances for all splats; quaternions renormalized defensively."""
    R = quat_to_rotmat(normalize_quat(cloud.rotations))
    M = R * np.exp(cloud.log_scales)[:, None, :]
    return M @ np.swapaxes(M, 1, 2)


def projection_jacobian(p_cam: np.ndarray, fx: float, fy: float) -> np.ndarray:
    """Jacobian of the pinhole projection at camera-space points (N, 3) -> (N, 2, 3)."""
    p_cam = np.atleast_2d(p_cam)
    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    inv_z = 1.0 / z
    J = np.zeros((p_cam.shape[0], 2, 3))
    J[:, 0, 0] = fx * inv_z
    J[:, 0, 2] = -fx * x * inv_z * inv_z
    J[:, 1, 1] = fy * inv_z
    J[:, 1, 2] = -fy * y * inv_z * inv_z
    return J


def project_gaussian(
    g: Gaussian3D, cam: Camera, cov2d_floor: float = 0.3
) -> dict[str, np.ndarray | float]:
    """Project one splat to its 2D image footprint.

    Returns ``{"mean2d": (2,), "cov2d": (2, 2), "depth": float}``. The 2D
    covariance is J W Σ Wᵀ Jᵀ plus an additive ``cov2d_floor`` px² diagonal
    low-pass term that keeps sub-pixel splats renderable.

    Raises CulledBehindCamera when the mean is outside (near, far).
    """
    p_cam = cam.rotation @ g.mean + cam.translation
    z = float(p_cam[2])
    if z <= cam.near or z >= cam.far:
        raise CulledBehindCamera(f"depth {z:.4g} outside ({cam.near}, {cam.far})")
    mean2d = np.array([cam.fx * p_cam[0] / z + cam.cx, cam.fy * p_cam[1] / z + cam.cy])
    J = projection_jacobian(p_cam[None, :], cam.fx, cam.fy)[0]
    T = J @ cam.rotation
    cov2d = T @ covariance(g) @ T.T + cov2d_floor * np.eye(2)
    return {"mean2d": mean2d, "cov2d": cov2d, "depth": z}


def project_cloud(cloud: GaussianCloud, cam: Camera, cov2d_floor: float = 0.3):
    """Vectorized projection of every splat.

    Returns (mean2d (N,2), cov2d (N,2,2), depth (N,), p_cam (N,3),
    in_range (N,) bool). Entries outside (near, far) are left in the arrays
    but flagged False so callers can keep index alignment.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot project an empty cloud")
    p_cam = cloud.means @ cam.rotation.T + cam.translation
    z = p_cam[:, 2]
    in_range = (z > cam.near) & (z < cam.far)
    z_safe = np.where(in_range, z, 1.0)
    mean2d = np.stack(
        [cam.fx * p_cam[:, 0] / z_safe + cam.cx, cam.fy * p_cam[:, 1] / z_safe + cam.cy], axis=1
    )
    p_safe = p_cam.copy()
    p_safe[:, 2] = z_safe
    J = projection_jacobian(p_safe, cam.fx, cam.fy)
    T = J @ cam.rotation  # (N, 2, 3)
    Sigma = cloud_covariances(cloud)
    cov2d = T @ Sigma @ np.swapaxes(T, 1, 2)
    cov2d[:, 0, 0] += cov2d_floor
    cov2d[:, 1, 1] += cov2d_floor
    return mean2d, cov2d, z, p_cam, in_range
