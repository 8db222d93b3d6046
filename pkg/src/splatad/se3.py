"""Screw-axis parametrization of rigid motions.

A screw (omega, v) with magnitude theta generates the rigid transform

    T = exp(theta * [S]),   [S] = [[omega]  v]
                                  [   0     0]

whose rotation block is Rodrigues' formula and whose translation column is
G(phi) applied to the linear component. omega need not be unit length: the
axis is omega/|omega| and |omega| folds into the effective angle
phi = theta*|omega|, which keeps the map total and smooth, including the
|omega| -> 0 limit (pure translation by theta*v).

With n = |omega| and phi = theta*n, everything reduces to four scalar
coefficient functions that are analytic in n**2:

    A = sin(phi)/n               R = I + A*[w] + B*[w]^2
    B = (1 - cos(phi))/n**2      t = (theta*I + B*[w] + C*[w]^2) @ v
    C = (phi - sin(phi))/n**3
    P = sin(phi/2)/n             r = (cos(phi/2), P*omega)  [unit quaternion]

The analytic derivatives of A..P with respect to theta and s = n**2 give
exact gradients of the transform with respect to all 7 scalars; they are
validated against central finite differences and series oracles in tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateAxis, ShapeMismatch
from .scene import GaussianCloud, normalize_quat, quat_multiply

# switch to Taylor series below this phi**2 to avoid catastrophic cancellation
_SERIES_X = 1e-6


def skew(w: np.ndarray) -> np.ndarray:
    """Antisymmetric matrix [w] with [w] @ x = w x x."""
    w = np.asarray(w, dtype=np.float64).reshape(3)
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


@dataclass
class _Coeffs:
    """Scalar coefficient functions and their theta/s partials at (theta, omega)."""

    n2: float
    A: float
    B: float
    C: float
    P: float
    cos_half: float
    # partials w.r.t. s = |omega|^2
    dA_ds: float
    dB_ds: float
    dC_ds: float
    dP_ds: float
    dcos_half_ds: float


def _coeffs(theta: float, omega: np.ndarray) -> _Coeffs:
    s = float(omega @ omega)
    x = theta * theta * s  # phi^2
    t = theta
    if x < _SERIES_X:
        A = t * (1 - x / 6 + x * x / 120 - x ** 3 / 5040)
        B = t * t * (0.5 - x / 24 + x * x / 720 - x ** 3 / 40320)
        C = t ** 3 * (1 / 6 - x / 120 + x * x / 5040 - x ** 3 / 362880)
        xq = x / 4
        P = (t / 2) * (1 - xq / 6 + xq * xq / 120 - xq ** 3 / 5040)
        cos_half = 1 - xq / 2 + xq * xq / 24 - xq ** 3 / 720
        dA_ds = t ** 3 * (-1 / 6 + x / 60 - x * x / 1680)
        dB_ds = t ** 4 * (-1 / 24 + x / 360 - x * x / 13440)
        dC_ds = t ** 5 * (-1 / 120 + x / 2520 - x * x / 120960)
        dP_ds = t ** 3 * (-1 / 48 + xq / 480 - xq * xq / 13440)
    else:
        n = np.sqrt(s)
        phi = t * n
        sin_p, cos_p = np.sin(phi), np.cos(phi)
        A = sin_p / n
        B = (1 - cos_p) / s
        C = (phi - sin_p) / (s * n)
        P = np.sin(phi / 2) / n
        cos_half = np.cos(phi / 2)
        dA_ds = (phi * cos_p - sin_p) / (2 * s * n)
        dB_ds = (phi * sin_p - 2 * (1 - cos_p)) / (2 * s * s)
        dC_ds = (phi * (1 - cos_p) - 3 * (phi - sin_p)) / (2 * s * s * n)
        dP_ds = (t * cos_half - 2 * P) / (4 * s)
    dcos_half_ds = -t * P / 4
    return _Coeffs(s, A, B, C, P, cos_half, dA_ds, dB_ds, dC_ds, dP_ds, dcos_half_ds)


def rodrigues(omega: np.ndarray, theta: float, strict: bool = False) -> np.ndarray:
    """Rotation matrix exp(theta*[omega]).

    omega is normalized internally; |omega| folds into the angle, so the
    result equals the matrix exponential for any omega. For |omega| below
    1e-12 the rotation degenerates to the identity; with ``strict`` that
    case raises DegenerateAxis when a nonzero theta is requested.
    """
    omega = np.asarray(omega, dtype=np.float64).reshape(3)
    n = float(np.linalg.norm(omega))
    if n < 1e-12:
        if strict and theta != 0.0:
            raise DegenerateAxis(f"|omega| = {n:.3g} cannot carry theta = {theta}")
        return np.eye(3)
    c = _coeffs(float(theta), omega)
    W = skew(omega)
    return np.eye(3) + c.A * W + c.B * (W @ W)


@dataclass
class ScrewTransform:
    """Rigid motion parametrized by screw axis (omega, v) and magnitude theta."""

    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    theta: float = 0.0

    def __post_init__(self) -> None:
        self.omega = np.asarray(self.omega, dtype=np.float64).reshape(3)
        self.v = np.asarray(self.v, dtype=np.float64).reshape(3)
        self.theta = float(self.theta)

    @staticmethod
    def identity() -> "ScrewTransform":
        return ScrewTransform()

    def as_vector(self) -> np.ndarray:
        """Flat (7,) parameter vector [omega, v, theta] for the optimizer."""
        return np.concatenate([self.omega, self.v, [self.theta]])

    @staticmethod
    def from_vector(p: np.ndarray) -> "ScrewTransform":
        p = np.asarray(p, dtype=np.float64).reshape(7)
        return ScrewTransform(omega=p[:3], v=p[3:6], theta=float(p[6]))

    def rotation_matrix(self) -> np.ndarray:
        c = _coeffs(self.theta, self.omega)
        W = skew(self.omega)
        return np.eye(3) + c.A * W + c.B * (W @ W)

    def translation_matrix(self) -> np.ndarray:
        """V(theta, omega) with translation = V @ v."""
        c = _coeffs(self.theta, self.omega)
        W = skew(self.omega)
        return self.theta * np.eye(3) + c.B * W + c.C * (W @ W)

    def translation(self) -> np.ndarray:
        return self.translation_matrix() @ self.v

    def rotation_quat(self) -> np.ndarray:
        """Unit quaternion (w, x, y, z) of the rotation block."""
        c = _coeffs(self.theta, self.omega)
        q = np.empty(4)
        q[0] = c.cos_half
        q[1:] = c.P * self.omega
        return q / np.linalg.norm(q)


def to_matrix(t: ScrewTransform) -> np.ndarray:
    """4x4 rigid transform exp(theta*[S]); identity at theta = 0."""
    M = np.eye(4)
    M[:3, :3] = t.rotation_matrix()
    M[:3, 3] = t.translation()
    return M


def apply_to_cloud(t: ScrewTransform, cloud: GaussianCloud) -> GaussianCloud:
    """Rigidly move every splat: means get R x + t, quaternions get r ⊗ q.

    Scales, opacities and colors are untouched; view-independent color is
    rotation-invariant. Returns a new cloud (the input is never mutated).
    """
    R = t.rotation_matrix()
    tvec = t.translation()
    r = t.rotation_quat()
    quats = quat_multiply(r[None, :], cloud.rotations)
    return GaussianCloud(
        means=cloud.means @ R.T + tvec,
        log_scales=cloud.log_scales.copy(),
        rotations=normalize_quat(quats),
        opacity_logits=cloud.opacity_logits.copy(),
        colors=cloud.colors.copy(),
        scene_radius=cloud.scene_radius,
    )


def _skew_basis() -> np.ndarray:
    """(3, 3, 3) stack of [e_k]."""
    E = np.zeros((3, 3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1.0
        E[k] = skew(e)
    return E


_EK = _skew_basis()


def transform_derivatives(t: ScrewTransform):
    """Analytic partials of (R, translation V, quaternion r) in all 7 scalars.

    Returns a dict with dR_dtheta (3,3), dR_domega (3,3,3), dV_dtheta (3,3),
    dV_domega (3,3,3), dr_dtheta (4,), dr_domega (3,4); the v partial of the
    translation is V itself and everything else is independent of v.
    """
    w = t.omega
    th = t.theta
    c = _coeffs(th, w)
    W = skew(w)
    W2 = W @ W
    R = np.eye(3) + c.A * W + c.B * W2
    V = th * np.eye(3) + c.B * W + c.C * W2

    n = np.sqrt(c.n2)
    phi = th * n
    dR_dtheta = np.cos(phi) * W + c.A * W2
    dV_dtheta = R  # d/dtheta of (theta*I + B*W + C*W2) since B' = A, C' = B

    WE = np.einsum("kij,jl->kil", _EK, W)  # [e_k][w]
    EW = np.einsum("ij,kjl->kil", W, _EK)  # [w][e_k]
    anti = WE + EW
    dR_domega = c.A * _EK + c.B * anti + 2 * np.einsum(
        "k,ij->kij", w, c.dA_ds * W + c.dB_ds * W2
    )
    dV_domega = c.B * _EK + c.C * anti + 2 * np.einsum(
        "k,ij->kij", w, c.dB_ds * W + c.dC_ds * W2
    )

    sin_half_n = c.P * c.n2  # sin(phi/2) * n
    dr_dtheta = np.empty(4)
    dr_dtheta[0] = -0.5 * sin_half_n
    dr_dtheta[1:] = 0.5 * c.cos_half * w

    dr_domega = np.zeros((3, 4))
    dr_domega[:, 0] = 2 * w * c.dcos_half_ds
    dr_domega[:, 1:] = c.P * np.eye(3) + 2 * np.outer(w, w) * c.dP_ds

    return {
        "R": R,
        "V": V,
        "r": np.array([c.cos_half, *(c.P * w)]),
        "dR_dtheta": dR_dtheta,
        "dR_domega": dR_domega,
        "dV_dtheta": dV_dtheta,
        "dV_domega": dV_domega,
        "dr_dtheta": dr_dtheta,
        "dr_domega": dr_domega,
    }


def pose_jacobian(
    t: ScrewTransform,
    cloud: GaussianCloud,
    grad_means: np.ndarray,
    grad_quats: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Pull gradients on the transformed cloud back to (omega, v, theta).

    ``grad_means`` (N, 3) and optional ``grad_quats`` (N, 4) are the loss
    gradients with respect to the *outputs* of apply_to_cloud(t, cloud);
    ``cloud`` is the untransformed input. Returns (grad_omega, grad_v,
    grad_theta) by exact chain rule through the screw exponential.
    """
    grad_means = np.asarray(grad_means, dtype=np.float64)
    if grad_means.shape != cloud.means.shape:
        raise ShapeMismatch(
            f"grad_means {grad_means.shape} does not match cloud {cloud.means.shape}"
        )
    d = transform_derivatives(t)

    # mean path: mu' = R mu + V v
    GR = grad_means.T @ cloud.means        # (3,3): sum_i g_i mu_i^T
    gt = grad_means.sum(axis=0)            # (3,)
    grad_theta = float(np.sum(GR * d["dR_dtheta"]) + gt @ (d["dV_dtheta"] @ t.v))
    grad_omega = np.einsum("kij,ij->k", d["dR_domega"], GR) + np.einsum(
        "kij,j,i->k", d["dV_domega"], t.v, gt
    )
    grad_v = d["V"].T @ gt

    if grad_quats is not None:
        grad_quats = np.asarray(grad_quats, dtype=np.float64)
        if grad_quats.shape != cloud.rotations.shape:
            raise ShapeMismatch(
                f"grad_quats {grad_quats.shape} does not match cloud {cloud.rotations.shape}"
            )
        # q' = normalize(r ⊗ q); project upstream through the normalization
        r = d["r"]
        q = cloud.rotations
        q_pre = quat_multiply(r[None, :], q)
        norm = np.linalg.norm(q_pre, axis=1, keepdims=True)
        q_hat = q_pre / norm
        h = (grad_quats - q_hat * np.sum(grad_quats * q_hat, axis=1, keepdims=True)) / norm

        # grad_r = sum_i M(q_i)^T h_i with q' = M(q) r
        qw, qx, qy, qz = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
        hw, hx, hy, hz = h[:, 0], h[:, 1], h[:, 2], h[:, 3]
        grad_r = np.array(
            [
                np.sum(qw * hw + qx * hx + qy * hy + qz * hz),
                np.sum(-qx * hw + qw * hx - qz * hy + qy * hz),
                np.sum(-qy * hw + qz * hx + qw * hy - qx * hz),
                np.sum(-qz * hw - qy * hx + qx * hy + qw * hz),
            ]
        )
        grad_theta += float(grad_r @ d["dr_dtheta"])
        grad_omega = grad_omega + d["dr_domega"] @ grad_r

    return grad_omega, grad_v, grad_theta
