"""File formats: splat PLY, PNG images, NeRF-style transforms, score maps.

PLY uses the de-facto splat layout (binary little-endian float32 fields
x,y,z, opacity, scale_0..2, rot_0..3, f_dc_0..2) with opacity in logit
space, scales in log space and colors as degree-0 SH coefficients
(c = 0.5 + C0 * f_dc), so exports open in common splat viewers. The loader
ignores unknown properties such as normals or higher SH bands.

transforms_*.json follows the NeRF-synthetic convention: a shared
``camera_angle_x`` plus per-frame ``transform_matrix`` holding the
camera-to-world matrix in the OpenGL convention (camera looks along -z,
y up). Internally cameras are +z-forward world-to-camera; conversion flips
the y and z axes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .scene import Camera, GaussianCloud

SH_C0 = 0.28209479177387814
_PLY_FIELDS = [
    "x", "y", "z", "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
    "f_dc_0", "f_dc_1", "f_dc_2",
]
_GL_FLIP = np.diag([1.0, -1.0, -1.0, 1.0])


def save_ply(cloud: GaussianCloud, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = len(cloud)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in _PLY_FIELDS]
    header += ["end_header"]

    data = np.empty((n, len(_PLY_FIELDS)), dtype="<f4")
    data[:, 0:3] = cloud.means
    data[:, 3] = cloud.opacity_logits
    data[:, 4:7] = cloud.log_scales
    data[:, 7:11] = cloud.rotations
    data[:, 11:14] = (cloud.colors - 0.5) / SH_C0
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(data.tobytes())


def load_ply(path: str | Path) -> GaussianCloud:
    with open(path, "rb") as f:
        blob = f.read()
    end = blob.index(b"end_header\n") + len(b"end_header\n")
    lines = blob[:end].decode("ascii").splitlines()
    if lines[0] != "ply":
        raise ValueError(f"{path} is not a PLY file")
    fmt = next(l for l in lines if l.startswith("format"))
    if "binary_little_endian" not in fmt:
        raise ValueError("only binary little-endian PLY is supported")
    n = int(next(l for l in lines if l.startswith("element vertex")).split()[-1])
    props = [l.split()[-1] for l in lines if l.startswith("property")]
    types = [l.split()[1] for l in lines if l.startswith("property")]
    if any(t != "float" for t in types):
        raise ValueError("only float properties are supported")

    raw = np.frombuffer(blob, dtype="<f4", count=n * len(props), offset=end)
    raw = raw.reshape(n, len(props)).astype(np.float64)
    col = {name: i for i, name in enumerate(props)}
    missing = [f for f in _PLY_FIELDS if f not in col]
    if missing:
        raise ValueError(f"PLY is missing splat fields: {missing}")

    def take(names: list[str]) -> np.ndarray:
        return raw[:, [col[m] for m in names]]

    return GaussianCloud(
        means=take(["x", "y", "z"]),
        log_scales=take(["scale_0", "scale_1", "scale_2"]),
        rotations=take(["rot_0", "rot_1", "rot_2", "rot_3"]),
        opacity_logits=raw[:, col["opacity"]],
        colors=take(["f_dc_0", "f_dc_1", "f_dc_2"]) * SH_C0 + 0.5,
    )


def save_png(img: np.ndarray, path: str | Path) -> None:
    """Write a float image in [0, 1] (HxW or HxWx3) as 8-bit PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    mode = "L" if data.ndim == 2 else "RGB"
    Image.fromarray(data, mode=mode).save(path)


def load_png(path: str | Path) -> np.ndarray:
    """Read a PNG as float64 in [0, 1]; values are treated as linear."""
    with Image.open(path) as im:
        if im.mode == "I;16":
            return np.asarray(im, dtype=np.float64) / 65535.0
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return np.asarray(im, dtype=np.float64) / 255.0


def save_score_map_png16(score_map: np.ndarray, path: str | Path) -> None:
    """Min-max normalized 16-bit PNG plus a JSON sidecar with the scale."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(score_map, dtype=np.float64)
    lo, hi = float(arr.min()), float(arr.max())
    scale = hi - lo if hi > lo else 1.0
    data = np.round((arr - lo) / scale * 65535.0).astype(np.uint16)
    Image.fromarray(data, mode="I;16").save(path)
    with open(path.with_suffix(".json"), "w") as f:
        json.dump({"min": lo, "max": hi}, f)


SMAP_MAGIC = b"SMAP"


def save_smap(arr: np.ndarray, path: str | Path) -> None:
    """Raw float32 container: magic, uint32 height/width, row-major data."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
    if arr.ndim != 2:
        raise ValueError("score maps are 2D")
    with open(path, "wb") as f:
        f.write(SMAP_MAGIC)
        f.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        f.write(arr.tobytes())


def load_smap(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != SMAP_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        h, w = struct.unpack("<II", f.read(8))
        data = np.frombuffer(f.read(h * w * 4), dtype="<f4")
    return data.reshape(h, w).astype(np.float64)


def camera_angle_x(cam: Camera) -> float:
    return float(2.0 * np.arctan(cam.width / (2.0 * cam.fx)))


def camera_to_nerf_matrix(cam: Camera) -> np.ndarray:
    """Camera-to-world matrix in the OpenGL (-z forward) convention."""
    c2w = np.eye(4)
    c2w[:3, :3] = cam.rotation.T
    c2w[:3, 3] = cam.center
    return c2w @ _GL_FLIP


def nerf_matrix_to_camera(
    matrix: np.ndarray,
    width: int,
    height: int,
    angle_x: float,
    near: float = 0.01,
    far: float = 100.0,
) -> Camera:
    c2w = np.asarray(matrix, dtype=np.float64) @ _GL_FLIP
    R = c2w[:3, :3].T
    C = c2w[:3, 3]
    fx = 0.5 * width / np.tan(0.5 * angle_x)
    return Camera(
        width=width, height=height, fx=fx, fy=fx,
        cx=width / 2.0, cy=height / 2.0,
        rotation=R, translation=-R @ C, near=near, far=far,
    )


def save_transforms(
    path: str | Path, frames: list[tuple[str, Camera]]
) -> None:
    """NeRF-synthetic transforms file for (file_path, camera) frames."""
    if not frames:
        raise ValueError("no frames to save")
    doc = {
        "camera_angle_x": camera_angle_x(frames[0][1]),
        "frames": [
            {"file_path": name, "transform_matrix": camera_to_nerf_matrix(cam).tolist()}
            for name, cam in frames
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)


def load_transforms(
    path: str | Path, width: int, height: int, near: float = 0.01, far: float = 100.0
) -> list[tuple[str, Camera]]:
    with open(path) as f:
        doc = json.load(f)
    angle = float(doc["camera_angle_x"])
    return [
        (
            fr["file_path"],
            nerf_matrix_to_camera(np.array(fr["transform_matrix"]), width, height, angle, near, far),
        )
        for fr in doc["frames"]
    ]
