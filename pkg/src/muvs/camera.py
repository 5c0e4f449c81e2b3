"""Calibrated pinhole cameras."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, InvalidArgument

MIN_DEPTH = 1e-6


@dataclass(frozen=True, eq=False)
class Camera:
    rotation: np.ndarray  # world -> camera
    translation: np.ndarray
    focal: np.ndarray
    principal_point: np.ndarray
    image_size: tuple[int, int]  # (width, height)

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))
        object.__setattr__(self, "focal", np.asarray(self.focal, dtype=float).reshape(2))
        object.__setattr__(self, "principal_point", np.asarray(self.principal_point, dtype=float).reshape(2))
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9 or np.linalg.det(R) < 0:
            raise InvalidArgument("camera rotation must be orthonormal with determinant +1")
        if np.any(self.focal <= 0) or min(self.image_size) <= 0:
            raise InvalidArgument("focal lengths and image size must be positive")

    @property
    def width(self) -> int:
        return self.image_size[0]

    @property
    def height(self) -> int:
        return self.image_size[1]

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @classmethod
    def look_at(cls, eye, target, focal, image_size, up=(0.0, 1.0, 0.0)) -> "Camera":
        """Camera at ``eye`` looking at ``target``; image y points down."""
        eye = np.asarray(eye, dtype=float)
        z = np.asarray(target, dtype=float) - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=float))
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        R = np.stack([x, y, z])
        w, h = image_size
        return cls(R, -R @ eye, (focal, focal), ((w - 1) / 2, (h - 1) / 2), (w, h))

    @classmethod
    def default_for_image(cls, image_size) -> "Camera":
        """Identity-extrinsics camera with focal = max(image dims), centered principal point."""
        w, h = image_size
        f = float(max(w, h))
        return cls(np.eye(3), np.zeros(3), (f, f), (w / 2, h / 2), (w, h))

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation


def project(cam: Camera, point: np.ndarray) -> np.ndarray:
    """Pixel coordinates of world points of shape (..., 3)."""
    xc = cam.to_camera(point)
    z = xc[..., 2]
    if np.any(z <= MIN_DEPTH):
        raise BehindCameraError("point at or behind the camera plane")
    return cam.focal * (xc[..., :2] / z[..., None]) + cam.principal_point


def project_jacobian(cam: Camera, point: np.ndarray) -> np.ndarray:
    """d pixel / d world point, shape (..., 2, 3)."""
    xc = cam.to_camera(point)
    z = xc[..., 2]
    if np.any(z <= MIN_DEPTH):
        raise BehindCameraError("point at or behind the camera plane")
    return _jacobian_from_camera(cam, xc)


def _jacobian_from_camera(cam: Camera, xc: np.ndarray) -> np.ndarray:
    z = xc[..., 2]
    fx, fy = cam.focal
    dcam = np.zeros(xc.shape[:-1] + (2, 3))
    dcam[..., 0, 0] = fx / z
    dcam[..., 0, 2] = -fx * xc[..., 0] / z**2
    dcam[..., 1, 1] = fy / z
    dcam[..., 1, 2] = -fy * xc[..., 1] / z**2
    return dcam @ cam.rotation


def project_masked(cam: Camera, points: np.ndarray, want_jacobian: bool = False):
    """Projection that flags points behind the camera instead of raising.

    Returns (pixels, valid, jacobian); invalid rows hold NaN pixels and zero
    Jacobians.
    """
    xc = cam.to_camera(points)
    valid = xc[..., 2] > MIN_DEPTH
    safe = np.where(valid[..., None], xc, np.array([0.0, 0.0, 1.0]))
    pix = cam.focal * (safe[..., :2] / safe[..., 2:3]) + cam.principal_point
    pix[~valid] = np.nan
    jac = None
    if want_jacobian:
        jac = _jacobian_from_camera(cam, safe)
        jac[~valid] = 0.0
    return pix, valid, jac
