"""Pinhole camera model and world<->pixel mappings.

Conventions (fixed, shared with the cost-volume warping and the viewer):
  - world->camera: x_cam = R @ X + T, camera looks down +z, y down, x right
  - pixels are half-pixel-centered: pixel (row r, col c) has center
    (c + 0.5, r + 0.5); K maps camera rays to these coordinates
  - depth means camera-frame z, not ray length
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InvalidCameraError(ValueError):
    pass


@dataclass(frozen=True)
class CameraView:
    """Intrinsics K (3x3), extrinsics R (3x3), T (3,), depth range, image size."""

    K: np.ndarray
    R: np.ndarray
    T: np.ndarray
    near: float
    far: float
    width: int
    height: int

    def __post_init__(self):
        K = np.asarray(self.K, dtype=np.float64)
        R = np.asarray(self.R, dtype=np.float64)
        T = np.asarray(self.T, dtype=np.float64).reshape(3)
        if K.shape != (3, 3) or R.shape != (3, 3):
            raise InvalidCameraError("K and R must be 3x3")
        if not (0.0 < self.near < self.far):
            raise InvalidCameraError(f"need 0 < near < far, got {self.near}, {self.far}")
        if abs(np.linalg.det(R) - 1.0) > 1e-6 or np.max(np.abs(R @ R.T - np.eye(3))) > 1e-6:
            raise InvalidCameraError("R must be orthonormal with det +1")
        if K[0, 0] <= 0 or K[1, 1] <= 0 or abs(K[1, 0]) > 0 or abs(K[2, 0]) > 0 or abs(K[2, 1]) > 0:
            raise InvalidCameraError("K must be upper-triangular with positive focals")
        if self.width < 1 or self.height < 1:
            raise InvalidCameraError("image size must be positive")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "T", T)

    @property
    def fx(self) -> float:
        return float(self.K[0, 0])

    @property
    def fy(self) -> float:
        return float(self.K[1, 1])

    @property
    def cx(self) -> float:
        return float(self.K[0, 2])

    @property
    def cy(self) -> float:
        return float(self.K[1, 2])

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates: -R^T T."""
        return -self.R.T @ self.T

    def scaled(self, new_w: int, new_h: int) -> "CameraView":
        """Camera with intrinsics rescaled for a resized image plane."""
        sx, sy = new_w / self.width, new_h / self.height
        K = self.K.copy()
        K[0, :] *= sx
        K[1, :] *= sy
        return CameraView(K, self.R, self.T, self.near, self.far, new_w, new_h)


def pixel_grid(width: int, height: int, dtype=np.float64):
    """Half-pixel-centered (x, y) coordinates, each [H,W]."""
    xs = np.arange(width, dtype=dtype) + 0.5
    ys = np.arange(height, dtype=dtype) + 0.5
    return (np.broadcast_to(xs[None, :], (height, width)),
            np.broadcast_to(ys[:, None], (height, width)))


def project(points: np.ndarray, cam: CameraView):
    """World points [...,3] -> (pixel xy [...,2], camera depth [...]).

    No culling: callers test depth > 0 themselves.
    """
    pts = np.asarray(points, dtype=np.float64)
    x_cam = pts @ cam.R.T + cam.T
    z = x_cam[..., 2]
    u = cam.fx * x_cam[..., 0] / z + cam.cx
    v = cam.fy * x_cam[..., 1] / z + cam.cy
    return np.stack([u, v], axis=-1), z


def unproject(depth: np.ndarray, cam: CameraView) -> np.ndarray:
    """Per-pixel world points [H,W,3] from a depth map [H,W].

    X_world = R^T (depth * K^-1 x_h - T), x_h the half-pixel-centered
    homogeneous pixel.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if not np.all(np.isfinite(depth)):
        raise ValueError("non-finite depth")
    h, w = depth.shape
    px, py = pixel_grid(w, h)
    rx = (px - cam.cx) / cam.fx
    ry = (py - cam.cy) / cam.fy
    dirs = np.stack([rx, ry, np.ones_like(rx)], axis=-1)
    cam_pts = dirs * depth[..., None]
    return (cam_pts - cam.T) @ cam.R


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """(R, T) for a camera at ``eye`` looking at ``target``.

    Right-handed, y-down image frame: rows of R are [right, down, forward].
    The viewer reproduces this construction exactly.
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValueError("eye and target coincide")
    fwd = fwd / n
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, up)
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        raise ValueError("view direction parallel to up")
    right = right / rn
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd], axis=0)
    T = -R @ eye
    return R, T


def orbit_pose(azimuth_deg: float, elevation_deg: float, radius: float,
               target=(0.0, 0.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """Orbit parameterization used by the viewer and the pose-ring renderer.

    azimuth 0, elevation 0 puts the camera at target + (0, 0, radius),
    looking down -z toward the target.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    az = np.deg2rad(azimuth_deg)
    el = np.deg2rad(elevation_deg)
    target = np.asarray(target, dtype=np.float64)
    eye = target + radius * np.array(
        [np.cos(el) * np.sin(az), np.sin(el), np.cos(el) * np.cos(az)]
    )
    return look_at(eye, target)


def axes_convergence_point(cams: list[CameraView]) -> np.ndarray:
    """Least-squares point closest to every camera's optical axis.

    Used to aim pose rings at what the capture was looking at.
    """
    A = np.zeros((3, 3))
    b = np.zeros(3)
    for cam in cams:
        d = cam.R[2]  # forward axis in world coords
        P = np.eye(3) - np.outer(d, d)
        A += P
        b += P @ cam.center
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        return np.mean([c.center for c in cams], axis=0)
