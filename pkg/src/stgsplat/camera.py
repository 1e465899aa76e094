"""Pinhole camera model and perspective projection of 3D Gaussians to 2D splats.

The projection approximates the perspective map by its Jacobian at the Gaussian
center (EWA-style), yielding a 2D mean and 2x2 covariance in pixel units. A
constant low-pass term keeps projected covariances from collapsing below one
pixel, which doubles as the anti-aliasing floor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError

# Added to the 2D covariance diagonal (px^2); standard splatting anti-alias floor.
LOWPASS_FLOOR = 0.3
NEAR_PLANE = 0.01
# Temporal opacities below this cannot reach the compositing quantization step.
TEMPORAL_CULL_THRESHOLD = 1.0 / 255.0
# Bounding-box radius in units of sqrt(max eigenvalue). 3.5 sigma keeps every
# contribution that could survive the 1/255 alpha cutoff (0.99 * exp(-3.5^2/2)
# is already below it), so box culling never drops a visible contribution.
BBOX_SIGMA = 3.5


@dataclass
class Camera:
    """Pinhole intrinsics plus a rigid world-to-camera transform (4x4, row-major)."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: np.ndarray

    def __post_init__(self):
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64)
        if self.world_to_camera.shape != (4, 4):
            raise ValueError("world_to_camera must be 4x4")

    def validate(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        R = self.rotation
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or not np.isclose(
            np.linalg.det(R), 1.0, atol=1e-6
        ):
            raise ValueError("world_to_camera rotation block is not a proper rotation")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera origin in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "world_to_camera": self.world_to_camera.reshape(-1).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            width=int(d["width"]),
            height=int(d["height"]),
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            world_to_camera=np.asarray(d["world_to_camera"], dtype=np.float64).reshape(4, 4),
        )


@dataclass
class Splat2D:
    """A Gaussian projected to the image plane."""

    center: np.ndarray  # (2,) pixel coordinates
    cov2d: np.ndarray  # (2, 2) symmetric, pixel^2
    depth: float  # camera-space z of the center


def world_to_camera_point(cam: Camera, x) -> np.ndarray:
    """Rigid transform of a world point into camera coordinates."""
    x = np.asarray(x, dtype=np.float64)
    return cam.rotation @ x + cam.translation


def project_center(cam: Camera, mu_cam) -> np.ndarray:
    """Pinhole projection of a camera-space point to pixel coordinates."""
    mu_cam = np.asarray(mu_cam, dtype=np.float64)
    z = mu_cam[2]
    if z <= 0:
        raise BehindCameraError(f"point has non-positive depth z={z}")
    return np.array([cam.fx * mu_cam[0] / z + cam.cx, cam.fy * mu_cam[1] / z + cam.cy])


def projection_jacobian(cam: Camera, mu_cam) -> np.ndarray:
    """2x3 Jacobian of the pinhole map at a camera-space point."""
    x, y, z = np.asarray(mu_cam, dtype=np.float64)
    if z <= 0:
        raise BehindCameraError(f"point has non-positive depth z={z}")
    return np.array(
        [
            [cam.fx / z, 0.0, -cam.fx * x / (z * z)],
            [0.0, cam.fy / z, -cam.fy * y / (z * z)],
        ]
    )


def project_covariance(cam: Camera, mu_cam, cov_world, lowpass: float = LOWPASS_FLOOR) -> np.ndarray:
    """Project a world covariance to a 2x2 pixel-space covariance.

    Applies J W_rot Sigma W_rot^T J^T with J the pinhole Jacobian at mu_cam, then
    adds `lowpass` to the diagonal.
    """
    J = projection_jacobian(cam, mu_cam)
    M = J @ cam.rotation
    cov2d = M @ np.asarray(cov_world, dtype=np.float64) @ M.T
    return cov2d + lowpass * np.eye(2)


def bounding_radius(cov2d: np.ndarray, sigma_factor: float = BBOX_SIGMA) -> float:
    """Conservative pixel radius of a splat from its largest covariance eigenvalue."""
    a, b, c = cov2d[0, 0], cov2d[0, 1], cov2d[1, 1]
    mid = 0.5 * (a + c)
    det = a * c - b * b
    lam_max = mid + np.sqrt(max(mid * mid - det, 0.0))
    return float(sigma_factor * np.sqrt(max(lam_max, 0.0)))


def cull(
    cam: Camera,
    center_2d,
    cov2d,
    depth: float,
    temporal_opacity: float,
    near_plane: float = NEAR_PLANE,
    temporal_threshold: float = TEMPORAL_CULL_THRESHOLD,
) -> bool:
    """True iff the splat can be discarded without changing the rendered image."""
    if depth <= near_plane:
        return True
    if temporal_opacity < temporal_threshold:
        return True
    r = bounding_radius(np.asarray(cov2d, dtype=np.float64))
    cx2, cy2 = np.asarray(center_2d, dtype=np.float64)
    if cx2 + r < 0 or cx2 - r > cam.width or cy2 + r < 0 or cy2 - r > cam.height:
        return True
    return False
