import numpy as np
import pytest

from stgsplat.camera import Camera
from stgsplat.cloud import GaussianCloud


def look_at_matrix(eye, target=(0.0, 0.0, 0.0)):
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(np.array([0.0, 1.0, 0.0]), fwd)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    W = np.eye(4)
    W[:3, :3] = np.stack([right, down, fwd])
    W[:3, 3] = -W[:3, :3] @ eye
    return W


def make_camera(width=64, height=64, focal=60.0, eye=(0.0, 0.0, -8.0)):
    return Camera(
        width=width,
        height=height,
        fx=focal,
        fy=focal,
        cx=width / 2.0,
        cy=height / 2.0,
        world_to_camera=look_at_matrix(eye),
    )


def random_cloud(n, rng, dtype=np.float32, motion_scale=0.1, anisotropic=True):
    """A generic well-conditioned random cloud in front of the test cameras."""
    c = GaussianCloud.zeros(n, dtype=np.float64)
    c.motion_coeffs[:, 0, :] = rng.uniform(-1.5, 1.5, (n, 3))
    c.motion_coeffs[:, 1:, :] = rng.normal(0, motion_scale, (n, 3, 3))
    c.rotation_coeffs[:, 0, :] = rng.normal(0, 0.6, (n, 4)) + np.array([1.5, 0, 0, 0])
    c.rotation_coeffs[:, 1, :] = rng.normal(0, 0.2, (n, 4))
    if anisotropic:
        c.log_scales[:] = rng.uniform(np.log(0.08), np.log(0.4), (n, 3))
    else:
        c.log_scales[:] = rng.uniform(np.log(0.08), np.log(0.4), (n, 1))
    c.opacity_logit[:] = rng.normal(0.0, 1.2, n)
    c.temporal_center[:] = rng.uniform(0.0, 1.0, n)
    c.log_temporal_scale[:] = rng.uniform(-2.0, 1.5, n)
    c.f_base[:] = rng.uniform(0.0, 1.0, (n, 3))
    c.f_dir[:] = rng.normal(0.0, 0.3, (n, 3))
    c.f_time[:] = rng.normal(0.0, 0.3, (n, 3))
    return c if dtype == np.float64 else c.astype(dtype)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
