import numpy as np
import pytest

from stgsplat.camera import (
    BBOX_SIGMA,
    LOWPASS_FLOOR,
    Camera,
    cull,
    project_center,
    project_covariance,
    projection_jacobian,
    world_to_camera_point,
)
from stgsplat.errors import BehindCameraError
from stgsplat.rasterizer import RenderOptions, render_reference

from conftest import make_camera, random_cloud


def identity_camera(width=640, height=480, fx=100.0, fy=100.0, cx=320.0, cy=240.0):
    return Camera(width=width, height=height, fx=fx, fy=fy, cx=cx, cy=cy,
                  world_to_camera=np.eye(4))


class TestWorldToCamera:
    def test_identity(self):
        cam = identity_camera()
        assert np.allclose(world_to_camera_point(cam, (1, 2, 3)), (1, 2, 3))

    def test_translation(self):
        W = np.eye(4)
        W[2, 3] = -1.0
        cam = identity_camera()
        cam.world_to_camera = W
        assert np.allclose(world_to_camera_point(cam, (0, 0, 1)), (0, 0, 0))

    def test_yaw_180(self):
        # 180 degree yaw about the y axis
        W = np.eye(4)
        W[:3, :3] = np.array([[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]])
        cam = identity_camera()
        cam.world_to_camera = W
        assert np.allclose(world_to_camera_point(cam, (1, 0, 1)), (-1, 0, -1))


class TestProjectCenter:
    def test_optical_axis(self):
        cam = identity_camera(fx=1, fy=1, cx=0, cy=0)
        assert np.allclose(project_center(cam, (0, 0, 1)), (0, 0))

    def test_offset_point(self):
        cam = identity_camera(fx=100, fy=100, cx=320, cy=240)
        assert np.allclose(project_center(cam, (1, 0, 2)), (370, 240))

    def test_behind_camera(self):
        cam = identity_camera()
        with pytest.raises(BehindCameraError):
            project_center(cam, (0, 0, -1))
        with pytest.raises(BehindCameraError):
            project_center(cam, (0, 0, 0))

    def test_jacobian_matches_finite_differences(self, rng):
        cam = identity_camera(fx=80, fy=120, cx=32, cy=24)
        for _ in range(20):
            p = rng.uniform([-1, -1, 0.5], [1, 1, 4.0])
            J = projection_jacobian(cam, p)
            h = 1e-5
            for k in range(3):
                dp = np.zeros(3)
                dp[k] = h
                fd = (project_center(cam, p + dp) - project_center(cam, p - dp)) / (2 * h)
                denom = np.maximum(np.abs(fd), 1.0)
                assert np.all(np.abs(fd - J[:, k]) / denom < 1e-4)


class TestProjectCovariance:
    def test_zero_world_covariance_gives_floor(self):
        cam = identity_camera()
        out = project_covariance(cam, (0.3, -0.2, 2.0), np.zeros((3, 3)))
        assert np.allclose(out, LOWPASS_FLOOR * np.eye(2))

    def test_on_axis_identity(self):
        cam = identity_camera(fx=1, fy=1, cx=0, cy=0)
        out = project_covariance(cam, (0, 0, 1.0), np.eye(3))
        assert np.allclose(out, (1.0 + LOWPASS_FLOOR) * np.eye(2))

    def test_depth_scaling(self):
        cam = identity_camera(fx=1, fy=1, cx=0, cy=0)
        near = project_covariance(cam, (0, 0, 1.0), np.eye(3)) - LOWPASS_FLOOR * np.eye(2)
        far = project_covariance(cam, (0, 0, 2.0), np.eye(3)) - LOWPASS_FLOOR * np.eye(2)
        assert np.allclose(far, near / 4.0)

    def test_symmetric_with_floored_eigenvalues(self, rng):
        cam = identity_camera(fx=90, fy=70, cx=32, cy=32)
        for _ in range(30):
            A = rng.normal(size=(3, 3)) * 0.4
            cov_w = A @ A.T
            p = rng.uniform([-1, -1, 0.8], [1, 1, 5.0])
            out = project_covariance(cam, p, cov_w)
            assert np.allclose(out, out.T, atol=1e-12)
            assert np.linalg.eigvalsh(out).min() >= LOWPASS_FLOOR - 1e-9

    def test_behind_camera(self):
        cam = identity_camera()
        with pytest.raises(BehindCameraError):
            project_covariance(cam, (0, 0, -2.0), np.eye(3))


class TestCull:
    def test_negative_depth_culled(self):
        cam = identity_camera()
        assert cull(cam, (320, 240), np.eye(2), depth=-1.0, temporal_opacity=0.5)

    def test_zero_temporal_opacity_culled(self):
        cam = identity_camera()
        assert cull(cam, (320, 240), np.eye(2), depth=1.0, temporal_opacity=0.0)

    def test_center_splat_kept(self):
        cam = identity_camera()
        assert not cull(cam, (320, 240), np.eye(2) / 9.0, depth=1.0, temporal_opacity=0.5)

    def test_far_offscreen_culled(self):
        cam = identity_camera()
        assert cull(cam, (-500, 240), np.eye(2), depth=1.0, temporal_opacity=0.5)

    def test_culling_is_conservative(self, rng):
        # no Gaussian contributing at least 1/255 alpha anywhere (per the oracle
        # renderer) may be culled
        cam = make_camera(width=48, height=48, focal=45.0)
        opts = RenderOptions()
        for seed in range(5):
            local = np.random.default_rng(seed)
            cloud = random_cloud(40, local, dtype=np.float64)
            t = float(local.uniform(0, 1))
            pos = cloud.positions_at(t)
            sig = cloud.temporal_opacity_at(t)
            for i in range(cloud.count):
                p_cam = world_to_camera_point(cam, pos[i])
                if p_cam[2] <= opts.near_plane:
                    continue
                c2d = project_center(cam, p_cam)
                cov2d = project_covariance(cam, p_cam, cloud.eval_covariance(i, t))
                if not cull(cam, c2d, cov2d, p_cam[2], sig[i]):
                    continue
                # culled: verify via the oracle that this Gaussian alone cannot
                # reach the compositing threshold anywhere on screen
                solo = cloud.select(np.array([i]))
                img = render_reference(solo, cam, t, opts)
                assert img.alpha.max() < 1.0 / 255.0


class TestValidate:
    def test_rejects_bad_rotation(self):
        W = np.eye(4)
        W[0, 0] = 2.0
        cam = identity_camera()
        cam.world_to_camera = W
        with pytest.raises(ValueError):
            cam.validate()

    def test_bbox_sigma_covers_alpha_threshold(self):
        # contributions outside the bounding radius must be below the 1/255
        # compositing cutoff, otherwise box culling would not be conservative
        assert 0.99 * np.exp(-(BBOX_SIGMA**2) / 2.0) < 1.0 / 255.0
