import numpy as np
import pytest

from stgsplat.errors import UsageError
from stgsplat.rasterizer import FeatureImage
from stgsplat.shading import (
    MlpHead,
    ray_direction,
    ray_directions_image,
    shade,
    shade_backward,
)

from conftest import make_camera


def feature_image_from(features):
    features = np.asarray(features, dtype=np.float64)
    h, w = features.shape[:2]
    return FeatureImage(
        features=features,
        alpha=np.ones((h, w), dtype=np.float64),
        depth=np.ones((h, w), dtype=np.float64),
    )


class TestShade:
    def test_zero_mlp_returns_base(self, rng):
        cam = make_camera(width=8, height=8)
        feats = rng.uniform(0, 1, (8, 8, 9))
        fi = feature_image_from(feats)
        mlp = MlpHead.zeros(hidden=16, activation_mode="clamp")
        rgb, _ = shade(fi, cam, mlp)
        assert np.array_equal(rgb, feats[:, :, :3])

    def test_lite_mode_clamps_base(self, rng):
        cam = make_camera(width=8, height=8)
        feats = rng.normal(0, 2, (8, 8, 9))
        fi = feature_image_from(feats)
        rgb, _ = shade(fi, cam, None)
        assert np.array_equal(rgb, np.clip(feats[:, :, :3], 0, 1))

    def test_lite_equals_zero_weight_full(self, rng):
        cam = make_camera(width=8, height=8)
        feats = rng.normal(0, 2, (8, 8, 9))
        fi = feature_image_from(feats)
        lite, _ = shade(fi, cam, None)
        full, _ = shade(fi, cam, MlpHead.zeros(hidden=4, activation_mode="clamp"))
        assert np.array_equal(lite, full)

    def test_zero_everything_activation_fixpoints(self):
        cam = make_camera(width=4, height=4)
        fi = feature_image_from(np.zeros((4, 4, 9)))
        rgb, _ = shade(fi, cam, MlpHead.zeros(hidden=4, activation_mode="clamp"))
        assert np.all(rgb == 0.0)
        rgb, _ = shade(fi, cam, MlpHead.zeros(hidden=4, activation_mode="sigmoid"))
        assert np.allclose(rgb, 0.5)

    def test_resolution_mismatch(self, rng):
        cam = make_camera(width=16, height=16)
        fi = feature_image_from(np.zeros((8, 8, 9)))
        with pytest.raises(UsageError):
            shade(fi, cam, None)

    def test_bounded_and_finite_on_wild_inputs(self, rng):
        # no NaN amplification for feature values anywhere in [-10, 10]
        cam = make_camera(width=8, height=8)
        mlp = MlpHead.create(32, "clamp", rng)
        for _ in range(10):
            fi = feature_image_from(rng.uniform(-10, 10, (8, 8, 9)))
            rgb, _ = shade(fi, cam, mlp)
            assert np.all(np.isfinite(rgb))
            assert rgb.min() >= 0.0 and rgb.max() <= 1.0


class TestShadeBackward:
    def test_zero_upstream(self, rng):
        cam = make_camera(width=8, height=8)
        fi = feature_image_from(rng.uniform(0, 1, (8, 8, 9)))
        mlp = MlpHead.create(8, "clamp", rng)
        _, inter = shade(fi, cam, mlp)
        gf, gm = shade_backward(inter, np.zeros((8, 8, 3)))
        assert not gf.any()
        assert not (gm.w1.any() or gm.b1.any() or gm.w2.any() or gm.b2.any())

    def test_identity_path_with_zero_weights(self, rng):
        cam = make_camera(width=8, height=8)
        fi = feature_image_from(rng.uniform(0.1, 0.9, (8, 8, 9)))
        mlp = MlpHead.zeros(hidden=8, activation_mode="clamp")
        _, inter = shade(fi, cam, mlp)
        g = rng.normal(size=(8, 8, 3))
        gf, _ = shade_backward(inter, g)
        assert np.allclose(gf[:, :, 0:3], g)  # base passes straight through
        assert not gf[:, :, 3:9].any()  # view/time features blocked by zero weights

    def test_clamp_blocks_gradient_outside_range(self, rng):
        cam = make_camera(width=4, height=4)
        feats = np.zeros((4, 4, 9))
        feats[:, :, 0] = 2.0  # clamped high
        fi = feature_image_from(feats)
        _, inter = shade(fi, cam, MlpHead.zeros(hidden=4))
        gf, _ = shade_backward(inter, np.ones((4, 4, 3)))
        assert not gf[:, :, 0].any()

    def test_fd_agreement_on_random_mlp(self, rng):
        cam = make_camera(width=8, height=8)
        feats = rng.uniform(0.1, 0.9, (8, 8, 9))
        mlp = MlpHead.create(8, "sigmoid", rng, dtype=np.float64)
        g = rng.normal(size=(8, 8, 3))
        h = 1e-4

        def loss():
            fi = feature_image_from(feats)
            rgb, _ = shade(fi, cam, mlp)
            return float((rgb * g).sum())

        fi = feature_image_from(feats)
        _, inter = shade(fi, cam, mlp)
        gf, gm = shade_backward(inter, g)
        for arr, ana in ((mlp.w1, gm.w1), (mlp.b2, gm.b2), (feats, gf)):
            flat, aflat = arr.reshape(-1), np.asarray(ana).reshape(-1)
            for i in rng.choice(flat.size, size=min(12, flat.size), replace=False):
                orig = flat[i]
                flat[i] = orig + h
                lp = loss()
                flat[i] = orig - h
                lm = loss()
                flat[i] = orig
                fd = (lp - lm) / (2 * h)
                assert abs(fd - aflat[i]) / max(abs(fd), abs(aflat[i]), 1e-7) < 1e-3


class TestRayDirection:
    def test_principal_point_identity_pose(self):
        from stgsplat.camera import Camera

        cam = Camera(width=64, height=64, fx=50, fy=50, cx=32, cy=32,
                     world_to_camera=np.eye(4))
        assert np.allclose(ray_direction(cam, (32.0, 32.0)), (0, 0, 1))

    def test_unit_norm_everywhere(self):
        cam = make_camera(width=16, height=16)
        rays = ray_directions_image(cam)
        assert np.allclose(np.linalg.norm(rays, axis=-1), 1.0, atol=1e-12)

    def test_one_focal_length_right(self):
        from stgsplat.camera import Camera

        cam = Camera(width=200, height=200, fx=80, fy=80, cx=100, cy=100,
                     world_to_camera=np.eye(4))
        expected = np.array([1.0, 0.0, 1.0]) / np.sqrt(2.0)
        assert np.allclose(ray_direction(cam, (180.0, 100.0)), expected)

    def test_matches_per_pixel_helper(self):
        cam = make_camera(width=8, height=8)
        rays = ray_directions_image(cam)
        for px, py in ((0, 0), (3, 5), (7, 7)):
            assert np.allclose(rays[py, px], ray_direction(cam, (px + 0.5, py + 0.5)))
