import numpy as np
import pytest

from stgsplat.cloud import GaussianCloud, inverse_sigmoid
from stgsplat.errors import UsageError
from stgsplat.optim import AdamState
from stgsplat.synth import SynthSpec, synthesize
from stgsplat.dataset import load_dataset
from stgsplat.training import (
    GradAccumulator,
    TrainConfig,
    densify_and_prune,
    guided_sample,
    initialize_scene,
    prune,
    subsample_pointcloud,
    train,
)

from conftest import make_camera, random_cloud


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("tinyscene")
    spec = SynthSpec(out_dir=str(out), cameras=3, width=48, height=48, frames=4,
                     blobs=4, seed=3)
    synthesize(spec)
    return load_dataset(out)


class TestInitializeScene:
    def test_single_white_point(self):
        cloud = initialize_scene([(np.zeros((1, 3)), np.ones((1, 3)), 0.0)])
        assert cloud.count == 1
        assert np.allclose(cloud.motion_coeffs[0, 0], 0.0)
        assert not cloud.motion_coeffs[:, 1:].any()
        assert cloud.temporal_center[0] == 0.0
        assert not cloud.f_time.any()
        assert np.isclose(cloud.spatial_opacity()[0], 0.1, atol=1e-6)
        assert np.allclose(cloud.rotation_coeffs[0, 0], (1, 0, 0, 0))
        assert np.isclose(cloud.log_temporal_scale[0], 0.0)

    def test_two_timestamps_double_count(self, rng):
        xyz = rng.uniform(-1, 1, (10, 3))
        rgb = rng.uniform(0, 1, (10, 3))
        cloud = initialize_scene([(xyz, rgb, 0.0), (xyz, rgb, 1.0)])
        assert cloud.count == 20
        assert set(np.unique(cloud.temporal_center)) == {0.0, 1.0}

    def test_colors_seed_base_and_dir_features(self, rng):
        xyz = rng.uniform(-1, 1, (6, 3))
        rgb = rng.uniform(0.1, 0.9, (6, 3))
        cloud = initialize_scene([(xyz, rgb, 0.5)])
        assert np.allclose(cloud.f_base, rgb, atol=1e-6)
        assert np.allclose(cloud.f_dir, rgb, atol=1e-6)

    def test_scales_follow_neighbor_distance(self):
        # a row of points spaced 0.5 apart: mean 3-NN distance is known
        xyz = np.zeros((8, 3))
        xyz[:, 0] = np.arange(8) * 0.5
        cloud = initialize_scene([(xyz, np.full((8, 3), 0.5), 0.0)])
        # interior point: neighbors at 0.5, 0.5, 1.0 -> mean 2/3
        assert np.isclose(np.exp(cloud.log_scales[3, 0]), 2.0 / 3.0, rtol=1e-5)

    def test_empty_input_rejected(self):
        with pytest.raises(UsageError):
            initialize_scene([])


class TestSubsample:
    def test_quarter_of_hundred(self, rng):
        xyz = rng.uniform(-2, 2, (100, 3))
        idx = subsample_pointcloud(xyz, 0.25)
        assert len(idx) == 25
        from scipy.spatial import cKDTree

        d, _ = cKDTree(xyz).query(xyz, k=2)
        nn = d[:, 1]
        kept = np.zeros(100, dtype=bool)
        kept[idx] = True
        assert nn[kept].min() >= nn[~kept].max() - 1e-12

    def test_fraction_one_keeps_all(self, rng):
        xyz = rng.uniform(-1, 1, (7, 3))
        assert len(subsample_pointcloud(xyz, 1.0)) == 7


class TestDensifyAndPrune:
    def _product_of(self, rng, n=6):
        cloud = random_cloud(n, rng)
        cloud.opacity_logit[:] = inverse_sigmoid(0.5)
        return cloud

    def test_quiet_cloud_unchanged(self, rng):
        cloud = self._product_of(rng)
        cfg = TrainConfig()
        out, carried, n_new = densify_and_prune(cloud, np.zeros(cloud.count), cfg,
                                                np.random.default_rng(0))
        assert out.count == cloud.count and n_new == 0
        for name in GaussianCloud.PARAM_FIELDS:
            assert np.array_equal(getattr(out, name), getattr(cloud, name))

    def test_clone_small_high_gradient(self, rng):
        cloud = self._product_of(rng)
        cloud.log_scales[:] = np.log(0.01)  # below the clone/split threshold
        grads = np.zeros(cloud.count)
        grads[2] = 1.0
        cfg = TrainConfig()
        out, carried, n_new = densify_and_prune(cloud, grads, cfg, np.random.default_rng(0))
        assert out.count == cloud.count + 1 and n_new == 1
        # child (appended last) equals its parent in every parameter
        for name in GaussianCloud.PARAM_FIELDS:
            assert np.array_equal(getattr(out, name)[-1], getattr(cloud, name)[2])

    def test_split_large_high_gradient(self, rng):
        cloud = self._product_of(rng)
        cloud.log_scales[:] = np.log(0.3)  # above the threshold -> split
        grads = np.zeros(cloud.count)
        grads[1] = 1.0
        cfg = TrainConfig()
        out, carried, n_new = densify_and_prune(cloud, grads, cfg, np.random.default_rng(0))
        # parent removed, two children appended
        assert out.count == cloud.count + 1 and n_new == 2
        children = out.select(np.arange(out.count - 2, out.count))
        expected_scale = np.exp(cloud.log_scales[1]) / cfg.split_factor
        assert np.allclose(children.scales(), expected_scale[None, :], rtol=1e-5)
        # temporal and polynomial fields copied verbatim
        assert np.array_equal(children.temporal_center, np.repeat(cloud.temporal_center[1], 2))
        assert np.array_equal(children.motion_coeffs[:, 1:], np.repeat(
            cloud.motion_coeffs[1:2, 1:], 2, axis=0))

    def test_low_opacity_pruned(self, rng):
        cloud = self._product_of(rng)
        cloud.opacity_logit[3] = inverse_sigmoid(1e-4)
        cfg = TrainConfig()
        out, carried, n_new = densify_and_prune(cloud, np.zeros(cloud.count), cfg,
                                                np.random.default_rng(0))
        assert out.count == cloud.count - 1
        assert 3 not in carried

    def test_invariants_and_state_alignment_after_resize(self, rng):
        cloud = self._product_of(rng, n=10)
        cloud.opacity_logit[0] = inverse_sigmoid(1e-4)
        grads = rng.uniform(0, 3e-3, cloud.count)
        params = {name: getattr(cloud, name) for name in GaussianCloud.PARAM_FIELDS}
        state = AdamState.for_params(params)
        cfg = TrainConfig()
        out, carried, n_new = densify_and_prune(cloud, grads, cfg, np.random.default_rng(0))
        out.validate()
        from stgsplat.training import _remap_state

        _remap_state(state, carried, n_new)
        for name in GaussianCloud.PARAM_FIELDS:
            assert state.m[name].shape == getattr(out, name).shape

    def test_prune_only(self, rng):
        cloud = self._product_of(rng)
        cloud.opacity_logit[:2] = inverse_sigmoid(1e-3)
        out, carried, n_new = prune(cloud, 0.005)
        assert out.count == cloud.count - 2 and n_new == 0


class TestGuidedSample:
    def _view_setup(self, h=64, w=64):
        cam = make_camera(width=w, height=h, focal=60.0)
        err = np.zeros((h, w))
        depth = np.zeros((h, w))
        gt = np.full((h, w, 3), 0.5)
        return cam, err, depth, gt

    def test_zero_error_map_unchanged(self, rng):
        cloud = random_cloud(5, rng)
        cam, err, depth, gt = self._view_setup()
        depth[:] = 5.0
        cfg = TrainConfig()
        out, n_new = guided_sample(cloud, [cam], [err], [depth], [gt], 0.5, cfg,
                                   np.random.default_rng(0))
        assert n_new == 0 and out is cloud

    def test_hot_patch_samples_along_ray(self, rng):
        cloud = random_cloud(5, rng)
        cam, err, depth, gt = self._view_setup()
        err[0:32, 0:32] = 1.0  # one hot 32x32 patch
        depth[:] = 10.0  # max coarse depth d = 10
        cfg = TrainConfig(
            guided_patch_size=32,
            guided_samples_per_ray=8,
            guided_depth_min_factor=0.7,
            guided_jitter_scale=0.0,  # pre-jitter positions
        )
        out, n_new = guided_sample(cloud, [cam], [err], [depth], [gt], 0.25, cfg,
                                   np.random.default_rng(0))
        assert n_new == 8
        new = out.select(np.arange(cloud.count, out.count))
        # depths along the ray lie in [0.7 * d, 7.5 * d], uniformly spaced
        p_cam = new.motion_coeffs[:, 0, :] @ cam.rotation.T + cam.translation
        zs = np.sort(p_cam[:, 2])
        assert np.isclose(zs[0], 7.0, atol=1e-4) and np.isclose(zs[-1], 75.0, atol=1e-3)
        assert np.allclose(np.diff(zs), np.diff(zs)[0], rtol=1e-4)
        # new Gaussians carry the configured starting opacity and current time
        assert np.allclose(new.spatial_opacity(), 0.1, atol=1e-6)
        assert np.allclose(new.temporal_center, 0.25)
        assert not new.motion_coeffs[:, 1:].any()

    def test_low_opacity_candidates_prunable(self, rng):
        cloud = random_cloud(3, rng)
        cloud.opacity_logit[:] = inverse_sigmoid(0.6)
        cam, err, depth, gt = self._view_setup(32, 32)
        err[:] = rng.uniform(0, 1, err.shape)
        depth[:] = 4.0
        cfg = TrainConfig(guided_patch_size=16)
        out, n_new = guided_sample(cloud, [cam], [err], [depth], [gt], 0.0, cfg,
                                   np.random.default_rng(0))
        assert n_new > 0
        pruned, carried, _ = prune(out, 0.2)
        assert pruned.count == 3  # all sampled Gaussians removable when unused

    def test_never_decreases_count_and_stays_finite(self, rng):
        cloud = random_cloud(4, rng)
        cam, err, depth, gt = self._view_setup(32, 32)
        err[:] = 1.0
        depth[:] = 3.0
        cfg = TrainConfig(guided_patch_size=8)
        out, n_new = guided_sample(cloud, [cam], [err], [depth], [gt], 0.7, cfg,
                                   np.random.default_rng(0))
        assert out.count >= cloud.count
        for name in GaussianCloud.PARAM_FIELDS:
            assert np.all(np.isfinite(getattr(out, name)))


class TestTrainLoop:
    def test_zero_iterations_returns_init(self, tiny_dataset):
        cfg = TrainConfig(iterations=0, seed=0)
        cloud, mlp, log = train(tiny_dataset, cfg)
        ref = initialize_scene(tiny_dataset.init_pointclouds())
        assert cloud.count == ref.count
        for name in GaussianCloud.PARAM_FIELDS:
            assert np.array_equal(getattr(cloud, name), getattr(ref, name))
        assert log == []

    def test_short_training_improves_fixed_views(self, tiny_dataset):
        from stgsplat.metrics import evaluate_model

        cfg0 = TrainConfig(iterations=0, seed=0)
        cfg = TrainConfig(iterations=150, seed=0, log_interval=25,
                          densify_start=60, densify_interval=50)
        cloud0, mlp0, _ = train(tiny_dataset, cfg0)
        cloud, mlp, log = train(tiny_dataset, cfg)
        cams = tiny_dataset.train_cameras
        before = evaluate_model(cloud0, mlp0, tiny_dataset, camera_indices=cams)
        after = evaluate_model(cloud, mlp, tiny_dataset, camera_indices=cams)
        assert after.psnr > before.psnr + 1.0
        assert len(log) == 150 // 25
        cloud.validate()

    def test_deterministic_under_seed(self, tiny_dataset):
        cfg = TrainConfig(iterations=40, seed=11, log_interval=40)
        a = train(tiny_dataset, cfg)
        b = train(tiny_dataset, cfg)
        for name in GaussianCloud.PARAM_FIELDS:
            assert np.array_equal(getattr(a[0], name), getattr(b[0], name))
        assert np.array_equal(a[1].w1, b[1].w1)

    def test_freeze_temporal_switch(self, tiny_dataset):
        cfg = TrainConfig(iterations=30, seed=0, freeze_temporal=True, log_interval=30)
        cloud, _, _ = train(tiny_dataset, cfg)
        ref = initialize_scene(tiny_dataset.init_pointclouds())
        assert np.array_equal(cloud.temporal_center, ref.temporal_center)
        assert np.array_equal(cloud.log_temporal_scale, ref.log_temporal_scale)

    def test_config_validation(self):
        with pytest.raises(UsageError):
            TrainConfig(lambda_dssim=1.5).validate()
        with pytest.raises(UsageError):
            TrainConfig(guided_iterations=(1, 2, 3, 4)).validate()
        with pytest.raises(UsageError):
            TrainConfig().with_overrides({"not_a_field": 1})

    def test_loss_trend_over_windows(self, tiny_dataset):
        # windowed median loss should not increase over training (stochastic
        # per-iteration loss, fixed seed)
        cfg = TrainConfig(iterations=300, seed=2, log_interval=10,
                          densify_start=80, densify_interval=100)
        _, _, log = train(tiny_dataset, cfg)
        losses = np.array([r["loss"] for r in log])
        half = len(losses) // 2
        assert np.median(losses[half:]) <= np.median(losses[:half])
