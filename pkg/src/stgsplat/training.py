"""End-to-end optimization: initialization from timestamped points, the render/
loss/backprop loop, interleaved density control, and error-guided sampling of
new Gaussians along high-error rays.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, fields, replace

import numpy as np
from scipy.spatial import cKDTree

from .cloud import GaussianCloud, inverse_sigmoid, quat_to_rotmat
from .dataset import Dataset
from .errors import UsageError
from .losses import compute_loss
from .metrics import psnr
from .optim import AdamState, adam_step
from .rasterizer import ParamGradients, RenderOptions, render_backward, render_forward
from .shading import (
    ACTIVATION_CLAMP,
    ACTIVATION_SIGMOID,
    MlpHead,
    ray_directions_image,
    shade,
    shade_backward,
)

MAX_GUIDED_EVENTS = 3
INIT_OPACITY = 0.1
GUIDED_OPACITY = 0.1
FALLBACK_POINT_SCALE = 0.1


@dataclass
class TrainConfig:
    """Every schedule constant and threshold the optimization depends on."""

    iterations: int = 5000
    seed: int = 0

    # per-group learning rates; motion decays exponentially to lr * final_scale
    lr_motion: float = 1.6e-4
    lr_motion_final_scale: float = 0.01
    lr_rotation: float = 1e-3
    lr_scales: float = 5e-3
    lr_opacity: float = 5e-2
    lr_temporal: float = 1e-3
    lr_features: float = 2.5e-3
    lr_mlp: float = 1e-3

    lambda_dssim: float = 0.2

    densify_interval: int = 100
    densify_start: int = 500
    densify_stop: int = -1  # -1 resolves to 60% of iterations
    densify_grad_threshold: float = 2e-4
    clone_scale_threshold: float = 0.05
    split_factor: float = 1.6
    prune_opacity_threshold: float = 0.005
    prune_interval: int = 100

    guided_enabled: bool = True
    guided_iterations: tuple = (4000, 7000, 10000)
    guided_patch_size: int = 32
    guided_quantile: float = 0.9
    guided_samples_per_ray: int = 8
    guided_depth_min_factor: float = 0.7  # range is [min_factor * d, max_factor * d]
    guided_depth_max_factor: float = 7.5
    guided_jitter_scale: float = 0.1
    guided_pixel_radius: float = 2.0  # on-screen radius (px) of freshly sampled Gaussians

    activation_mode: str = ACTIVATION_CLAMP
    hidden_width: int = 32
    lite: bool = False
    freeze_temporal: bool = False  # ablation switch: no updates to temporal center/scale
    init_keep_fraction: float = 1.0
    log_interval: int = 50

    def validate(self) -> None:
        if not 0.0 <= self.lambda_dssim <= 1.0:
            raise UsageError("lambda_dssim must be in [0, 1]")
        for name in (
            "densify_grad_threshold", "clone_scale_threshold", "split_factor",
            "prune_opacity_threshold", "guided_depth_min_factor", "guided_depth_max_factor",
        ):
            if getattr(self, name) <= 0:
                raise UsageError(f"{name} must be positive")
        if len(self.guided_iterations) > MAX_GUIDED_EVENTS:
            raise UsageError(f"at most {MAX_GUIDED_EVENTS} guided-sampling events are allowed")
        if self.activation_mode not in (ACTIVATION_CLAMP, ACTIVATION_SIGMOID):
            raise UsageError(f"unknown activation_mode {self.activation_mode!r}")
        if self.iterations < 0:
            raise UsageError("iterations must be >= 0")

    def resolved_densify_stop(self) -> int:
        return self.densify_stop if self.densify_stop >= 0 else int(0.6 * self.iterations)

    def with_overrides(self, overrides: dict) -> "TrainConfig":
        known = {f.name for f in fields(self)}
        bad = set(overrides) - known
        if bad:
            raise UsageError(f"unknown config keys: {sorted(bad)}")
        return replace(self, **overrides)


def inverse_color_activation(rgb: np.ndarray, mode: str) -> np.ndarray:
    """Map target colors back through the final activation for feature init."""
    if mode == ACTIVATION_CLAMP:
        return np.asarray(rgb, dtype=np.float32)
    return inverse_sigmoid(np.asarray(rgb, dtype=np.float64)).astype(np.float32)


def subsample_pointcloud(xyz: np.ndarray, fraction: float) -> np.ndarray:
    """Indices of the `fraction` of points with the largest nearest-neighbor
    distance (redundancy reduction)."""
    n = len(xyz)
    keep = max(1, int(round(fraction * n)))
    if keep >= n:
        return np.arange(n)
    d, _ = cKDTree(xyz).query(xyz, k=2)
    nn = d[:, 1]
    order = np.argsort(-nn, kind="stable")
    return np.sort(order[:keep])


def _mean_knn_distance(xyz: np.ndarray, k: int = 3) -> np.ndarray:
    n = len(xyz)
    if n <= 1:
        return np.full(n, FALLBACK_POINT_SCALE)
    kk = min(k, n - 1)
    d, _ = cKDTree(xyz).query(xyz, k=kk + 1)
    return d[:, 1:].mean(axis=1)


def initialize_scene(
    point_clouds,
    n_p: int = 3,
    n_q: int = 1,
    keep_fraction: float = 1.0,
    activation_mode: str = ACTIVATION_CLAMP,
) -> GaussianCloud:
    """One Gaussian per (optionally subsampled) point.

    point_clouds is a list of (xyz, rgb, time) per timestamp. Positions seed the
    constant motion coefficient, temporal centers take the point's timestamp,
    scales come from the mean distance to the 3 nearest neighbors within the
    same timestamp, and colors seed the base/view features (time features start
    at zero). The first timestamp is always kept in full.
    """
    if not point_clouds:
        raise UsageError("initialize_scene needs at least one point cloud")
    parts = []
    for fi, (xyz, rgb, t) in enumerate(point_clouds):
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        rgb = np.asarray(rgb, dtype=np.float64).reshape(-1, 3)
        if len(xyz) == 0:
            continue
        if keep_fraction < 1.0 and fi > 0:
            idx = subsample_pointcloud(xyz, keep_fraction)
            xyz, rgb = xyz[idx], rgb[idx]
        n = len(xyz)
        cloud = GaussianCloud.zeros(n, n_p=n_p, n_q=n_q)
        cloud.motion_coeffs[:, 0, :] = xyz
        cloud.temporal_center[:] = float(t)
        cloud.opacity_logit[:] = inverse_sigmoid(INIT_OPACITY)
        scale = np.clip(_mean_knn_distance(xyz), 1e-6, None)
        cloud.log_scales[:] = np.log(scale)[:, None]
        color_feat = inverse_color_activation(rgb, activation_mode)
        cloud.f_base[:] = color_feat
        cloud.f_dir[:] = color_feat
        parts.append(cloud)
    if not parts:
        raise UsageError("all point clouds were empty")
    return GaussianCloud.concatenate(parts)


@dataclass
class GradAccumulator:
    """2D-center gradient statistics between density-control events."""

    norm_sum: np.ndarray
    hits: np.ndarray

    @classmethod
    def zeros(cls, count: int) -> "GradAccumulator":
        return cls(np.zeros(count, dtype=np.float64), np.zeros(count, dtype=np.int64))

    def add(self, grads: ParamGradients) -> None:
        self.norm_sum += grads.center2d_grad_norm
        self.hits += grads.hit_count

    def average(self) -> np.ndarray:
        return self.norm_sum / np.maximum(self.hits, 1)


def densify_and_prune(cloud: GaussianCloud, avg_grad: np.ndarray, config: TrainConfig,
                      rng: np.random.Generator):
    """Clone/split Gaussians with large screen-space gradients, drop low-opacity ones.

    Returns (new_cloud, carried_indices, n_appended): rows [0, len(carried)) of
    the new cloud are old rows that keep their optimizer state; the appended
    rows start fresh.
    """
    sigma = cloud.spatial_opacity()
    alive = sigma >= config.prune_opacity_threshold
    dense = avg_grad > config.densify_grad_threshold
    max_scale = cloud.scales().max(axis=1)
    split_sel = dense & (max_scale >= config.clone_scale_threshold) & alive
    clone_sel = dense & (max_scale < config.clone_scale_threshold) & alive
    keep = alive & ~split_sel

    parts = [cloud.select(keep)]
    n_appended = 0
    if np.any(clone_sel):
        clones = cloud.select(clone_sel).copy()
        parts.append(clones)
        n_appended += clones.count
    if np.any(split_sel):
        parents = cloud.select(split_sel)
        children = []
        for _ in range(2):
            child = parents.copy()
            local = rng.normal(size=(parents.count, 3)) * parents.scales()
            R = quat_to_rotmat(
                parents.rotation_coeffs[:, 0, :]
                / np.linalg.norm(parents.rotation_coeffs[:, 0, :], axis=1, keepdims=True)
            )
            offset = np.einsum("nij,nj->ni", R, local)
            child.motion_coeffs[:, 0, :] += offset.astype(child.motion_coeffs.dtype)
            child.log_scales -= np.float32(np.log(config.split_factor))
            children.append(child)
        parts.extend(children)
        n_appended += 2 * parents.count
    new_cloud = GaussianCloud.concatenate(parts)
    return new_cloud, np.nonzero(keep)[0], n_appended


def prune(cloud: GaussianCloud, threshold: float):
    """Drop Gaussians whose spatial opacity fell below threshold."""
    keep = cloud.spatial_opacity() >= threshold
    return cloud.select(keep), np.nonzero(keep)[0], 0


def _patch_grid(err: np.ndarray, patch: int):
    h, w = err.shape
    cells = []
    for y0 in range(0, h, patch):
        for x0 in range(0, w, patch):
            block = err[y0 : y0 + patch, x0 : x0 + patch]
            cells.append((float(block.mean()), y0, x0, block.shape[0], block.shape[1]))
    return cells


def guided_sample(
    cloud: GaussianCloud,
    cameras,
    error_maps,
    depth_maps,
    gt_images,
    t: float,
    config: TrainConfig,
    rng: np.random.Generator,
):
    """Spawn Gaussians along rays through the centers of high-error patches.

    For each view the error map is cut into patch_size x patch_size cells;
    cells whose mean error exceeds the per-view quantile get a ray through
    their center pixel, sampled uniformly in depth between min_factor * d and
    max_factor * d where d is the view's maximum coarse depth. Returns
    (new_cloud, n_appended).
    """
    new_parts = []
    for cam, err, depth_map, gt in zip(cameras, error_maps, depth_maps, gt_images):
        d = float(depth_map.max())
        if d <= 1e-6:
            continue
        cells = _patch_grid(np.asarray(err, dtype=np.float64), config.guided_patch_size)
        means = np.array([c[0] for c in cells])
        threshold = np.quantile(means, config.guided_quantile)
        z_lo = config.guided_depth_min_factor * d
        z_hi = config.guided_depth_max_factor * d
        n_samples = config.guided_samples_per_ray
        zs = np.linspace(z_lo, z_hi, n_samples)
        spacing = (z_hi - z_lo) / max(n_samples - 1, 1)
        R_t = cam.rotation.T
        origin = cam.center
        for mean, y0, x0, bh, bw in cells:
            if not mean > threshold:
                continue
            u = x0 + bw / 2.0
            v = y0 + bh / 2.0
            dir_cam = np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])
            pts_cam = dir_cam[None, :] * zs[:, None]
            pts = pts_cam @ cam.rotation + origin  # R^T p + C
            pts = pts + rng.normal(size=pts.shape) * (config.guided_jitter_scale * spacing)
            color = gt[min(int(v), cam.height - 1), min(int(u), cam.width - 1)]
            part = GaussianCloud.zeros(n_samples, n_p=cloud.n_p, n_q=cloud.n_q)
            part.motion_coeffs[:, 0, :] = pts
            part.temporal_center[:] = t
            part.opacity_logit[:] = inverse_sigmoid(GUIDED_OPACITY)
            part.log_scales[:] = np.log(
                np.maximum(zs * config.guided_pixel_radius / cam.fx, 1e-4)
            )[:, None]
            feat = inverse_color_activation(color, config.activation_mode)
            part.f_base[:] = feat
            part.f_dir[:] = feat
            new_parts.append(part)
    if not new_parts:
        return cloud, 0
    appended = GaussianCloud.concatenate(new_parts)
    return GaussianCloud.concatenate([cloud, appended]), appended.count


# --- the optimization loop --------------------------------------------------


def _cloud_params(cloud: GaussianCloud) -> dict:
    return {name: getattr(cloud, name) for name in GaussianCloud.PARAM_FIELDS}


def _mlp_params(mlp: MlpHead) -> dict:
    return {"mlp.w1": mlp.w1, "mlp.b1": mlp.b1, "mlp.w2": mlp.w2, "mlp.b2": mlp.b2}


def _learning_rates(config: TrainConfig, iteration: int) -> dict:
    frac = iteration / max(config.iterations, 1)
    lr_motion = config.lr_motion * config.lr_motion_final_scale**frac
    return {
        "motion_coeffs": lr_motion,
        "rotation_coeffs": config.lr_rotation,
        "log_scales": config.lr_scales,
        "opacity_logit": config.lr_opacity,
        "temporal_center": config.lr_temporal,
        "log_temporal_scale": config.lr_temporal,
        "f_base": config.lr_features,
        "f_dir": config.lr_features,
        "f_time": config.lr_features,
        "mlp.w1": config.lr_mlp,
        "mlp.b1": config.lr_mlp,
        "mlp.w2": config.lr_mlp,
        "mlp.b2": config.lr_mlp,
    }


def _remap_state(state: AdamState, carried: np.ndarray, n_appended: int) -> None:
    """Carry optimizer moments through a cloud resize; appended rows start at zero."""
    for name in GaussianCloud.PARAM_FIELDS:
        for store in (state.m, state.v):
            old = store[name]
            tail = np.zeros((n_appended,) + old.shape[1:], dtype=old.dtype)
            store[name] = np.concatenate([old[carried], tail], axis=0)


def train(dataset: Dataset, config: TrainConfig, log_path=None):
    """Optimize a cloud (and shading MLP unless lite) against a dataset.

    Returns (cloud, mlp, log) where log is a list of per-interval records.
    """
    config.validate()
    if len(dataset.train_cameras) < 1:
        raise UsageError("dataset has no training cameras")
    rng = np.random.default_rng(config.seed)
    cloud = initialize_scene(
        dataset.init_pointclouds(),
        keep_fraction=config.init_keep_fraction,
        activation_mode=config.activation_mode,
    )
    mlp = None if config.lite else MlpHead.create(
        config.hidden_width, config.activation_mode, rng
    )
    # 8px tiles fit the small splats of desk-scale scenes much tighter than the
    # default 16px rendering tiles; output is identical either way
    options = RenderOptions(tile_size=8)
    params = _cloud_params(cloud)
    if mlp is not None:
        params.update(_mlp_params(mlp))
    state = AdamState.for_params(params)
    accum = GradAccumulator.zeros(cloud.count)
    rays_cache = {
        ci: ray_directions_image(dataset.cameras[ci], dtype=np.float32)
        for ci in dataset.train_cameras
    }

    densify_stop = config.resolved_densify_stop()
    guided_at = set(i for i in config.guided_iterations if i <= config.iterations)
    log: list[dict] = []
    log_file = open(log_path, "w") if log_path else None
    t_start = time.perf_counter()
    train_cams = dataset.train_cameras

    try:
        for it in range(1, config.iterations + 1):
            cam_idx = train_cams[int(rng.integers(len(train_cams)))]
            frame = int(rng.integers(dataset.frame_count))
            t_frame = dataset.frame_time(frame)
            cam = dataset.cameras[cam_idx]
            gt = dataset.image(cam_idx, frame)

            image, rinter = render_forward(cloud, cam, t_frame, options)
            rgb, sinter = shade(image, cam, mlp, rays=rays_cache[cam_idx])
            loss, grad_rgb = compute_loss(rgb, gt, config.lambda_dssim)
            grad_feat, mlp_grads = shade_backward(sinter, grad_rgb)
            pgrads = render_backward(rinter, grad_feat)
            if config.freeze_temporal:
                pgrads.temporal_center[:] = 0.0
                pgrads.log_temporal_scale[:] = 0.0

            grads = {name: getattr(pgrads, name) for name in GaussianCloud.PARAM_FIELDS}
            params = _cloud_params(cloud)
            if mlp is not None:
                params.update(_mlp_params(mlp))
                grads.update(
                    {
                        "mlp.w1": mlp_grads.w1,
                        "mlp.b1": mlp_grads.b1,
                        "mlp.w2": mlp_grads.w2,
                        "mlp.b2": mlp_grads.b2,
                    }
                )
            adam_step(params, grads, state, _learning_rates(config, it))
            accum.add(pgrads)

            resized = False
            if (
                config.densify_start <= it <= densify_stop
                and config.densify_interval > 0
                and it % config.densify_interval == 0
            ):
                cloud, carried, n_new = densify_and_prune(cloud, accum.average(), config, rng)
                _remap_state(state, carried, n_new)
                resized = True
            elif (
                it > densify_stop
                and config.prune_interval > 0
                and it % config.prune_interval == 0
            ):
                cloud, carried, n_new = prune(cloud, config.prune_opacity_threshold)
                _remap_state(state, carried, n_new)
                resized = True

            if config.guided_enabled and it in guided_at:
                cloud, n_new = _guided_event(cloud, mlp, dataset, t_frame, config, rng, options)
                if n_new:
                    _remap_state(state, np.arange(cloud.count - n_new), n_new)
                    resized = True

            if resized:
                accum = GradAccumulator.zeros(cloud.count)

            if it % config.log_interval == 0 or it == config.iterations:
                record = {
                    "iteration": it,
                    "loss": float(loss),
                    "psnr": psnr(rgb, gt),
                    "count": cloud.count,
                    "wall_time": time.perf_counter() - t_start,
                }
                log.append(record)
                if log_file:
                    log_file.write(json.dumps(record) + "\n")
                    log_file.flush()
    finally:
        if log_file:
            log_file.close()
    return cloud, mlp, log


def _guided_event(cloud, mlp, dataset, t_frame, config, rng, options):
    """Render every training view at the current time and call guided_sample."""
    frame = int(round(t_frame * max(dataset.frame_count - 1, 1)))
    cams, errs, depths, gts = [], [], [], []
    for ci in dataset.train_cameras:
        cam = dataset.cameras[ci]
        gt = dataset.image(ci, frame)
        image, _ = render_forward(cloud, cam, t_frame, options)
        rgb, _ = shade(image, cam, mlp)
        cams.append(cam)
        errs.append(np.abs(rgb.astype(np.float64) - gt).mean(axis=2))
        depths.append(image.depth.astype(np.float64))
        gts.append(gt)
    return guided_sample(cloud, cams, errs, depths, gts, t_frame, config, rng)
