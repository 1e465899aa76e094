"""Differentiable tile-based splatting of 9-channel Gaussian features.

render_forward bins splats into 16x16 pixel tiles and composites front-to-back
per pixel (numba kernels). render_reference is the brute-force oracle: every
surviving splat is evaluated at every pixel with a single global depth sort and
no tiling or bounding-box culling; both implement the same mathematical
contract, so they must agree.

render_backward returns analytic gradients for every cloud parameter, chained
pixel -> 2D splat -> camera-space Gaussian -> trajectory/rotation/opacity
polynomials. Gradients are not propagated through the auxiliary alpha and
depth maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .camera import (
    BBOX_SIGMA,
    LOWPASS_FLOOR,
    NEAR_PLANE,
    TEMPORAL_CULL_THRESHOLD,
    Camera,
)
from .cloud import QUAT_NORM_EPS, GaussianCloud, quat_to_rotmat, sigmoid
from .errors import DegenerateRotationError, NumericalError, UsageError

ALPHA_CLAMP = 0.99
ALPHA_SKIP = 1.0 / 255.0
TRANSMITTANCE_STOP = 1e-4
TILE_SIZE = 16


@dataclass
class RenderOptions:
    tile_size: int = TILE_SIZE
    alpha_clamp: float = ALPHA_CLAMP
    alpha_skip: float = ALPHA_SKIP
    transmittance_stop: float = TRANSMITTANCE_STOP
    lowpass: float = LOWPASS_FLOOR
    near_plane: float = NEAR_PLANE
    temporal_cull: float = TEMPORAL_CULL_THRESHOLD
    bbox_sigma: float = BBOX_SIGMA
    dtype: type = np.float32


@dataclass
class FeatureImage:
    """Splatted feature buffer plus accumulated alpha and expected depth maps."""

    features: np.ndarray  # (H, W, 9)
    alpha: np.ndarray  # (H, W), in [0, 1]
    depth: np.ndarray  # (H, W), alpha-weighted camera-space z

    @classmethod
    def zeros(cls, height: int, width: int, dtype=np.float32) -> "FeatureImage":
        return cls(
            features=np.zeros((height, width, 9), dtype=dtype),
            alpha=np.zeros((height, width), dtype=dtype),
            depth=np.zeros((height, width), dtype=dtype),
        )

    @property
    def f_base(self) -> np.ndarray:
        return self.features[:, :, 0:3]

    @property
    def f_dir(self) -> np.ndarray:
        return self.features[:, :, 3:6]

    @property
    def f_time(self) -> np.ndarray:
        return self.features[:, :, 6:9]


@dataclass
class ParamGradients:
    """Gradient arrays mirroring GaussianCloud, plus density-control statistics."""

    motion_coeffs: np.ndarray
    rotation_coeffs: np.ndarray
    log_scales: np.ndarray
    opacity_logit: np.ndarray
    temporal_center: np.ndarray
    log_temporal_scale: np.ndarray
    f_base: np.ndarray
    f_dir: np.ndarray
    f_time: np.ndarray
    center2d_grad_norm: np.ndarray  # (N,) norm of d/d(mu2d) in half-extent units
    hit_count: np.ndarray  # (N,) 1 where the Gaussian survived culling this render

    @classmethod
    def zeros(cls, cloud: GaussianCloud, dtype=np.float32) -> "ParamGradients":
        arrays = {
            name: np.zeros_like(getattr(cloud, name), dtype=dtype)
            for name in GaussianCloud.PARAM_FIELDS
        }
        return cls(
            **arrays,
            center2d_grad_norm=np.zeros(cloud.count, dtype=dtype),
            hit_count=np.zeros(cloud.count, dtype=np.int64),
        )


@dataclass
class RenderIntermediate:
    """Opaque forward-pass record consumed by render_backward."""

    cloud: GaussianCloud
    camera: Camera
    t: float
    options: RenderOptions
    count: int
    gidx: np.ndarray  # (M,) surviving Gaussian indices
    mu_cam: np.ndarray  # (M, 3) float64
    mu2d: np.ndarray  # (M, 2) float64
    cov3d_v: np.ndarray  # (M, 3, 3) float64, V = R * diag(scales)
    rotmats: np.ndarray  # (M, 3, 3) float64
    quats_raw: np.ndarray  # (M, 4) float64
    conic: np.ndarray  # (M, 3) float64 (a, b, c)
    sigma_t: np.ndarray  # (M,) float64
    feats: np.ndarray  # (M, 9) float64
    ids: np.ndarray  # (P,) sorted per-tile splat lists
    tile_offsets: np.ndarray  # (T+1,)
    n_processed: np.ndarray  # (H, W) int32
    final_T: np.ndarray  # (H, W) float64
    splat_dtype_arrays: tuple  # dtype-cast arrays handed to the kernels


def _skip_power(sigma_t: np.ndarray, options: RenderOptions) -> np.ndarray:
    """Per-splat exponent threshold equivalent to the alpha < alpha_skip test."""
    return np.log(options.alpha_skip / np.asarray(sigma_t, dtype=np.float64))


def _invert_cov2d(cov2d: np.ndarray) -> np.ndarray:
    """Invert symmetric PD 2x2 covariances given as (..., 3) = (A, B, C) triples."""
    A, B, C = cov2d[..., 0], cov2d[..., 1], cov2d[..., 2]
    det = A * C - B * B
    if np.any(det <= 0):
        raise NumericalError("projected covariance is not positive definite")
    inv_det = 1.0 / det
    return np.stack([C * inv_det, -B * inv_det, A * inv_det], axis=-1)


def _prepare_splats(cloud: GaussianCloud, camera: Camera, t: float, options: RenderOptions,
                    bbox_cull: bool):
    """Evaluate, cull and project all Gaussians at time t (float64 math).

    Returns None when no splat survives, else a dict of per-splat arrays.
    """
    n = cloud.count
    if n == 0:
        return None
    for name in GaussianCloud.PARAM_FIELDS:
        arr = getattr(cloud, name)
        if not np.all(np.isfinite(arr)):
            bad = int(np.argwhere(~np.isfinite(arr.reshape(n, -1)).all(axis=1))[0][0])
            raise NumericalError(f"non-finite parameter in {name} at Gaussian {bad}")

    c64 = cloud if cloud.motion_coeffs.dtype == np.float64 else cloud.astype(np.float64)
    pos_w = c64.positions_at(t)
    sigma_t = c64.temporal_opacity_at(t)
    mu_cam = pos_w @ camera.rotation.T + camera.translation
    depth = mu_cam[:, 2]

    keep = (depth > options.near_plane) & (sigma_t >= options.temporal_cull)
    if not np.any(keep):
        return None
    gidx = np.nonzero(keep)[0]

    quats_raw = c64.quaternions_raw_at(t)[gidx]
    norms = np.linalg.norm(quats_raw, axis=1)
    if np.any(norms < QUAT_NORM_EPS):
        bad = int(gidx[np.argmin(norms)])
        raise DegenerateRotationError(
            f"quaternion norm below {QUAT_NORM_EPS} for Gaussian {bad} at t={t}"
        )
    quats = quats_raw / norms[:, None]
    rotmats = quat_to_rotmat(quats)
    scales = np.exp(c64.log_scales[gidx])
    V = rotmats * scales[:, None, :]  # R @ diag(s)
    cov3d = V @ np.transpose(V, (0, 2, 1))

    mu_cam = mu_cam[gidx]
    x, y, z = mu_cam[:, 0], mu_cam[:, 1], mu_cam[:, 2]
    mu2d = np.stack([camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy], axis=1)

    J = np.zeros((len(gidx), 2, 3))
    J[:, 0, 0] = camera.fx / z
    J[:, 0, 2] = -camera.fx * x / (z * z)
    J[:, 1, 1] = camera.fy / z
    J[:, 1, 2] = -camera.fy * y / (z * z)
    M = J @ camera.rotation
    cov2d_full = M @ cov3d @ np.transpose(M, (0, 2, 1))
    cov2d = np.stack(
        [cov2d_full[:, 0, 0] + options.lowpass,
         cov2d_full[:, 0, 1],
         cov2d_full[:, 1, 1] + options.lowpass],
        axis=1,
    )

    mid = 0.5 * (cov2d[:, 0] + cov2d[:, 2])
    det = cov2d[:, 0] * cov2d[:, 2] - cov2d[:, 1] ** 2
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = options.bbox_sigma * np.sqrt(lam_max)

    if bbox_cull:
        inside = (
            (mu2d[:, 0] + radius >= 0)
            & (mu2d[:, 0] - radius <= camera.width)
            & (mu2d[:, 1] + radius >= 0)
            & (mu2d[:, 1] - radius <= camera.height)
        )
        if not np.any(inside):
            return None
        gidx = gidx[inside]
        mu_cam, mu2d, cov2d, radius = mu_cam[inside], mu2d[inside], cov2d[inside], radius[inside]
        quats_raw, rotmats, V = quats_raw[inside], rotmats[inside], V[inside]
        sigma_t_kept = sigma_t[gidx]
    else:
        sigma_t_kept = sigma_t[gidx]

    feats = c64.features_at(t)[gidx]
    return {
        "gidx": gidx,
        "mu_cam": mu_cam,
        "mu2d": mu2d,
        "cov2d": cov2d,
        "conic": _invert_cov2d(cov2d),
        "radius": radius,
        "depth": mu_cam[:, 2],
        "sigma_t": sigma_t_kept,
        "feats": feats,
        "quats_raw": quats_raw,
        "rotmats": rotmats,
        "cov3d_v": V,
    }


def _build_tile_lists(prep, camera: Camera, tile_size: int):
    """Assign splats to every tile their bounding box overlaps; sort each tile's
    list by (depth, Gaussian index)."""
    tiles_x = (camera.width + tile_size - 1) // tile_size
    tiles_y = (camera.height + tile_size - 1) // tile_size
    mu2d, radius = prep["mu2d"], prep["radius"]

    tx0 = np.clip(np.floor((mu2d[:, 0] - radius) / tile_size).astype(np.int64), 0, tiles_x - 1)
    tx1 = np.clip(np.floor((mu2d[:, 0] + radius) / tile_size).astype(np.int64), 0, tiles_x - 1)
    ty0 = np.clip(np.floor((mu2d[:, 1] - radius) / tile_size).astype(np.int64), 0, tiles_y - 1)
    ty1 = np.clip(np.floor((mu2d[:, 1] + radius) / tile_size).astype(np.int64), 0, tiles_y - 1)

    nx = tx1 - tx0 + 1
    ny = ty1 - ty0 + 1
    counts = nx * ny
    total = int(counts.sum())
    splat = np.repeat(np.arange(len(mu2d), dtype=np.int64), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    rank = np.arange(total, dtype=np.int64) - np.repeat(starts, counts)
    nx_r = np.repeat(nx, counts)
    tile = (np.repeat(ty0, counts) + rank // nx_r) * tiles_x + np.repeat(tx0, counts) + rank % nx_r

    order = np.lexsort((splat, prep["depth"][splat], tile))
    tile_sorted = tile[order]
    ids = splat[order]
    tile_offsets = np.searchsorted(tile_sorted, np.arange(tiles_x * tiles_y + 1))
    return ids, tile_offsets.astype(np.int64), tiles_x


def render_forward(cloud: GaussianCloud, camera: Camera, t: float,
                   options: RenderOptions | None = None):
    """Tile-based forward splatting; returns (FeatureImage, RenderIntermediate)."""
    options = options or RenderOptions()
    H, W = camera.height, camera.width
    image = FeatureImage.zeros(H, W, dtype=options.dtype)
    prep = _prepare_splats(cloud, camera, t, options, bbox_cull=True)
    n_processed = np.zeros((H, W), dtype=np.int32)
    final_T = np.ones((H, W), dtype=np.float64)
    if prep is None:
        inter = RenderIntermediate(
            cloud=cloud, camera=camera, t=t, options=options, count=cloud.count,
            gidx=np.zeros(0, dtype=np.int64), mu_cam=np.zeros((0, 3)),
            mu2d=np.zeros((0, 2)), cov3d_v=np.zeros((0, 3, 3)),
            rotmats=np.zeros((0, 3, 3)), quats_raw=np.zeros((0, 4)),
            conic=np.zeros((0, 3)), sigma_t=np.zeros(0), feats=np.zeros((0, 9)),
            ids=np.zeros(0, dtype=np.int64), tile_offsets=np.zeros(1, dtype=np.int64),
            n_processed=n_processed, final_T=final_T, splat_dtype_arrays=(),
        )
        return image, inter

    ids, tile_offsets, tiles_x = _build_tile_lists(prep, camera, options.tile_size)
    dt = options.dtype
    mu2d = prep["mu2d"].astype(dt)
    conic = prep["conic"].astype(dt)
    sigma_t = prep["sigma_t"].astype(dt)
    feats = prep["feats"].astype(dt)
    depth = prep["depth"].astype(dt)
    skip_power = _skip_power(sigma_t, options)

    out_feat = np.zeros((H, W, 9), dtype=np.float64)
    out_alpha = np.zeros((H, W), dtype=np.float64)
    out_depth = np.zeros((H, W), dtype=np.float64)
    _kernels.forward_tiles(
        ids, tile_offsets, tiles_x, options.tile_size, H, W,
        mu2d, conic, sigma_t, skip_power, feats, depth,
        options.alpha_clamp, options.transmittance_stop,
        out_feat, out_alpha, out_depth, n_processed, final_T,
    )
    image.features = out_feat.astype(dt)
    image.alpha = out_alpha.astype(dt)
    image.depth = out_depth.astype(dt)

    inter = RenderIntermediate(
        cloud=cloud, camera=camera, t=t, options=options, count=cloud.count,
        gidx=prep["gidx"], mu_cam=prep["mu_cam"], mu2d=prep["mu2d"],
        cov3d_v=prep["cov3d_v"], rotmats=prep["rotmats"], quats_raw=prep["quats_raw"],
        conic=prep["conic"], sigma_t=prep["sigma_t"], feats=prep["feats"],
        ids=ids, tile_offsets=tile_offsets, n_processed=n_processed, final_T=final_T,
        splat_dtype_arrays=(mu2d, conic, sigma_t, skip_power, feats, depth),
    )
    return image, inter


def render_reference(cloud: GaussianCloud, camera: Camera, t: float,
                     options: RenderOptions | None = None) -> FeatureImage:
    """Brute-force oracle renderer: all splats at all pixels, one global sort."""
    options = options or RenderOptions()
    H, W = camera.height, camera.width
    image = FeatureImage.zeros(H, W, dtype=options.dtype)
    prep = _prepare_splats(cloud, camera, t, options, bbox_cull=False)
    if prep is None:
        return image

    order = np.lexsort((prep["gidx"], prep["depth"]))  # depth, then index
    dt = options.dtype
    mu2d = prep["mu2d"].astype(dt)[order].astype(np.float64)
    conic = prep["conic"].astype(dt)[order].astype(np.float64)
    sigma_t = prep["sigma_t"].astype(dt)[order].astype(np.float64)
    feats = prep["feats"].astype(dt)[order].astype(np.float64)
    depth = prep["depth"].astype(dt)[order].astype(np.float64)
    skip_power = _skip_power(prep["sigma_t"].astype(dt), options)[order]

    ys, xs = np.mgrid[0:H, 0:W]
    px = xs.reshape(-1, 1) + 0.5
    py = ys.reshape(-1, 1) + 0.5
    dx = px - mu2d[:, 0][None, :]
    dy = py - mu2d[:, 1][None, :]
    power = (
        -0.5 * (conic[:, 0][None, :] * dx * dx + conic[:, 2][None, :] * dy * dy)
        - conic[:, 1][None, :] * dx * dy
    )
    alpha = np.minimum(
        sigma_t[None, :] * _kernels.exp_elementwise(np.minimum(power, 0.0)),
        options.alpha_clamp,
    )
    alpha[power > 0.0] = 0.0
    alpha[power < skip_power[None, :]] = 0.0

    one_minus = 1.0 - alpha
    T_incl = np.cumprod(one_minus, axis=1)
    T_excl = np.empty_like(T_incl)
    T_excl[:, 0] = 1.0
    T_excl[:, 1:] = T_incl[:, :-1]
    w = alpha * T_excl
    w[T_excl < options.transmittance_stop] = 0.0

    image.features = (w @ feats).reshape(H, W, 9).astype(dt)
    image.alpha = w.sum(axis=1).reshape(H, W).astype(dt)
    image.depth = (w @ depth).reshape(H, W).astype(dt)
    return image


def composite_pixel(centers2d, cov2ds, sigma_ts, features, depths, pixel,
                    options: RenderOptions | None = None):
    """Composite one pixel over splats pre-sorted by (depth, index).

    Runs the same kernel the tiled renderer uses. `pixel` is a continuous
    image-space point; returns (9-vector, alpha, depth).
    """
    options = options or RenderOptions()
    centers2d = np.asarray(centers2d, dtype=np.float64).reshape(-1, 2)
    m = len(centers2d)
    if m == 0:
        return np.zeros(9), 0.0, 0.0
    cov = np.asarray(cov2ds, dtype=np.float64).reshape(-1, 2, 2)
    cov_tri = np.stack([cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]], axis=1)
    conic = _invert_cov2d(cov_tri)
    sigma_arr = np.asarray(sigma_ts, dtype=np.float64).reshape(m)
    scratch = np.zeros(9, dtype=np.float64)
    alpha, depth, _, _ = _kernels._composite_one_pixel(
        np.arange(m, dtype=np.int64), 0, m,
        centers2d, conic, sigma_arr, _skip_power(sigma_arr, options),
        np.asarray(features, dtype=np.float64).reshape(m, 9),
        np.asarray(depths, dtype=np.float64).reshape(m),
        float(pixel[0]), float(pixel[1]),
        options.alpha_clamp, options.transmittance_stop,
        scratch,
    )
    return scratch, alpha, depth


# --- backward -------------------------------------------------------------

# d(rotation matrix)/d(unit quaternion component), laid out as (4, 3, 3) with
# the quaternion as symbols; filled per-splat in _quat_grad.
def _quat_grad(dR: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Contract dL/dR (M,3,3) with dR/dq at unit quaternions q (M,4) -> (M,4)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    zero = np.zeros_like(w)
    dRdw = 2 * np.stack([
        np.stack([zero, -z, y], axis=1),
        np.stack([z, zero, -x], axis=1),
        np.stack([-y, x, zero], axis=1),
    ], axis=1)
    dRdx = 2 * np.stack([
        np.stack([zero, y, z], axis=1),
        np.stack([y, -2 * x, -w], axis=1),
        np.stack([z, w, -2 * x], axis=1),
    ], axis=1)
    dRdy = 2 * np.stack([
        np.stack([-2 * y, x, w], axis=1),
        np.stack([x, zero, z], axis=1),
        np.stack([-w, z, -2 * y], axis=1),
    ], axis=1)
    dRdz = 2 * np.stack([
        np.stack([-2 * z, -w, x], axis=1),
        np.stack([w, -2 * z, y], axis=1),
        np.stack([x, y, zero], axis=1),
    ], axis=1)
    return np.stack(
        [np.einsum("mij,mij->m", dR, d) for d in (dRdw, dRdx, dRdy, dRdz)], axis=1
    )


def render_backward(intermediate: RenderIntermediate, grad_features: np.ndarray) -> ParamGradients:
    """Analytic gradients of a scalar loss w.r.t. every cloud parameter.

    grad_features is dL/d(feature image), shape (H, W, 9).
    """
    inter = intermediate
    cloud = inter.cloud
    if cloud.count != inter.count:
        raise UsageError("cloud was resized between render_forward and render_backward")
    if grad_features.shape != (inter.camera.height, inter.camera.width, 9):
        raise UsageError(
            f"grad_features shape {grad_features.shape} does not match render resolution"
        )
    grads = ParamGradients.zeros(cloud, dtype=inter.options.dtype)
    m = len(inter.gidx)
    if m == 0:
        return grads

    mu2d_k, conic_k, sigma_t_k, skip_power_k, feats_k, depth_k = inter.splat_dtype_arrays
    n_pairs = len(inter.ids)
    pair_mu2d = np.zeros((n_pairs, 2), dtype=np.float64)
    pair_conic = np.zeros((n_pairs, 3), dtype=np.float64)
    pair_sigma_t = np.zeros(n_pairs, dtype=np.float64)
    pair_feat = np.zeros((n_pairs, 9), dtype=np.float64)
    _kernels.backward_tiles(
        inter.ids, inter.tile_offsets,
        (inter.camera.width + inter.options.tile_size - 1) // inter.options.tile_size,
        inter.options.tile_size, inter.camera.height, inter.camera.width,
        mu2d_k, conic_k, sigma_t_k, skip_power_k, feats_k, depth_k,
        inter.options.alpha_clamp,
        inter.n_processed, inter.final_T,
        np.ascontiguousarray(grad_features, dtype=np.float64),
        pair_mu2d, pair_conic, pair_sigma_t, pair_feat,
    )
    # merge the per-(tile, splat) partials in fixed list order
    d_mu2d = np.zeros((m, 2), dtype=np.float64)
    d_conic = np.zeros((m, 3), dtype=np.float64)
    d_sigma_t = np.zeros(m, dtype=np.float64)
    d_feat = np.zeros((m, 9), dtype=np.float64)
    np.add.at(d_mu2d, inter.ids, pair_mu2d)
    np.add.at(d_conic, inter.ids, pair_conic)
    np.add.at(d_sigma_t, inter.ids, pair_sigma_t)
    np.add.at(d_feat, inter.ids, pair_feat)

    cam = inter.camera
    gidx = inter.gidx
    c64 = cloud if cloud.motion_coeffs.dtype == np.float64 else cloud.astype(np.float64)
    dt_off = float(inter.t) - c64.temporal_center[gidx]

    # conic -> cov2d (inverse-matrix gradient, symmetric full-matrix convention)
    a, b, c = inter.conic[:, 0], inter.conic[:, 1], inter.conic[:, 2]
    C_full = np.empty((m, 2, 2))
    C_full[:, 0, 0], C_full[:, 0, 1] = a, b
    C_full[:, 1, 0], C_full[:, 1, 1] = b, c
    G_hat = np.empty((m, 2, 2))
    G_hat[:, 0, 0] = d_conic[:, 0]
    G_hat[:, 0, 1] = G_hat[:, 1, 0] = 0.5 * d_conic[:, 1]
    G_hat[:, 1, 1] = d_conic[:, 2]
    G2 = -C_full @ G_hat @ C_full  # dL/d(cov2d), symmetric

    # cov2d = M cov3d M^T + lowpass*I with M = J R_w
    x, y, z = inter.mu_cam[:, 0], inter.mu_cam[:, 1], inter.mu_cam[:, 2]
    J = np.zeros((m, 2, 3))
    J[:, 0, 0] = cam.fx / z
    J[:, 0, 2] = -cam.fx * x / (z * z)
    J[:, 1, 1] = cam.fy / z
    J[:, 1, 2] = -cam.fy * y / (z * z)
    V = inter.cov3d_v
    cov3d = V @ np.transpose(V, (0, 2, 1))
    M_mat = J @ cam.rotation
    G3 = np.transpose(M_mat, (0, 2, 1)) @ G2 @ M_mat  # dL/d(cov3d)
    dM = 2.0 * (G2 @ M_mat @ cov3d)
    dJ = dM @ cam.rotation.T

    d_mu_cam = np.zeros((m, 3), dtype=np.float64)
    # through the Jacobian entries of the projective map
    d_mu_cam[:, 0] += dJ[:, 0, 2] * (-cam.fx / (z * z))
    d_mu_cam[:, 1] += dJ[:, 1, 2] * (-cam.fy / (z * z))
    d_mu_cam[:, 2] += (
        dJ[:, 0, 0] * (-cam.fx / (z * z))
        + dJ[:, 1, 1] * (-cam.fy / (z * z))
        + dJ[:, 0, 2] * (2 * cam.fx * x / (z * z * z))
        + dJ[:, 1, 2] * (2 * cam.fy * y / (z * z * z))
    )
    # through the projected center
    d_mu_cam[:, 0] += d_mu2d[:, 0] * cam.fx / z
    d_mu_cam[:, 1] += d_mu2d[:, 1] * cam.fy / z
    d_mu_cam[:, 2] += -(d_mu2d[:, 0] * cam.fx * x + d_mu2d[:, 1] * cam.fy * y) / (z * z)

    d_mu_world = d_mu_cam @ cam.rotation  # R^T applied row-wise

    # cov3d = V V^T with V = R diag(s)
    dV = 2.0 * (G3 @ V)
    scales = np.exp(c64.log_scales[gidx])
    d_scales = np.einsum("mik,mik->mk", dV, inter.rotmats)
    d_log_scales = d_scales * scales
    dR = dV * scales[:, None, :]
    q_hat = inter.quats_raw / np.linalg.norm(inter.quats_raw, axis=1, keepdims=True)
    d_qhat = _quat_grad(dR, q_hat)
    qnorm = np.linalg.norm(inter.quats_raw, axis=1, keepdims=True)
    d_qraw = (d_qhat - (d_qhat * q_hat).sum(axis=1, keepdims=True) * q_hat) / qnorm

    # temporal opacity sigma_t = sigmoid(logit) * exp(-s_tau * dt^2)
    s_tau = np.exp(c64.log_temporal_scale[gidx])
    sig_s = sigmoid(c64.opacity_logit[gidx])
    E = np.exp(-s_tau * dt_off * dt_off)
    d_logit = d_sigma_t * E * sig_s * (1.0 - sig_s)
    d_log_s_tau = d_sigma_t * inter.sigma_t * (-dt_off * dt_off) * s_tau
    d_mu_tau = d_sigma_t * inter.sigma_t * (2.0 * s_tau * dt_off)

    # polynomial chains: position, rotation, time-modulated features
    vel = c64.velocities_at(inter.t)[gidx]
    d_mu_tau += -(d_mu_world * vel).sum(axis=1)
    q_rate = c64.quaternion_rates_at(inter.t)[gidx]
    d_mu_tau += -(d_qraw * q_rate).sum(axis=1)
    d_mu_tau += -(d_feat[:, 6:9] * c64.f_time[gidx]).sum(axis=1)

    n_p, n_q = cloud.n_p, cloud.n_q
    d_motion = np.zeros((m, n_p + 1, 3), dtype=np.float64)
    power = np.ones(m, dtype=np.float64)
    for k in range(n_p + 1):
        d_motion[:, k, :] = d_mu_world * power[:, None]
        power = power * dt_off
    d_rot = np.zeros((m, n_q + 1, 4), dtype=np.float64)
    power = np.ones(m, dtype=np.float64)
    for k in range(n_q + 1):
        d_rot[:, k, :] = d_qraw * power[:, None]
        power = power * dt_off

    dt_out = inter.options.dtype
    grads.motion_coeffs[gidx] = d_motion.astype(dt_out)
    grads.rotation_coeffs[gidx] = d_rot.astype(dt_out)
    grads.log_scales[gidx] = d_log_scales.astype(dt_out)
    grads.opacity_logit[gidx] = d_logit.astype(dt_out)
    grads.temporal_center[gidx] = d_mu_tau.astype(dt_out)
    grads.log_temporal_scale[gidx] = d_log_s_tau.astype(dt_out)
    grads.f_base[gidx] = d_feat[:, 0:3].astype(dt_out)
    grads.f_dir[gidx] = d_feat[:, 3:6].astype(dt_out)
    grads.f_time[gidx] = (d_feat[:, 6:9] * dt_off[:, None]).astype(dt_out)

    half_scaled = d_mu2d * np.array([cam.width / 2.0, cam.height / 2.0])
    grads.center2d_grad_norm[gidx] = np.linalg.norm(half_scaled, axis=1).astype(dt_out)
    grads.hit_count[gidx] = 1
    return grads
