"""Per-pixel shading: splatted features + view direction -> RGB.

A 2-layer ReLU MLP maps [view features | time features | ray direction] to a
color residual added onto the base channels; the result goes through either a
clamp or a sigmoid. Lite mode skips the MLP entirely and clamps the base
channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera
from .cloud import sigmoid
from .errors import UsageError
from .rasterizer import FeatureImage

MLP_INPUT_DIM = 9  # 3 view-feature + 3 time-feature + 3 ray-direction channels
DEFAULT_HIDDEN = 32

ACTIVATION_CLAMP = "clamp"
ACTIVATION_SIGMOID = "sigmoid"


@dataclass
class MlpHead:
    """Weights of the shading network; input layout [f_dir(3), f_time(3), ray(3)]."""

    w1: np.ndarray  # (hidden, 9)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (3, hidden)
    b2: np.ndarray  # (3,)
    activation_mode: str = ACTIVATION_CLAMP

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def create(cls, hidden: int = DEFAULT_HIDDEN, activation_mode: str = ACTIVATION_CLAMP,
               rng: np.random.Generator | None = None, dtype=np.float32) -> "MlpHead":
        """Uniform +-1/sqrt(fan_in) init for both layers."""
        rng = rng or np.random.default_rng(0)
        lim1 = 1.0 / np.sqrt(MLP_INPUT_DIM)
        lim2 = 1.0 / np.sqrt(hidden)
        return cls(
            w1=rng.uniform(-lim1, lim1, size=(hidden, MLP_INPUT_DIM)).astype(dtype),
            b1=rng.uniform(-lim1, lim1, size=hidden).astype(dtype),
            w2=rng.uniform(-lim2, lim2, size=(3, hidden)).astype(dtype),
            b2=rng.uniform(-lim2, lim2, size=3).astype(dtype),
            activation_mode=activation_mode,
        )

    @classmethod
    def zeros(cls, hidden: int = DEFAULT_HIDDEN, activation_mode: str = ACTIVATION_CLAMP,
              dtype=np.float32) -> "MlpHead":
        return cls(
            w1=np.zeros((hidden, MLP_INPUT_DIM), dtype=dtype),
            b1=np.zeros(hidden, dtype=dtype),
            w2=np.zeros((3, hidden), dtype=dtype),
            b2=np.zeros(3, dtype=dtype),
            activation_mode=activation_mode,
        )

    def validate(self) -> None:
        if self.w1.shape[1] != MLP_INPUT_DIM or self.w2.shape[0] != 3:
            raise ValueError("shading MLP must map 9 inputs to 3 outputs")
        if self.w2.shape[1] != self.w1.shape[0] or self.b1.shape != (self.w1.shape[0],):
            raise ValueError("hidden dimensions of the two layers disagree")
        for arr in (self.w1, self.b1, self.w2, self.b2):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite MLP weight")

    def astype(self, dtype) -> "MlpHead":
        return MlpHead(
            w1=self.w1.astype(dtype), b1=self.b1.astype(dtype),
            w2=self.w2.astype(dtype), b2=self.b2.astype(dtype),
            activation_mode=self.activation_mode,
        )


@dataclass
class MlpGradients:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class ShadeIntermediate:
    feature_image: FeatureImage
    mlp: MlpHead | None
    activation_mode: str
    rays: np.ndarray | None  # (H, W, 3)
    z1: np.ndarray | None  # (H, W, hidden) pre-ReLU
    rgb_raw: np.ndarray  # (H, W, 3) pre-activation


def ray_direction(cam: Camera, pixel) -> np.ndarray:
    """World-space unit vector from the camera origin through a continuous image point."""
    u, v = float(pixel[0]), float(pixel[1])
    d_cam = np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])
    d_world = cam.rotation.T @ d_cam
    return d_world / np.linalg.norm(d_world)


def ray_directions_image(cam: Camera, dtype=np.float64) -> np.ndarray:
    """Unit ray directions through every pixel center, shape (H, W, 3)."""
    ys, xs = np.mgrid[0 : cam.height, 0 : cam.width]
    d_cam = np.stack(
        [
            (xs + 0.5 - cam.cx) / cam.fx,
            (ys + 0.5 - cam.cy) / cam.fy,
            np.ones_like(xs, dtype=np.float64),
        ],
        axis=-1,
    )
    d_world = d_cam @ cam.rotation  # row-vector form of R^T @ d
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    return d_world.astype(dtype)


def _apply_activation(rgb_raw: np.ndarray, mode: str) -> np.ndarray:
    if mode == ACTIVATION_CLAMP:
        return np.clip(rgb_raw, 0.0, 1.0)
    if mode == ACTIVATION_SIGMOID:
        return sigmoid(rgb_raw)
    raise UsageError(f"unknown activation mode {mode!r}")


def shade(feature_image: FeatureImage, cam: Camera, mlp: MlpHead | None,
          rays: np.ndarray | None = None):
    """Decode a splatted feature image to RGB in [0, 1].

    With mlp=None (lite mode) the base channels are clamped directly. Returns
    (rgb, ShadeIntermediate). `rays` can carry precomputed pixel directions.
    """
    H, W = feature_image.features.shape[:2]
    if (H, W) != (cam.height, cam.width):
        raise UsageError(
            f"feature image is {H}x{W} but camera expects {cam.height}x{cam.width}"
        )
    dt = np.float64 if feature_image.features.dtype == np.float64 else np.float32
    base = feature_image.f_base
    if mlp is None:
        rgb_raw = base.astype(dt)
        rgb = _apply_activation(rgb_raw, ACTIVATION_CLAMP)
        inter = ShadeIntermediate(feature_image, None, ACTIVATION_CLAMP, None, None, rgb_raw)
        return rgb, inter

    if rays is None:
        rays = ray_directions_image(cam, dtype=dt)
    x = np.concatenate(
        [
            feature_image.f_dir.astype(dt),
            feature_image.f_time.astype(dt),
            rays.astype(dt),
        ],
        axis=-1,
    )  # (H, W, 9)
    z1 = x @ mlp.w1.astype(dt).T + mlp.b1.astype(dt)
    h = np.maximum(z1, 0.0)
    rgb_raw = base.astype(dt) + h @ mlp.w2.astype(dt).T + mlp.b2.astype(dt)
    rgb = _apply_activation(rgb_raw, mlp.activation_mode)
    inter = ShadeIntermediate(feature_image, mlp, mlp.activation_mode, rays, z1, rgb_raw)
    return rgb, inter


def render_rgb(cloud, cam: Camera, mlp: MlpHead | None, t: float, lite: bool = False,
               options=None, rays: np.ndarray | None = None) -> np.ndarray:
    """Full pipeline for inference: splat features, then shade to RGB.

    lite=True ignores any MLP and clamps the base channels.
    """
    from .rasterizer import render_forward

    image, _ = render_forward(cloud, cam, t, options)
    rgb, _ = shade(image, cam, None if lite else mlp, rays=rays)
    return rgb


def shade_backward(inter: ShadeIntermediate, grad_rgb: np.ndarray):
    """Gradients of a scalar loss through shade.

    Returns (grad_feature_image (H, W, 9), MlpGradients or None). The clamp
    activation passes zero gradient outside [0, 1]; ray directions are treated
    as constants.
    """
    H, W = inter.rgb_raw.shape[:2]
    if grad_rgb.shape != (H, W, 3):
        raise UsageError(f"grad_rgb shape {grad_rgb.shape} does not match {H}x{W}x3")
    dt = inter.rgb_raw.dtype
    grad_rgb = grad_rgb.astype(dt)
    if inter.activation_mode == ACTIVATION_CLAMP:
        inside = (inter.rgb_raw >= 0.0) & (inter.rgb_raw <= 1.0)
        g_raw = grad_rgb * inside
    else:
        s = sigmoid(inter.rgb_raw)
        g_raw = grad_rgb * s * (1.0 - s)

    grad_features = np.zeros((H, W, 9), dtype=dt)
    grad_features[:, :, 0:3] = g_raw
    if inter.mlp is None:
        return grad_features, None

    mlp = inter.mlp
    w1 = mlp.w1.astype(dt)
    w2 = mlp.w2.astype(dt)
    h = np.maximum(inter.z1, 0.0)
    g_h = g_raw @ w2  # (H, W, hidden)
    g_z1 = g_h * (inter.z1 > 0.0)
    x = np.concatenate(
        [
            inter.feature_image.f_dir.astype(dt),
            inter.feature_image.f_time.astype(dt),
            inter.rays.astype(dt),
        ],
        axis=-1,
    )
    g_x = g_z1 @ w1  # (H, W, 9)
    grad_features[:, :, 3:6] = g_x[:, :, 0:3]
    grad_features[:, :, 6:9] = g_x[:, :, 3:6]

    flat_graw = g_raw.reshape(-1, 3)
    flat_h = h.reshape(-1, mlp.hidden)
    flat_gz1 = g_z1.reshape(-1, mlp.hidden)
    flat_x = x.reshape(-1, 9)
    mlp_grads = MlpGradients(
        w1=flat_gz1.T @ flat_x,
        b1=flat_gz1.sum(axis=0),
        w2=flat_graw.T @ flat_h,
        b2=flat_graw.sum(axis=0),
    )
    return grad_features, mlp_grads
