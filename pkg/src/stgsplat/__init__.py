"""Spacetime Gaussian feature splatting on the CPU: scene model, differentiable
tile rasterizer, training pipeline, metrics, model/dataset I/O and CLI."""

from .camera import Camera, Splat2D, cull, project_center, project_covariance, world_to_camera_point
from .cloud import GaussianCloud
from .errors import (
    BehindCameraError,
    DataError,
    DegenerateRotationError,
    NumericalError,
    UsageError,
)
from .losses import compute_loss
from .metrics import MetricReport, dssim, psnr
from .optim import AdamState, adam_step
from .rasterizer import (
    FeatureImage,
    ParamGradients,
    RenderOptions,
    composite_pixel,
    render_backward,
    render_forward,
    render_reference,
)
from .shading import MlpHead, ray_direction, shade, shade_backward

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "Splat2D",
    "GaussianCloud",
    "FeatureImage",
    "ParamGradients",
    "RenderOptions",
    "MlpHead",
    "MetricReport",
    "AdamState",
    "BehindCameraError",
    "DataError",
    "DegenerateRotationError",
    "NumericalError",
    "UsageError",
    "adam_step",
    "composite_pixel",
    "compute_loss",
    "cull",
    "dssim",
    "project_center",
    "project_covariance",
    "psnr",
    "ray_direction",
    "render_backward",
    "render_forward",
    "render_reference",
    "shade",
    "shade_backward",
    "world_to_camera_point",
]
