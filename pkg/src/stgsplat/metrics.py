"""Image-quality metrics: PSNR and structural dissimilarity.

DSSIM comes in two conventions that differ only in the SSIM stabilizer data
range (1.0 vs 2.0 for images in [0, 1]); both are reported by the evaluator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ssim as _ssim
from .errors import UsageError


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]; inf for identical."""
    if a.shape != b.shape:
        raise UsageError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(-10.0 * np.log10(mse))


def dssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """(1 - SSIM) / 2 with the 11x11 Gaussian window, averaged over channels."""
    if a.shape != b.shape:
        raise UsageError(f"dssim shape mismatch: {a.shape} vs {b.shape}")
    return (1.0 - _ssim.ssim(a.astype(np.float64), b.astype(np.float64), data_range)) / 2.0


@dataclass
class FrameMetrics:
    camera: int
    frame: int
    psnr: float
    dssim1: float
    dssim2: float


@dataclass
class MetricReport:
    psnr: float
    dssim1: float
    dssim2: float
    frames: list[FrameMetrics] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "psnr": self.psnr,
            "dssim1": self.dssim1,
            "dssim2": self.dssim2,
            "frames": [
                {
                    "camera": f.camera,
                    "frame": f.frame,
                    "psnr": f.psnr,
                    "dssim1": f.dssim1,
                    "dssim2": f.dssim2,
                }
                for f in self.frames
            ],
        }

    @classmethod
    def from_frames(cls, frames: list[FrameMetrics]) -> "MetricReport":
        return cls(
            psnr=float(np.mean([f.psnr for f in frames])),
            dssim1=float(np.mean([f.dssim1 for f in frames])),
            dssim2=float(np.mean([f.dssim2 for f in frames])),
            frames=frames,
        )


def evaluate_model(cloud, mlp, dataset, camera_indices=None, lite: bool = False,
                   options=None) -> MetricReport:
    """Render every frame of the chosen cameras and score against the dataset."""
    from .shading import render_rgb

    if camera_indices is None:
        camera_indices = dataset.held_out_cameras or list(range(len(dataset.cameras)))
    frames = []
    for ci in camera_indices:
        cam = dataset.cameras[ci]
        for frame in range(dataset.frame_count):
            t = dataset.frame_time(frame)
            rgb = render_rgb(cloud, cam, mlp, t, lite=lite, options=options)
            gt = dataset.image(ci, frame)
            frames.append(
                FrameMetrics(
                    camera=ci,
                    frame=frame,
                    psnr=psnr(rgb, gt),
                    dssim1=dssim(rgb, gt, 1.0),
                    dssim2=dssim(rgb, gt, 2.0),
                )
            )
    return MetricReport.from_frames(frames)
