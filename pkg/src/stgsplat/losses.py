"""Training loss: weighted L1 + structural dissimilarity, with analytic gradient."""

from __future__ import annotations

import numpy as np

from . import ssim as _ssim
from .errors import UsageError


def compute_loss(rendered: np.ndarray, ground_truth: np.ndarray, lambda_dssim: float = 0.2):
    """(1 - lambda) * mean|I - GT| + lambda * (1 - SSIM) / 2, data range 1.

    Returns (loss, dloss/drendered). The mean runs over every element, so both
    single-channel (H, W) and color (H, W, 3) images are accepted.
    """
    if rendered.shape != ground_truth.shape:
        raise UsageError(
            f"loss shape mismatch: {rendered.shape} vs {ground_truth.shape}"
        )
    dt = np.float64 if rendered.dtype == np.float64 else np.float32
    x = rendered.astype(dt)
    y = ground_truth.astype(dt)
    diff = x - y
    l1 = float(np.abs(diff).mean())
    grad = (1.0 - lambda_dssim) * np.sign(diff) / diff.size

    if lambda_dssim > 0.0:
        ssim_val, ssim_grad = _ssim.ssim_with_grad(x, y, data_range=1.0)
        dssim_val = (1.0 - ssim_val) / 2.0
        grad = grad + lambda_dssim * (-0.5) * ssim_grad
    else:
        dssim_val = 0.0

    loss = (1.0 - lambda_dssim) * l1 + lambda_dssim * dssim_val
    return float(loss), grad
