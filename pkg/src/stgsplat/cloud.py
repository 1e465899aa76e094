"""Scene model: time-varying anisotropic Gaussians stored as structure-of-arrays.

Each Gaussian carries a polynomial motion trajectory, a polynomial quaternion
rotation, time-independent log-scales, a temporal opacity RBF (spatial opacity
peak, temporal center, temporal scale) and a 9-channel feature vector split
into base / view / time parts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRotationError

QUAT_NORM_EPS = 1e-8
FEATURE_DIM = 9


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def inverse_sigmoid(y, eps: float = 1e-6):
    y = np.clip(y, eps, 1.0 - eps)
    return np.log(y / (1.0 - y))


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Convert unit quaternions (..., 4) in (w, x, y, z) order to rotation matrices (..., 3, 3)."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=q.dtype)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


@dataclass
class GaussianCloud:
    """All trainable per-Gaussian parameters, one numpy array per field.

    Shapes (N = count, n_p = motion degree, n_q = rotation degree):
        motion_coeffs      (N, n_p + 1, 3)   world units; coeff 0 is the position at t = temporal_center
        rotation_coeffs    (N, n_q + 1, 4)   quaternion polynomial, (w, x, y, z)
        log_scales         (N, 3)            actual scales = exp(log_scales)
        opacity_logit      (N,)              spatial opacity = sigmoid(opacity_logit)
        temporal_center    (N,)              normalized time of peak visibility
        log_temporal_scale (N,)              temporal RBF sharpness = exp(log_temporal_scale)
        f_base/f_dir/f_time (N, 3)           feature blocks, 9 channels total
    """

    motion_coeffs: np.ndarray
    rotation_coeffs: np.ndarray
    log_scales: np.ndarray
    opacity_logit: np.ndarray
    temporal_center: np.ndarray
    log_temporal_scale: np.ndarray
    f_base: np.ndarray
    f_dir: np.ndarray
    f_time: np.ndarray
    n_p: int = 3
    n_q: int = 1

    PARAM_FIELDS = (
        "motion_coeffs",
        "rotation_coeffs",
        "log_scales",
        "opacity_logit",
        "temporal_center",
        "log_temporal_scale",
        "f_base",
        "f_dir",
        "f_time",
    )

    @property
    def count(self) -> int:
        return self.motion_coeffs.shape[0]

    @classmethod
    def zeros(cls, count: int, n_p: int = 3, n_q: int = 1, dtype=np.float32) -> "GaussianCloud":
        """Cloud of `count` Gaussians with all parameters zero except identity rotation."""
        rot = np.zeros((count, n_q + 1, 4), dtype=dtype)
        rot[:, 0, 0] = 1.0
        return cls(
            motion_coeffs=np.zeros((count, n_p + 1, 3), dtype=dtype),
            rotation_coeffs=rot,
            log_scales=np.zeros((count, 3), dtype=dtype),
            opacity_logit=np.zeros(count, dtype=dtype),
            temporal_center=np.zeros(count, dtype=dtype),
            log_temporal_scale=np.zeros(count, dtype=dtype),
            f_base=np.zeros((count, 3), dtype=dtype),
            f_dir=np.zeros((count, 3), dtype=dtype),
            f_time=np.zeros((count, 3), dtype=dtype),
            n_p=n_p,
            n_q=n_q,
        )

    def validate(self) -> None:
        """Check the structural invariants; raises ValueError on violation."""
        n = self.count
        expect = {
            "motion_coeffs": (n, self.n_p + 1, 3),
            "rotation_coeffs": (n, self.n_q + 1, 4),
            "log_scales": (n, 3),
            "opacity_logit": (n,),
            "temporal_center": (n,),
            "log_temporal_scale": (n,),
            "f_base": (n, 3),
            "f_dir": (n, 3),
            "f_time": (n, 3),
        }
        for name, shape in expect.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
        assert self.f_base.shape[1] + self.f_dir.shape[1] + self.f_time.shape[1] == FEATURE_DIM

    def astype(self, dtype) -> "GaussianCloud":
        arrays = {name: getattr(self, name).astype(dtype) for name in self.PARAM_FIELDS}
        return GaussianCloud(**arrays, n_p=self.n_p, n_q=self.n_q)

    def copy(self) -> "GaussianCloud":
        arrays = {name: getattr(self, name).copy() for name in self.PARAM_FIELDS}
        return GaussianCloud(**arrays, n_p=self.n_p, n_q=self.n_q)

    def select(self, mask_or_index) -> "GaussianCloud":
        """New cloud keeping the Gaussians chosen by a boolean mask or index array."""
        arrays = {name: getattr(self, name)[mask_or_index] for name in self.PARAM_FIELDS}
        return GaussianCloud(**arrays, n_p=self.n_p, n_q=self.n_q)

    @staticmethod
    def concatenate(parts: list["GaussianCloud"]) -> "GaussianCloud":
        first = parts[0]
        arrays = {
            name: np.concatenate([getattr(p, name) for p in parts], axis=0)
            for name in GaussianCloud.PARAM_FIELDS
        }
        return GaussianCloud(**arrays, n_p=first.n_p, n_q=first.n_q)

    # --- bulk evaluation at a time t (used by the rasterizer) ---

    def time_offsets(self, t: float) -> np.ndarray:
        return np.asarray(t - self.temporal_center, dtype=self.temporal_center.dtype)

    def positions_at(self, t: float) -> np.ndarray:
        """Motion polynomial evaluated per Gaussian, shape (N, 3)."""
        dt = self.time_offsets(t)
        pos = self.motion_coeffs[:, 0, :].copy()
        power = np.ones_like(dt)
        for k in range(1, self.n_p + 1):
            power = power * dt
            pos += self.motion_coeffs[:, k, :] * power[:, None]
        return pos

    def velocities_at(self, t: float) -> np.ndarray:
        """d(position)/dt, shape (N, 3); used by the backward pass."""
        dt = self.time_offsets(t)
        vel = np.zeros_like(self.motion_coeffs[:, 0, :])
        power = np.ones_like(dt)
        for k in range(1, self.n_p + 1):
            vel += k * self.motion_coeffs[:, k, :] * power[:, None]
            power = power * dt
        return vel

    def quaternions_raw_at(self, t: float) -> np.ndarray:
        """Unnormalized quaternion polynomial per Gaussian, shape (N, 4)."""
        dt = self.time_offsets(t)
        q = self.rotation_coeffs[:, 0, :].copy()
        power = np.ones_like(dt)
        for k in range(1, self.n_q + 1):
            power = power * dt
            q += self.rotation_coeffs[:, k, :] * power[:, None]
        return q

    def quaternion_rates_at(self, t: float) -> np.ndarray:
        """d(raw quaternion)/dt, shape (N, 4)."""
        dt = self.time_offsets(t)
        dq = np.zeros_like(self.rotation_coeffs[:, 0, :])
        power = np.ones_like(dt)
        for k in range(1, self.n_q + 1):
            dq += k * self.rotation_coeffs[:, k, :] * power[:, None]
            power = power * dt
        return dq

    def temporal_opacity_at(self, t: float) -> np.ndarray:
        """Spatial opacity modulated by the temporal RBF, shape (N,), values in (0, 1)."""
        dt = self.time_offsets(t)
        s_tau = np.exp(self.log_temporal_scale)
        return sigmoid(self.opacity_logit) * np.exp(-s_tau * dt * dt)

    def features_at(self, t: float) -> np.ndarray:
        """Concatenated [f_base | f_dir | dt * f_time] features, shape (N, 9)."""
        dt = self.time_offsets(t)
        return np.concatenate(
            [self.f_base, self.f_dir, dt[:, None] * self.f_time], axis=1
        )

    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def spatial_opacity(self) -> np.ndarray:
        return sigmoid(self.opacity_logit)

    # --- single-Gaussian evaluation (reference semantics, used heavily in tests) ---

    def eval_position(self, i: int, t: float) -> np.ndarray:
        self._check_index(i)
        dt = t - self.temporal_center[i]
        powers = dt ** np.arange(self.n_p + 1)
        return (self.motion_coeffs[i] * powers[:, None]).sum(axis=0)

    def eval_rotation(self, i: int, t: float) -> np.ndarray:
        """Normalized quaternion at time t; raises DegenerateRotationError if the
        polynomial value cannot be normalized."""
        self._check_index(i)
        dt = t - self.temporal_center[i]
        powers = dt ** np.arange(self.n_q + 1)
        q = (self.rotation_coeffs[i] * powers[:, None]).sum(axis=0)
        norm = np.linalg.norm(q)
        if norm < QUAT_NORM_EPS:
            raise DegenerateRotationError(
                f"quaternion norm {norm:.3e} below {QUAT_NORM_EPS} for Gaussian {i} at t={t}"
            )
        return q / norm

    def eval_temporal_opacity(self, i: int, t: float) -> float:
        self._check_index(i)
        dt = t - self.temporal_center[i]
        s_tau = np.exp(self.log_temporal_scale[i])
        return float(sigmoid(self.opacity_logit[i]) * np.exp(-s_tau * dt * dt))

    def eval_covariance(self, i: int, t: float) -> np.ndarray:
        """3x3 world covariance R(t) S S^T R(t)^T; symmetric PSD by construction."""
        R = quat_to_rotmat(self.eval_rotation(i, t))
        s = np.exp(self.log_scales[i])
        V = R * s[None, :]
        return V @ V.T

    def eval_features(self, i: int, t: float) -> np.ndarray:
        self._check_index(i)
        dt = t - self.temporal_center[i]
        return np.concatenate([self.f_base[i], self.f_dir[i], dt * self.f_time[i]])

    def _check_index(self, i: int) -> None:
        if not 0 <= i < self.count:
            raise IndexError(f"Gaussian index {i} out of range for cloud of {self.count}")
