"""Binary model serialization (.stgm).

Layout: a 60-byte header followed by consecutive little-endian float32 arrays,
one per parameter field (structure-of-arrays, so a viewer can stream partial
loads). Round trips are bit-exact.

Header: magic "STGM" | u32 version=1 | u32 flags (bit0 = lite) | u32 N |
u32 n_p | u32 n_q | u32 hidden (0 if lite) | u32 activation (0 clamp,
1 sigmoid) | f32 time_min | f32 time_max | 20 reserved bytes.

Array order: motion_coeffs [N x (n_p+1) x 3], rotation_coeffs [N x (n_q+1) x 4],
log_scales [N x 3], opacity_logit [N], temporal_center [N],
log_temporal_scale [N], f_base [N x 3], f_dir [N x 3], f_time [N x 3];
then, unless lite: w1 (row-major), b1, w2 (row-major), b2.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cloud import GaussianCloud
from .errors import DataError
from .shading import ACTIVATION_CLAMP, ACTIVATION_SIGMOID, MlpHead

MAGIC = b"STGM"
VERSION = 1
FLAG_LITE = 1
HEADER_SIZE = 60
_HEADER_FMT = "<4s7I2f20x"

_ACTIVATION_ENUM = {ACTIVATION_CLAMP: 0, ACTIVATION_SIGMOID: 1}
_ACTIVATION_NAME = {v: k for k, v in _ACTIVATION_ENUM.items()}


@dataclass
class ModelMeta:
    lite: bool
    count: int
    n_p: int
    n_q: int
    hidden: int
    activation_mode: str
    time_min: float
    time_max: float


def model_file_size(count: int, n_p: int = 3, n_q: int = 1, hidden: int = 0) -> int:
    """Exact on-disk size in bytes; hidden=0 means a lite file."""
    per_gaussian = 3 * (n_p + 1) + 4 * (n_q + 1) + 3 + 1 + 1 + 1 + 9
    mlp_floats = 0 if hidden == 0 else hidden * 9 + hidden + 3 * hidden + 3
    return HEADER_SIZE + count * per_gaussian * 4 + mlp_floats * 4


def save_model(cloud: GaussianCloud, mlp: MlpHead | None, path,
               time_min: float = 0.0, time_max: float = 1.0) -> None:
    """Serialize a cloud (and MLP unless lite) to `path`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lite = mlp is None
    flags = FLAG_LITE if lite else 0
    hidden = 0 if lite else mlp.hidden
    activation = 0 if lite else _ACTIVATION_ENUM[mlp.activation_mode]
    header = struct.pack(
        _HEADER_FMT, MAGIC, VERSION, flags, cloud.count, cloud.n_p, cloud.n_q,
        hidden, activation, float(time_min), float(time_max),
    )
    chunks = [header]
    for name in GaussianCloud.PARAM_FIELDS:
        chunks.append(np.ascontiguousarray(getattr(cloud, name), dtype="<f4").tobytes())
    if not lite:
        for arr in (mlp.w1, mlp.b1, mlp.w2, mlp.b2):
            chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    path.write_bytes(b"".join(chunks))


def load_model(path):
    """Read a .stgm file; returns (GaussianCloud, MlpHead | None, ModelMeta)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"model file not found: {path}")
    blob = path.read_bytes()
    if len(blob) < HEADER_SIZE:
        raise DataError(f"{path}: truncated header ({len(blob)} bytes)")
    magic, version, flags, count, n_p, n_q, hidden, activation, tmin, tmax = struct.unpack(
        _HEADER_FMT, blob[:HEADER_SIZE]
    )
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    lite = bool(flags & FLAG_LITE)
    if not lite and hidden == 0:
        raise DataError(f"{path}: full model with zero hidden width")
    if activation not in _ACTIVATION_NAME:
        raise DataError(f"{path}: unknown activation enum {activation}")
    expected = model_file_size(count, n_p, n_q, 0 if lite else hidden)
    if len(blob) != expected:
        raise DataError(f"{path}: size {len(blob)} != expected {expected} (truncated or padded)")

    shapes = {
        "motion_coeffs": (count, n_p + 1, 3),
        "rotation_coeffs": (count, n_q + 1, 4),
        "log_scales": (count, 3),
        "opacity_logit": (count,),
        "temporal_center": (count,),
        "log_temporal_scale": (count,),
        "f_base": (count, 3),
        "f_dir": (count, 3),
        "f_time": (count, 3),
    }
    offset = HEADER_SIZE
    arrays = {}
    for name in GaussianCloud.PARAM_FIELDS:
        shape = shapes[name]
        nbytes = int(np.prod(shape)) * 4
        arrays[name] = (
            np.frombuffer(blob, dtype="<f4", count=int(np.prod(shape)), offset=offset)
            .reshape(shape)
            .astype(np.float32)
        )
        offset += nbytes
    cloud = GaussianCloud(**arrays, n_p=n_p, n_q=n_q)

    mlp = None
    if not lite:
        def take(shape):
            nonlocal offset
            n = int(np.prod(shape))
            arr = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(shape)
            offset += n * 4
            return arr.astype(np.float32)

        mlp = MlpHead(
            w1=take((hidden, 9)),
            b1=take((hidden,)),
            w2=take((3, hidden)),
            b2=take((3,)),
            activation_mode=_ACTIVATION_NAME[activation],
        )
    meta = ModelMeta(
        lite=lite, count=count, n_p=n_p, n_q=n_q, hidden=hidden,
        activation_mode=_ACTIVATION_NAME[activation],
        time_min=float(tmin), time_max=float(tmax),
    )
    return cloud, mlp, meta


def export_web(cloud: GaussianCloud, path, time_min: float = 0.0, time_max: float = 1.0) -> None:
    """Write the lite-mode file the web viewer consumes (MLP dropped)."""
    save_model(cloud, None, path, time_min=time_min, time_max=time_max)
