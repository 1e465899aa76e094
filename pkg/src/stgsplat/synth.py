"""Synthetic scene generator: known Gaussian scenes rendered to a dataset.

Builds a ground-truth cloud of colored blobs (static, moving, rotating,
appearing/vanishing), renders every (camera, frame) with the brute-force
reference renderer in lite shading, and writes the dataset directory, the
ground-truth model file and an initialization point cloud. Everything is
deterministic under the seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import Camera
from .cloud import GaussianCloud, inverse_sigmoid
from .dataset import DatasetManifest, save_manifest, save_pointcloud, write_image
from .errors import UsageError
from .modelfile import save_model
from .rasterizer import RenderOptions, render_reference
from .shading import shade

STATIC_LOG_TEMPORAL_SCALE = -100.0  # exp() underflows to a constant-in-time RBF
TRANSIENT_TEMPORAL_SCALE = 14.0  # sharp enough to cull at the far end of [0, 1]

FAMILIES = ("static", "linear", "cubic", "vanish", "appear", "mixed")
PRESETS = ("default", "appear", "guided")


@dataclass
class SynthSpec:
    out_dir: str = "scene"
    cameras: int = 6
    width: int = 128
    height: int = 128
    frames: int = 16
    blobs: int = 12
    motion_family: str = "mixed"
    preset: str = "default"
    ring_radius: float = 8.0
    arc_degrees: float = 360.0
    focal: float | None = None  # None -> 0.86 * width
    held_out: tuple = None  # None -> (0,) when more than one camera
    background_points: int = 16
    init_points_per_blob: int = 3
    init_timestamps: int = 4
    init_jitter: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        if self.cameras < 1 or self.frames < 1 or self.blobs < 1:
            raise UsageError("cameras, frames and blobs must all be >= 1")
        if self.width < 16 or self.height < 16:
            raise UsageError("resolution must be at least 16x16")
        if self.motion_family not in FAMILIES:
            raise UsageError(f"motion_family must be one of {FAMILIES}")
        if self.preset not in PRESETS:
            raise UsageError(f"preset must be one of {PRESETS}")


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """World-to-camera matrix for a camera at `eye` looking at `target`."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(np.asarray(up, dtype=np.float64), fwd)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    W = np.eye(4)
    W[:3, :3] = R
    W[:3, 3] = -R @ eye
    return W


def ring_cameras(spec: SynthSpec) -> list[Camera]:
    focal = spec.focal if spec.focal is not None else 0.86 * spec.width
    cams = []
    arc = np.deg2rad(spec.arc_degrees)
    for k in range(spec.cameras):
        if spec.arc_degrees >= 360.0 or spec.cameras == 1:
            theta = 2.0 * np.pi * k / spec.cameras
        else:
            theta = -arc / 2.0 + arc * k / max(spec.cameras - 1, 1)
        y = 0.8 * np.sin(2.0 * np.pi * k / spec.cameras + 0.7)
        eye = (spec.ring_radius * np.cos(theta), y, spec.ring_radius * np.sin(theta))
        cams.append(
            Camera(
                width=spec.width,
                height=spec.height,
                fx=focal,
                fy=focal,
                cx=spec.width / 2.0,
                cy=spec.height / 2.0,
                world_to_camera=look_at(eye),
            )
        )
    return cams


@dataclass
class _Blob:
    position: np.ndarray
    color: np.ndarray
    log_scale: np.ndarray
    kind: str = "static"
    velocity: np.ndarray | None = None
    cubic: np.ndarray | None = None  # (3, 3) coefficients for orders 1..3
    spin: np.ndarray | None = None  # linear quaternion coefficient
    mu_tau: float = 0.5
    log_temporal_scale: float = STATIC_LOG_TEMPORAL_SCALE
    opacity: float = 0.85
    in_init: bool = True


def _build_blobs(spec: SynthSpec, rng: np.random.Generator) -> list[_Blob]:
    blobs = []
    positions = rng.uniform(-1.8, 1.8, (spec.blobs, 3)) * np.array([1.0, 0.7, 1.0])
    colors = rng.uniform(0.25, 0.95, (spec.blobs, 3))
    scales = np.exp(rng.uniform(np.log(0.16), np.log(0.34), (spec.blobs,)))

    if spec.motion_family == "mixed":
        kinds = ["static", "linear", "static", "cubic", "linear", "rotating"]
        kinds = [kinds[i % len(kinds)] for i in range(spec.blobs)]
        if spec.blobs >= 2:
            kinds[-2] = "appear"
            kinds[-1] = "vanish"
    else:
        kinds = [spec.motion_family] * spec.blobs

    for i in range(spec.blobs):
        b = _Blob(
            position=positions[i],
            color=colors[i],
            log_scale=np.log(scales[i]) * np.ones(3),
            kind=kinds[i],
        )
        if kinds[i] == "linear":
            b.velocity = rng.uniform(-0.6, 0.6, 3)
        elif kinds[i] == "cubic":
            b.cubic = np.stack(
                [rng.uniform(-0.5, 0.5, 3), rng.uniform(-0.7, 0.7, 3), rng.uniform(-0.7, 0.7, 3)]
            )
        elif kinds[i] == "rotating":
            b.log_scale = np.log(np.array([0.45, 0.12, 0.12]))
            b.spin = rng.normal(0.0, 0.8, 4)
        elif kinds[i] == "appear":
            b.mu_tau = 1.0
            b.log_temporal_scale = np.log(TRANSIENT_TEMPORAL_SCALE)
            b.log_scale = np.log(0.32) * np.ones(3)
            b.color = np.array([0.92, 0.85, 0.3]) + rng.normal(0, 0.02, 3)
        elif kinds[i] == "vanish":
            b.mu_tau = 0.0
            b.log_temporal_scale = np.log(TRANSIENT_TEMPORAL_SCALE)
            b.log_scale = np.log(0.32) * np.ones(3)
            b.color = np.array([0.35, 0.85, 0.9]) + rng.normal(0, 0.02, 3)
        blobs.append(b)
    return blobs


def _appear_preset(spec: SynthSpec, rng: np.random.Generator) -> list[_Blob]:
    """Transient-heavy scene: most content appears or vanishes mid-sequence."""
    blobs = []
    layout = [
        ("static", 0.5, STATIC_LOG_TEMPORAL_SCALE),
        ("static", 0.5, STATIC_LOG_TEMPORAL_SCALE),
        ("linear", 0.5, STATIC_LOG_TEMPORAL_SCALE),
        ("vanish", 0.0, np.log(TRANSIENT_TEMPORAL_SCALE)),
        ("vanish", 0.2, np.log(TRANSIENT_TEMPORAL_SCALE)),
        ("appear", 0.8, np.log(TRANSIENT_TEMPORAL_SCALE)),
        ("appear", 1.0, np.log(TRANSIENT_TEMPORAL_SCALE)),
        ("pulse", 0.5, np.log(20.0)),
    ]
    n = max(spec.blobs, len(layout))
    positions = rng.uniform(-1.6, 1.6, (n, 3)) * np.array([1.0, 0.6, 1.0])
    for i in range(n):
        kind, mu_tau, lts = layout[i % len(layout)]
        transient = lts > STATIC_LOG_TEMPORAL_SCALE
        b = _Blob(
            position=positions[i],
            color=rng.uniform(0.45, 0.95, 3) if transient else rng.uniform(0.25, 0.8, 3),
            log_scale=np.log(0.36 if transient else 0.24) * np.ones(3),
            kind=kind,
            mu_tau=mu_tau,
            log_temporal_scale=lts,
        )
        if kind == "linear":
            b.velocity = rng.uniform(-0.5, 0.5, 3)
        blobs.append(b)
    return blobs


def _guided_preset(spec: SynthSpec, rng: np.random.Generator) -> list[_Blob]:
    """A few near blobs plus a distant textured wall that is left out of the
    initialization cloud (the region guided sampling must discover)."""
    blobs = []
    near = rng.uniform(-1.4, 1.4, (6, 3)) * np.array([1.0, 0.6, 1.0])
    for i in range(6):
        b = _Blob(
            position=near[i],
            color=rng.uniform(0.25, 0.9, 3),
            log_scale=np.log(0.24) * np.ones(3),
            kind="linear" if i % 3 == 0 else "static",
        )
        if b.kind == "linear":
            b.velocity = rng.uniform(-0.4, 0.4, 3)
        blobs.append(b)
    palette = np.array(
        [[0.9, 0.3, 0.25], [0.25, 0.8, 0.35], [0.3, 0.4, 0.95], [0.95, 0.85, 0.3]]
    )
    ys = np.linspace(-3.0, 3.0, 4)
    zs = np.linspace(-3.0, 3.0, 5)
    for iy, yv in enumerate(ys):
        for iz, zv in enumerate(zs):
            blobs.append(
                _Blob(
                    position=np.array([-6.0, yv, zv]),
                    color=np.clip(palette[(iy + iz) % 4] + rng.normal(0, 0.03, 3), 0.05, 1.0),
                    log_scale=np.log(np.array([0.12, 0.55, 0.55])),
                    kind="wall",
                    opacity=0.92,
                    in_init=False,
                )
            )
    return blobs


def build_ground_truth(spec: SynthSpec, rng: np.random.Generator) -> tuple[GaussianCloud, list[_Blob]]:
    if spec.preset == "appear":
        blobs = _appear_preset(spec, rng)
    elif spec.preset == "guided":
        blobs = _guided_preset(spec, rng)
    else:
        blobs = _build_blobs(spec, rng)

    cloud = GaussianCloud.zeros(len(blobs))
    for i, b in enumerate(blobs):
        cloud.motion_coeffs[i, 0, :] = b.position
        if b.velocity is not None:
            cloud.motion_coeffs[i, 1, :] = b.velocity
        if b.cubic is not None:
            cloud.motion_coeffs[i, 1:4, :] = b.cubic
        if b.spin is not None:
            cloud.rotation_coeffs[i, 1, :] = b.spin
        cloud.log_scales[i] = b.log_scale
        cloud.opacity_logit[i] = inverse_sigmoid(b.opacity)
        cloud.temporal_center[i] = b.mu_tau
        cloud.log_temporal_scale[i] = b.log_temporal_scale
        cloud.f_base[i] = b.color
    return cloud, blobs


def _init_pointcloud(spec: SynthSpec, cloud: GaussianCloud, blobs: list[_Blob],
                     rng: np.random.Generator):
    """Blob centers (jittered, at a few timestamps, only while visible) plus
    random background points."""
    times = np.linspace(0.0, 1.0, min(spec.init_timestamps, spec.frames))
    if spec.frames == 1:
        times = np.array([0.0])
    xyz, rgb, ts = [], [], []
    for tv in times:
        for i, b in enumerate(blobs):
            if not b.in_init:
                continue
            if cloud.eval_temporal_opacity(i, float(tv)) < 0.05:
                continue
            center = cloud.eval_position(i, float(tv))
            for _ in range(spec.init_points_per_blob):
                xyz.append(center + rng.normal(0, spec.init_jitter, 3))
                rgb.append(np.clip(b.color + rng.normal(0, 0.02, 3), 0.0, 1.0))
                ts.append(tv)
    # background points come in close pairs so their NN-derived scales stay small
    for _ in range(max(spec.background_points // 2, 1)):
        p = rng.uniform(-2.2, 2.2, 3)
        color = rng.uniform(0.1, 0.9, 3)
        for off in (np.zeros(3), rng.normal(0, 0.08, 3)):
            xyz.append(p + off)
            rgb.append(color)
            ts.append(times[0])
    return np.array(xyz), np.array(rgb), np.array(ts, dtype=np.float32)


def synthesize(spec: SynthSpec):
    """Write dataset images, manifest, ground-truth model and init point cloud.

    Returns the dataset directory as a Path.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    cloud, blobs = build_ground_truth(spec, rng)
    cameras = ring_cameras(spec)
    held_out = spec.held_out
    if held_out is None:
        held_out = (0,) if spec.cameras > 1 else ()

    options = RenderOptions()
    templates = []
    for ci, cam in enumerate(cameras):
        templates.append(f"cam{ci:02d}/frame_{{frame:04d}}.png")
        for frame in range(spec.frames):
            t = frame / max(spec.frames - 1, 1)
            image = render_reference(cloud, cam, t, options)
            rgb, _ = shade(image, cam, None)
            write_image(out / f"cam{ci:02d}" / f"frame_{frame:04d}.png", rgb)

    manifest = DatasetManifest(
        cameras=cameras,
        image_templates=templates,
        frame_count=spec.frames,
        held_out_cameras=list(held_out),
        pointcloud="init.ply",
    )
    save_manifest(out / "manifest.json", manifest)
    save_model(cloud, None, out / "gt_model.stgm", time_min=0.0, time_max=1.0)
    xyz, rgb, ts = _init_pointcloud(spec, cloud, blobs, rng)
    save_pointcloud(out / "init.ply", xyz, rgb, ts)
    return out
