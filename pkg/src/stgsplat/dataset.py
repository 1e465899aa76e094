"""Dataset ingestion: manifest JSON, per-frame PNG images, timestamped PLY points.

A dataset directory contains manifest.json, one image per (camera, frame)
addressed by a per-camera path template with a {frame} placeholder, and an
initialization point cloud in ASCII PLY with a per-vertex time property.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import Camera
from .errors import DataError

REQUIRED_PLY_PROPS = ("x", "y", "z", "red", "green", "blue", "t")


def read_image(path: Path) -> np.ndarray:
    """8-bit RGB PNG -> float32 (H, W, 3) in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except FileNotFoundError:
        raise DataError(f"image not found: {path}")
    return arr / 255.0


def write_image(path: Path, rgb: np.ndarray) -> None:
    """float [0, 1] (H, W, 3) -> 8-bit RGB PNG."""
    arr = np.clip(np.round(np.asarray(rgb) * 255.0), 0, 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path)


@dataclass
class DatasetManifest:
    cameras: list[Camera]
    image_templates: list[str]
    frame_count: int
    held_out_cameras: list[int]
    time_mode: str = "linear"
    pointcloud: str | None = None

    def to_dict(self) -> dict:
        cams = []
        for cam, tmpl in zip(self.cameras, self.image_templates):
            d = cam.to_dict()
            d["image_template"] = tmpl
            cams.append(d)
        return {
            "frame_count": self.frame_count,
            "held_out_cameras": self.held_out_cameras,
            "time_mode": self.time_mode,
            "pointcloud": self.pointcloud,
            "cameras": cams,
        }


@dataclass
class Dataset:
    """Validated manifest plus lazy image access rooted at the manifest directory."""

    root: Path
    manifest: DatasetManifest
    _cache: dict = field(default_factory=dict)

    @property
    def cameras(self) -> list[Camera]:
        return self.manifest.cameras

    @property
    def frame_count(self) -> int:
        return self.manifest.frame_count

    @property
    def held_out_cameras(self) -> list[int]:
        return self.manifest.held_out_cameras

    @property
    def train_cameras(self) -> list[int]:
        held = set(self.manifest.held_out_cameras)
        return [i for i in range(len(self.cameras)) if i not in held]

    def frame_time(self, frame: int) -> float:
        return frame / max(self.frame_count - 1, 1)

    def image_path(self, camera: int, frame: int) -> Path:
        return self.root / self.manifest.image_templates[camera].format(frame=frame)

    def image(self, camera: int, frame: int) -> np.ndarray:
        key = (camera, frame)
        if key not in self._cache:
            self._cache[key] = read_image(self.image_path(camera, frame))
        return self._cache[key]

    def init_pointclouds(self):
        """Point clouds grouped by timestamp: list of (xyz, rgb, time)."""
        if not self.manifest.pointcloud:
            raise DataError("manifest declares no initialization point cloud")
        xyz, rgb, t = load_pointcloud(self.root / self.manifest.pointcloud)
        groups = []
        for tv in np.unique(t):
            mask = t == tv
            groups.append((xyz[mask], rgb[mask], float(tv)))
        return groups


def load_dataset(manifest_path) -> Dataset:
    """Parse and validate a dataset manifest; image pixels load lazily."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"manifest not found: {manifest_path}")
    try:
        raw = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"malformed manifest JSON in {manifest_path}: {e}")

    for key in ("frame_count", "cameras"):
        if key not in raw:
            raise DataError(f"manifest missing required key {key!r}")
    frame_count = int(raw["frame_count"])
    if frame_count < 1:
        raise DataError("frame_count must be >= 1")

    cameras = []
    templates = []
    for i, cd in enumerate(raw["cameras"]):
        try:
            cam = Camera.from_dict(cd)
            cam.validate()
        except (KeyError, ValueError) as e:
            raise DataError(f"camera {i} invalid: {e}")
        if "image_template" not in cd:
            raise DataError(f"camera {i} missing image_template")
        if "{frame" not in cd["image_template"]:
            raise DataError(f"camera {i} image_template lacks a {{frame}} placeholder")
        cameras.append(cam)
        templates.append(cd["image_template"])

    held_out = [int(i) for i in raw.get("held_out_cameras", [])]
    for i in held_out:
        if not 0 <= i < len(cameras):
            raise DataError(f"held-out camera index {i} out of range")

    manifest = DatasetManifest(
        cameras=cameras,
        image_templates=templates,
        frame_count=frame_count,
        held_out_cameras=held_out,
        time_mode=raw.get("time_mode", "linear"),
        pointcloud=raw.get("pointcloud"),
    )
    ds = Dataset(root=manifest_path.parent, manifest=manifest)

    # every referenced image must exist and match the declared resolution
    for ci, cam in enumerate(cameras):
        for frame in range(frame_count):
            p = ds.image_path(ci, frame)
            if not p.exists():
                raise DataError(f"missing image: {p}")
            with Image.open(p) as im:
                if im.size != (cam.width, cam.height):
                    raise DataError(
                        f"{p} is {im.size[0]}x{im.size[1]}, camera {ci} declares "
                        f"{cam.width}x{cam.height}"
                    )
    if manifest.pointcloud and not (ds.root / manifest.pointcloud).exists():
        raise DataError(f"missing point cloud: {ds.root / manifest.pointcloud}")
    return ds


def save_manifest(path, manifest: DatasetManifest) -> None:
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2))


# --- PLY ------------------------------------------------------------------

_PLY_TYPES = {
    "float": float,
    "float32": float,
    "double": float,
    "float64": float,
    "uchar": int,
    "uint8": int,
    "int": int,
    "int32": int,
}


def load_pointcloud(path):
    """ASCII PLY with x/y/z float, red/green/blue uchar and t float properties.

    Returns (xyz (N,3) float32, rgb (N,3) float32 in [0,1], t (N,) float32).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"point cloud not found: {path}")
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise DataError(f"{path}: not a PLY file")

    props: list[str] = []
    n_vertices = None
    data_start = None
    in_vertex_element = False
    fmt_ok = False
    for li, line in enumerate(lines[1:], start=1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise DataError(f"{path}: only ASCII PLY is supported, got {tok[1]}")
            fmt_ok = True
        elif tok[0] == "element":
            in_vertex_element = tok[1] == "vertex"
            if in_vertex_element:
                n_vertices = int(tok[2])
        elif tok[0] == "property" and in_vertex_element:
            if tok[1] not in _PLY_TYPES:
                raise DataError(f"{path}: unsupported property type {tok[1]}")
            props.append(tok[2])
        elif tok[0] == "end_header":
            data_start = li + 1
            break
    if data_start is None or n_vertices is None or not fmt_ok:
        raise DataError(f"{path}: malformed PLY header")
    missing = [p for p in REQUIRED_PLY_PROPS if p not in props]
    if missing:
        raise DataError(f"{path}: missing vertex properties {missing}")

    rows = lines[data_start : data_start + n_vertices]
    if len(rows) < n_vertices:
        raise DataError(f"{path}: expected {n_vertices} vertices, found {len(rows)}")
    data = np.loadtxt(rows, dtype=np.float64, ndmin=2)
    if data.shape[1] != len(props):
        raise DataError(f"{path}: row width {data.shape[1]} != {len(props)} properties")
    col = {p: i for i, p in enumerate(props)}
    xyz = data[:, [col["x"], col["y"], col["z"]]].astype(np.float32)
    rgb = (data[:, [col["red"], col["green"], col["blue"]]] / 255.0).astype(np.float32)
    t = data[:, col["t"]].astype(np.float32)
    return xyz, rgb, t


def save_pointcloud(path, xyz: np.ndarray, rgb: np.ndarray, t: np.ndarray) -> None:
    """Write the ASCII PLY layout load_pointcloud expects (rgb in [0, 1])."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = len(xyz)
    rgb8 = np.clip(np.round(np.asarray(rgb) * 255.0), 0, 255).astype(np.uint8)
    header = (
        "ply\nformat ascii 1.0\n"
        f"element vertex {n}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "property float t\nend_header\n"
    )
    body = [
        f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {c[0]} {c[1]} {c[2]} {tv:.9g}"
        for p, c, tv in zip(np.asarray(xyz, dtype=np.float32), rgb8, np.asarray(t, dtype=np.float32))
    ]
    path.write_text(header + "\n".join(body) + "\n")
