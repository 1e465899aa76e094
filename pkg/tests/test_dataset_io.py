import numpy as np
import pytest

from stgsplat.dataset import (
    Dataset,
    load_dataset,
    load_pointcloud,
    read_image,
    save_pointcloud,
    write_image,
)
from stgsplat.errors import DataError
from stgsplat.synth import SynthSpec, synthesize


def minimal_dataset(tmp_path, cameras=2, frames=1, width=32, height=24):
    import json

    from conftest import look_at_matrix

    cams = []
    for ci in range(cameras):
        (tmp_path / f"cam{ci:02d}").mkdir(parents=True, exist_ok=True)
        for f in range(frames):
            write_image(tmp_path / f"cam{ci:02d}" / f"frame_{f:04d}.png",
                        np.full((height, width, 3), 0.25 * (ci + 1)))
        cams.append({
            "width": width, "height": height, "fx": 30.0, "fy": 30.0,
            "cx": width / 2, "cy": height / 2,
            "world_to_camera": look_at_matrix((ci * 2.0 + 1.0, 0, -6)).reshape(-1).tolist(),
            "image_template": f"cam{ci:02d}/frame_{{frame:04d}}.png",
        })
    manifest = {"frame_count": frames, "held_out_cameras": [], "cameras": cams}
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    return tmp_path


class TestManifest:
    def test_minimal_loads(self, tmp_path):
        ds = load_dataset(minimal_dataset(tmp_path))
        assert ds.frame_count == 1
        assert len(ds.cameras) == 2
        img = ds.image(0, 0)
        assert img.shape == (24, 32, 3)
        assert np.allclose(img, 0.25, atol=1 / 255)

    def test_missing_image_names_path(self, tmp_path):
        root = minimal_dataset(tmp_path)
        bad = root / "cam01" / "frame_0000.png"
        bad.unlink()
        with pytest.raises(DataError, match="cam01/frame_0000.png"):
            load_dataset(root)

    def test_resolution_mismatch_detected(self, tmp_path):
        root = minimal_dataset(tmp_path)
        write_image(root / "cam00" / "frame_0000.png", np.zeros((8, 8, 3)))
        with pytest.raises(DataError, match="8x8"):
            load_dataset(root)

    def test_malformed_json(self, tmp_path):
        root = minimal_dataset(tmp_path)
        (root / "manifest.json").write_text("{ not json")
        with pytest.raises(DataError, match="malformed"):
            load_dataset(root)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_dataset(tmp_path / "nope")

    def test_synthesized_roundtrip(self, tmp_path):
        out = synthesize(SynthSpec(out_dir=str(tmp_path / "s"), cameras=2, width=32,
                                   height=32, frames=2, blobs=2, seed=5))
        ds = load_dataset(out)
        assert ds.frame_count == 2
        assert ds.frame_time(0) == 0.0 and ds.frame_time(1) == 1.0
        groups = ds.init_pointclouds()
        assert len(groups) >= 1

    def test_frame_time_single_frame(self, tmp_path):
        ds = load_dataset(minimal_dataset(tmp_path, frames=1))
        assert ds.frame_time(0) == 0.0


class TestPly:
    def test_single_vertex(self, tmp_path):
        p = tmp_path / "one.ply"
        save_pointcloud(p, np.array([[1.0, 2.0, 3.0]]), np.array([[1.0, 0.0, 0.5]]),
                        np.array([0.25]))
        xyz, rgb, t = load_pointcloud(p)
        assert xyz.shape == (1, 3) and rgb.shape == (1, 3) and t.shape == (1,)
        assert np.allclose(xyz[0], (1, 2, 3))
        assert np.allclose(rgb[0], (1.0, 0.0, 128 / 255), atol=1e-6)
        assert t[0] == 0.25

    def test_missing_time_property_rejected(self, tmp_path):
        p = tmp_path / "not.ply"
        p.write_text(
            "ply\nformat ascii 1.0\nelement vertex 1\n"
            "property float x\nproperty float y\nproperty float z\n"
            "property uchar red\nproperty uchar green\nproperty uchar blue\n"
            "end_header\n0 0 0 255 255 255\n"
        )
        with pytest.raises(DataError, match="missing vertex properties"):
            load_pointcloud(p)

    def test_generator_roundtrip_bit_for_bit(self, tmp_path, rng):
        xyz = rng.uniform(-4, 4, (100, 3)).astype(np.float32)
        rgb8 = rng.integers(0, 256, (100, 3))
        t = rng.uniform(0, 1, 100).astype(np.float32)
        p = tmp_path / "cloud.ply"
        save_pointcloud(p, xyz, rgb8 / 255.0, t)
        xyz2, rgb2, t2 = load_pointcloud(p)
        # float32 values survive the %.8g ASCII round trip exactly
        assert np.array_equal(xyz2, xyz)
        assert np.array_equal(t2, t)
        assert np.array_equal((rgb2 * 255).round().astype(int), rgb8)

    def test_malformed_header(self, tmp_path):
        p = tmp_path / "bad.ply"
        p.write_text("ply\nformat ascii 1.0\nelement vertex 2\n")
        with pytest.raises(DataError):
            load_pointcloud(p)

    def test_truncated_body(self, tmp_path):
        p = tmp_path / "short.ply"
        p.write_text(
            "ply\nformat ascii 1.0\nelement vertex 2\n"
            "property float x\nproperty float y\nproperty float z\n"
            "property uchar red\nproperty uchar green\nproperty uchar blue\n"
            "property float t\nend_header\n0 0 0 1 2 3 0.5\n"
        )
        with pytest.raises(DataError, match="expected 2"):
            load_pointcloud(p)

    def test_not_a_ply(self, tmp_path):
        p = tmp_path / "x.ply"
        p.write_text("hello\n")
        with pytest.raises(DataError, match="not a PLY"):
            load_pointcloud(p)


class TestImages:
    def test_png_roundtrip(self, tmp_path, rng):
        img = rng.uniform(0, 1, (16, 16, 3))
        p = tmp_path / "img.png"
        write_image(p, img)
        back = read_image(p)
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-6

    def test_missing_image(self, tmp_path):
        with pytest.raises(DataError):
            read_image(tmp_path / "missing.png")
