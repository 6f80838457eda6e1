"""Tensor files, scene files and PNG emission."""

import json

import numpy as np
import pytest

from c2nlos.errors import MalformedHeader, SizeMismatch, UnsupportedDtype
from c2nlos.forward import Scene, TimeAxis, TransientSinogram, simulate_sinogram
from c2nlos.geometry import ScanCircle
from c2nlos.io import (
    bundled_scene_path,
    emit_png,
    load_measurement,
    load_scene,
    parse_scene,
    read_png,
    read_tensor,
    save_measurement,
    scene_document,
    write_tensor,
)


class TestTensor:
    def test_round_trip_bit_exact(self, tmp_path):
        a = np.array([[1.5, -2.25, 3e-7], [np.float32(np.pi), 0.0, -0.0]], dtype=np.float32)
        p = write_tensor(a, tmp_path / "t.bin", note="x")
        b, h = read_tensor(p)
        assert b.dtype == np.float32 and b.shape == (2, 3)
        assert a.tobytes() == b.tobytes()
        assert h["note"] == "x" and h["dims"] == [2, 3]

    def test_layout(self, tmp_path):
        p = write_tensor(np.arange(6, dtype=np.float32).reshape(2, 3), tmp_path / "t.bin")
        raw = p.read_bytes()
        line, payload = raw.split(b"\n", 1)
        assert json.loads(line)["dtype"] == "f32le"
        np.testing.assert_array_equal(np.frombuffer(payload, "<f4"), np.arange(6))

    def test_truncated(self, tmp_path):
        p = write_tensor(np.ones((2, 3)), tmp_path / "t.bin")
        p.write_bytes(p.read_bytes()[:-2])
        with pytest.raises(SizeMismatch):
            read_tensor(p)

    def test_foreign_endianness(self, tmp_path):
        p = tmp_path / "t.bin"
        p.write_bytes(b'{"dims":[1],"dtype":"f32be"}\n' + np.array([1], dtype=">f4").tobytes())
        with pytest.raises(UnsupportedDtype):
            read_tensor(p)

    @pytest.mark.parametrize("head", [b"not json\n", b'{"dims":[1],"dtype":"f32le"}', b"[1,2]\n",
                                      b'{"dims":[-1],"dtype":"f32le"}\n'])
    def test_malformed(self, tmp_path, head):
        p = tmp_path / "t.bin"
        p.write_bytes(head + b"\0\0\0\0")
        with pytest.raises(MalformedHeader):
            read_tensor(p)

    def test_measurement_round_trip(self, tmp_path):
        c = ScanCircle(0.5, 24)
        s = simulate_sinogram(Scene([[0.1, 0.0, 1.2]]), c, TimeAxis.for_range(2.0, 256))
        p = save_measurement(s, tmp_path / "s.bin")
        q = load_measurement(p)
        assert isinstance(q, TransientSinogram)
        assert q.circle == c and q.axis == s.axis
        np.testing.assert_array_equal(q.data, s.data.astype(np.float32))


class TestScene:
    def test_bundled(self):
        scene, scan, ax = load_scene(bundled_scene_path())
        assert len(scene.positions) == 2
        assert isinstance(scan, ScanCircle) and scan.num_angles == 360
        assert ax.num_bins == 2048

    def test_document_round_trip(self):
        scene, scan, ax = load_scene(bundled_scene_path())
        s2, c2, a2 = parse_scene(json.loads(json.dumps(scene_document(scene, scan, ax))))
        np.testing.assert_array_equal(s2.positions, scene.positions)
        assert c2 == scan and a2.num_bins == ax.num_bins

    def test_negative_albedo_rejected(self):
        doc = {"scatterers": [{"position": [0, 0, 1], "albedo": -1}],
               "scan": {"circle": {"radius": 0.5}}, "time_axis": {"num_bins": 64, "max_range": 2}}
        with pytest.raises(Exception):
            parse_scene(doc)

    def test_missing_scan_rejected(self):
        with pytest.raises(Exception):
            parse_scene({"scatterers": [{"position": [0, 0, 1]}], "time_axis": {"num_bins": 8, "max_range": 2}})

    def test_volume_reference(self, tmp_path):
        vol = np.zeros((2, 3, 3), dtype=np.float32)
        vol[1, 1, 1] = 2.0
        write_tensor(vol, tmp_path / "v.bin")
        doc = {"volume": {"path": "v.bin", "extent": [[-0.3, 0.3], [-0.3, 0.3], [1.0, 2.0]]},
               "scan": {"circle": {"radius": 0.2}}, "time_axis": {"num_bins": 128, "max_range": 3}}
        (tmp_path / "s.json").write_text(json.dumps(doc))
        scene, _, _ = load_scene(tmp_path / "s.json")
        assert len(scene.positions) == 1 and scene.albedos[0] == 2.0


class TestPng:
    def test_constant_minmax_mid_gray(self, tmp_path):
        px, meta = read_png(emit_png(np.full((4, 5), 3.0), tmp_path / "a.png"))
        assert (px == 128).all() and meta["normalization"] == "minmax"

    def test_fixed_zero_maps_to_zero(self, tmp_path):
        px, _ = read_png(emit_png(np.zeros((3, 3)), tmp_path / "a.png", "fixed", 0.0, 1.0))
        assert (px == 0).all()

    def test_gradient_monotone(self, tmp_path):
        img = np.array([[0.0, 1.0], [2.0, 3.0]])
        px, _ = read_png(emit_png(img, tmp_path / "g.png", flip=False))
        flat = px.ravel().astype(int)
        assert np.all(np.diff(flat) > 0) and flat[0] == 0 and flat[-1] == 255

    def test_flip_puts_first_row_at_bottom(self, tmp_path):
        img = np.array([[0.0, 0.0], [1.0, 1.0]])
        px, meta = read_png(emit_png(img, tmp_path / "f.png"))
        assert (px[0] == 255).all() and meta["origin"] == "lower"

    def test_fixed_metadata_round_trip(self, tmp_path):
        _, meta = read_png(emit_png(np.eye(3), tmp_path / "e.png", "fixed", vmin=-1.0, vmax=2.0))
        assert meta["normalization"] == "fixed" and meta["min"] == -1.0 and meta["max"] == 2.0

    def test_fixed_clips(self, tmp_path):
        px, _ = read_png(emit_png(np.array([[-5.0, 0.5], [1.0, 9.0]]), tmp_path / "c.png", "fixed",
                                  vmin=0.0, vmax=1.0, flip=False))
        assert px.tolist() == [[0, 128], [255, 255]]

    def test_rejects_3d(self, tmp_path):
        with pytest.raises(ValueError):
            emit_png(np.zeros((2, 2, 2)), tmp_path / "x.png")
