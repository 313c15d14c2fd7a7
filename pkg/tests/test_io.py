"""File formats: images, sparse-point tables, exports."""

import numpy as np
import pytest

from patchps import io as pio


class TestImages:
    def test_round_trip_8bit(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.random((20, 30))
        path = tmp_path / "frame.png"
        pio.save_image(path, img)
        back = pio.load_image(path)
        assert back.shape == img.shape
        assert np.abs(back - img).max() <= 1.0 / 255.0

    def test_16bit_round_trip(self, tmp_path):
        import imageio.v3 as iio

        rng = np.random.default_rng(3)
        img16 = (rng.random((12, 12)) * 65535).astype(np.uint16)
        path = tmp_path / "deep.png"
        iio.imwrite(path, img16)
        back = pio.load_image(path)
        np.testing.assert_allclose(back, img16 / 65535.0, atol=1e-9)

    def test_rgb_collapsed_to_gray(self, tmp_path):
        import imageio.v3 as iio

        rgb = np.zeros((8, 8, 3), dtype=np.uint8)
        rgb[..., 1] = 255
        path = tmp_path / "green.png"
        iio.imwrite(path, rgb)
        gray = pio.load_image(path)
        assert gray.shape == (8, 8)
        np.testing.assert_allclose(gray, 0.587, atol=1e-3)


class TestSparsePoints:
    def test_round_trip_with_nan(self, tmp_path):
        rng = np.random.default_rng(1)
        pts = rng.normal(size=(7, 3))
        proj = rng.uniform(0, 100, size=(4, 7, 2))
        proj[2, 3] = np.nan
        path = tmp_path / "sparse.txt"
        pio.write_sparse_points(path, pts, proj)
        pts2, proj2 = pio.read_sparse_points(path)
        np.testing.assert_allclose(pts2, pts, atol=1e-15)
        np.testing.assert_allclose(proj2[np.isfinite(proj)],
                                   proj[np.isfinite(proj)], atol=1e-15)
        assert np.isnan(proj2[2, 3]).all()

    def test_comments_ignored(self, tmp_path):
        path = tmp_path / "sparse.txt"
        path.write_text(
            "# a comment\npoints 3\n0 0 0\n1 0 0.5\n0 1 1 # inline\n"
            "frames 1\n10 10\n20 10\n10 20\n")
        pts, proj = pio.read_sparse_points(path)
        assert pts.shape == (3, 3)
        assert proj.shape == (1, 3, 2)

    def test_malformed_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("vertices 3\n")
        with pytest.raises(ValueError, match="expected"):
            pio.read_sparse_points(path)


class TestExports:
    def test_ply_written_and_parses(self, tmp_path):
        pts = np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]])
        path = tmp_path / "cloud.ply"
        pio.write_point_cloud_ply(path, pts, values=np.array([0.5, 1.5]))
        text = path.read_text().splitlines()
        assert text[0] == "ply"
        assert "element vertex 2" in text
        assert text.index("end_header") == len(text) - 3
        last = np.array(text[-1].split(), dtype=float)
        np.testing.assert_allclose(last, [1, 2, 3, 1.5])

    def test_obj_written(self, tmp_path):
        verts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]])
        faces = np.array([[0, 1, 2]])
        path = tmp_path / "mesh.obj"
        pio.write_mesh_obj(path, verts, faces)
        lines = path.read_text().splitlines()
        assert lines.count("f 1 2 3") == 1
        assert sum(1 for ln in lines if ln.startswith("v ")) == 3

    def test_json_round_trip(self, tmp_path):
        data = {"b": [1, 2, 3], "a": {"x": 1.5}}
        path = tmp_path / "cfg.json"
        pio.write_json(path, data)
        assert pio.read_json(path) == data
