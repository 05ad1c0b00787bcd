import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_fps
from sweeprecon.geometry import (PointCloud, Transform, estimate_normals, fps,
                                 load_cloud_ply, load_cloud_xyz,
                                 normalize_to_unit_cube, save_cloud_ply,
                                 save_cloud_xyz, stack_sweeps,
                                 statistical_outlier_removal)


def rand_cloud(rng, n, origin=None):
    return PointCloud(rng.normal(size=(n, 3)),
                      sensor_origin=origin)


class TestPointCloud:
    def test_validation(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((4, 2)))
        with pytest.raises(ValueError):
            PointCloud(np.array([[0.0, 0.0, np.nan]]))
        with pytest.raises(ValueError):
            PointCloud(np.zeros((1, 3)), sensor_origin=np.zeros(2))

    def test_len_and_dtype(self):
        c = PointCloud(np.zeros((5, 3), dtype=np.float32))
        assert len(c) == 5
        assert c.points.dtype == np.float64


class TestFps:
    def test_unit_square_oracle_case(self):
        # four corners plus the center: FPS from corner 0 picks corners first
        pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0],
                        [0.5, 0.5, 0]], dtype=float)
        out = fps(PointCloud(pts), 4).points
        np.testing.assert_array_equal(out, brute_fps(pts, 4))
        assert not any((out == pts[4]).all(axis=1))

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(2, 120))
            k = int(rng.integers(1, n + 4))
            pts = rng.normal(size=(n, 3))
            np.testing.assert_array_equal(
                fps(PointCloud(pts), k).points, brute_fps(pts, k))

    def test_k_not_less_than_n_returns_all(self):
        pts = np.random.default_rng(1).normal(size=(6, 3))
        out = fps(PointCloud(pts), 10).points
        assert len(out) == 6
        np.testing.assert_array_equal(np.sort(out, axis=0), np.sort(pts, axis=0))

    @given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.integers(1, 40))
    @settings(max_examples=30, deadline=None)
    def test_output_is_subset_starting_at_start_index(self, seed, n, k):
        pts = np.random.default_rng(seed).normal(size=(n, 3))
        out = fps(PointCloud(pts), k).points
        assert len(out) == min(k, n)
        np.testing.assert_array_equal(out[0], pts[0])
        for p in out:
            assert (p == pts).all(axis=1).any()

    def test_preserves_sensor_origin(self):
        c = PointCloud(np.eye(3), sensor_origin=np.array([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(fps(c, 2).sensor_origin, c.sensor_origin)


class TestNormalize:
    def test_longest_axis_spans_unit_interval(self):
        rng = np.random.default_rng(2)
        pts = rng.normal(size=(50, 3)) * np.array([4.0, 1.0, 0.5]) + 7.0
        out, tf = normalize_to_unit_cube(pts)
        spans = out.max(axis=0) - out.min(axis=0)
        assert spans.max() == pytest.approx(2.0)
        assert np.abs(out).max() <= 1.0 + 1e-12

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_transform_roundtrip(self, seed):
        pts = np.random.default_rng(seed).normal(size=(10, 3)) * 3.0
        out, tf = normalize_to_unit_cube(pts)
        np.testing.assert_allclose(tf.invert(out), pts, atol=1e-9)
        np.testing.assert_allclose(tf.apply(pts), out, atol=1e-12)

    def test_degenerate_cloud_rejected(self):
        with pytest.raises(ValueError):
            normalize_to_unit_cube(np.zeros((4, 3)))


class TestOutlierRemoval:
    def test_removes_planted_outlier(self):
        rng = np.random.default_rng(3)
        pts = rng.uniform(-1, 1, size=(200, 3))
        pts = np.vstack([pts, [50.0, 50.0, 50.0]])
        kept = statistical_outlier_removal(PointCloud(pts)).points
        assert not (kept == [50.0, 50.0, 50.0]).all(axis=1).any()
        assert len(kept) >= 190

    def test_small_cloud_passthrough(self):
        pts = np.random.default_rng(4).normal(size=(10, 3))
        out = statistical_outlier_removal(PointCloud(pts), k=20)
        np.testing.assert_array_equal(out.points, pts)

    def test_output_is_subset(self):
        pts = np.random.default_rng(5).normal(size=(80, 3))
        out = statistical_outlier_removal(PointCloud(pts), k=5, std_mult=1.0)
        for p in out.points:
            assert (p == pts).all(axis=1).any()


class TestNormals:
    def test_plane_normals_point_to_sensor(self):
        rng = np.random.default_rng(6)
        pts = np.column_stack([rng.uniform(-1, 1, 100),
                               rng.uniform(-1, 1, 100),
                               np.zeros(100)])
        sensor = np.array([0.0, 0.0, 5.0])
        n = estimate_normals(PointCloud(pts, sensor_origin=sensor))
        np.testing.assert_allclose(n, np.tile([0, 0, 1.0], (100, 1)), atol=1e-9)

    @given(st.integers(0, 2**32 - 1), st.integers(12, 60))
    @settings(max_examples=25, deadline=None)
    def test_unit_norm(self, seed, n):
        rng = np.random.default_rng(seed)
        cloud = PointCloud(rng.normal(size=(n, 3)),
                           sensor_origin=rng.normal(size=3))
        norms = np.linalg.norm(estimate_normals(cloud), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-9)

    def test_requires_sensor_origin(self):
        with pytest.raises(ValueError):
            estimate_normals(PointCloud(np.random.default_rng(0).normal(size=(20, 3))))


class TestStackAndIo:
    def test_stack_sweeps(self):
        a = PointCloud(np.zeros((2, 3)), sensor_origin=np.zeros(3))
        b = PointCloud(np.ones((3, 3)), sensor_origin=np.ones(3))
        out = stack_sweeps([a, b])
        assert len(out) == 5

    def test_ply_roundtrip(self, tmp_path):
        rng = np.random.default_rng(7)
        cloud = PointCloud(rng.normal(size=(17, 3)),
                           sensor_origin=rng.normal(size=3))
        p = tmp_path / "c.ply"
        save_cloud_ply(cloud, p)
        back = load_cloud_ply(p)
        # storage is float32
        np.testing.assert_array_equal(back.points,
                                      cloud.points.astype(np.float32))
        np.testing.assert_array_equal(back.sensor_origin,
                                      cloud.sensor_origin.astype(np.float32))

    def test_ply_roundtrip_no_origin(self, tmp_path):
        cloud = PointCloud(np.eye(3))
        p = tmp_path / "c.ply"
        save_cloud_ply(cloud, p)
        assert load_cloud_ply(p).sensor_origin is None

    def test_xyz_roundtrip(self, tmp_path):
        pts = np.random.default_rng(8).normal(size=(9, 3))
        p = tmp_path / "c.xyz"
        save_cloud_xyz(PointCloud(pts), p)
        np.testing.assert_allclose(load_cloud_xyz(p).points, pts, rtol=1e-8)


class TestTransform:
    def test_apply_invert(self):
        tf = Transform(scale=0.5, offset=np.array([1.0, -2.0, 3.0]))
        pts = np.random.default_rng(9).normal(size=(5, 3))
        np.testing.assert_allclose(tf.invert(tf.apply(pts)), pts, atol=1e-12)
