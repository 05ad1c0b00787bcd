import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_acd, brute_cd, brute_recall
from sweeprecon import metrics
from sweeprecon.geometry import PointCloud
from sweeprecon.lidar_sim import LidarConfig, SensorPose, SweepInstance
from sweeprecon.mesh import TriangleMesh


def clouds(seed, n=None, m=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(1, 200))
    m = m or int(rng.integers(1, 200))
    return (PointCloud(rng.normal(size=(n, 3))),
            PointCloud(rng.normal(size=(m, 3))))


class TestOracleEquivalence:
    @pytest.mark.parametrize("seed", range(10))
    def test_acd_recall_cd(self, seed):
        X, Y = clouds(seed)
        assert metrics.acd(X, Y) == pytest.approx(
            brute_acd(X.points, Y.points), rel=1e-12)
        assert metrics.acd(X, Y, normalize=False) == pytest.approx(
            brute_acd(X.points, Y.points, normalize=False), rel=1e-12)
        assert metrics.recall(X, Y) == brute_recall(X.points, Y.points)
        assert metrics.cd(X, Y) == pytest.approx(
            brute_cd(X.points, Y.points), rel=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_property_equivalence(self, seed):
        X, Y = clouds(seed, n=int(seed % 50) + 1, m=int(seed % 37) + 1)
        assert metrics.acd(X, Y) == pytest.approx(
            brute_acd(X.points, Y.points), rel=1e-12)


class TestMetricProperties:
    def test_identity_zero(self):
        X, _ = clouds(1)
        assert metrics.acd(X, X) == 0.0
        assert metrics.cd(X, X) == 0.0
        assert metrics.recall(X, X) == 1.0

    def test_recall_threshold(self):
        X = PointCloud(np.array([[0.0, 0, 0], [1.0, 0, 0]]))
        Y = PointCloud(np.array([[0.0, 0, 0]]))
        # squared distances: 0 and 1; threshold is on squared distance
        assert metrics.recall(X, Y, t=0.5) == 0.5
        assert metrics.recall(X, Y, t=1.0) == 1.0

    def test_cd_symmetric(self):
        X, Y = clouds(2)
        assert metrics.cd(X, Y) == pytest.approx(metrics.cd(Y, X))

    def test_empty_rejected(self):
        X, _ = clouds(3)
        with pytest.raises(ValueError):
            metrics.acd(X, PointCloud(np.zeros((0, 3))))


def tetra(offset=0.0):
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]]) + offset
    f = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    return TriangleMesh(v, f)


class TestBestSingleShot:
    def test_picks_planted_best(self):
        gt = metrics.sample_surface(tetra(), 500, seed=0)
        meshes = [tetra(2.0), tetra(0.0), tetra(1.0)]
        idx, row = metrics.best_single_shot(meshes, gt, n_samples=500, seed=1)
        assert idx == 1
        assert row.acd_mean_per_point < 5e-3

    def test_tie_breaks_low_index(self):
        gt = metrics.sample_surface(tetra(), 200, seed=0)
        idx, _ = metrics.best_single_shot([tetra(), tetra()], gt,
                                          n_samples=200, seed=1)
        assert idx == 0

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            metrics.best_single_shot([], PointCloud(np.eye(3)))


class TestBuildGroundTruth:
    def test_stacks_and_removes_outlier(self):
        rng = np.random.default_rng(4)
        a = PointCloud(rng.uniform(-1, 1, (100, 3)),
                       sensor_origin=np.array([5.0, 0, 0]))
        pts = rng.uniform(-1, 1, (100, 3))
        pts[0] = [40.0, 40.0, 40.0]
        b = PointCloud(pts, sensor_origin=np.array([0.0, 5, 0]))
        inst = SweepInstance("x", [a, b],
                             [SensorPose(10.0, 5.0, 1.0), SensorPose(80.0, 5.0, 1.0)],
                             side=1, config=LidarConfig())
        gt = metrics.build_ground_truth(inst)
        assert len(gt) >= 190
        assert not (gt.points == [40.0, 40.0, 40.0]).all(axis=1).any()


class TestEvalReport:
    def make_report(self):
        r = metrics.EvalReport()
        r.add(metrics.EvalRow("i0", "ours", 0.1, 10.0, 0.9, 0.3))
        r.add(metrics.EvalRow("i1", "ours", 0.3, 30.0, 0.7, None))
        r.add(metrics.EvalRow("i0", "base", 0.5, 50.0, 0.5, 0.9))
        return r

    def test_summary(self):
        s = self.make_report().summary()
        assert s["ours"]["ACD_mean"] == pytest.approx(0.2)
        assert s["ours"]["ACD_median"] == pytest.approx(0.2)
        assert s["ours"]["Recall"] == pytest.approx(0.8)
        assert s["ours"]["n"] == 2 and s["base"]["n"] == 1

    def test_mean_acd_missing_method(self):
        with pytest.raises(KeyError):
            self.make_report().mean_acd("nope")

    def test_csv_roundtrip(self, tmp_path):
        r = self.make_report()
        p = tmp_path / "r.csv"
        r.write_csv(p)
        with open(p) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 3
        assert rows[0]["method"] == "ours"
        assert float(rows[0]["acd_mean_per_point"]) == 0.1
        assert rows[1]["cd"] == ""

    def test_json_summary(self, tmp_path):
        import json
        p = tmp_path / "s.json"
        self.make_report().write_json_summary(p)
        assert json.loads(p.read_text())["ours"]["n"] == 2


class TestEvaluateMethod:
    def test_perfect_reconstruction(self):
        gt = metrics.sample_surface(tetra(), 400, seed=5)
        row = metrics.evaluate_method(tetra(), gt, n_samples=3000, seed=6,
                                      instance_id="a", method="m",
                                      gt_mesh=tetra())
        assert row.acd_mean_per_point < 1e-3
        assert row.recall == 1.0
        assert row.cd is not None and row.cd < 1e-2

    def test_empty_mesh_rejected(self):
        gt = PointCloud(np.eye(3))
        empty = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
        with pytest.raises(ValueError):
            metrics.evaluate_method(empty, gt)
