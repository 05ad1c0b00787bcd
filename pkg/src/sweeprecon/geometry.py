"""Point-cloud primitives: farthest point sampling, unit-cube normalization,
statistical outlier removal, normal estimation, sweep stacking, and PLY/XYZ I/O.

Conventions: points are float64 arrays of shape (N, 3) in a normalized object
frame (the object fits in [-1, 1]^3); all operations are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class PointCloud:
    """An ordered set of 3D points, optionally tagged with the sensor position
    (in the same frame) that produced them."""

    points: np.ndarray
    sensor_origin: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        if pts.size and not np.isfinite(pts).all():
            raise ValueError("points contain non-finite values")
        object.__setattr__(self, "points", pts)
        if self.sensor_origin is not None:
            so = np.asarray(self.sensor_origin, dtype=np.float64).reshape(3)
            if not np.isfinite(so).all():
                raise ValueError("sensor_origin is non-finite")
            object.__setattr__(self, "sensor_origin", so)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class Transform:
    """Uniform scale followed by translation: y = scale * x + offset."""

    scale: float
    offset: np.ndarray

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(pts, dtype=np.float64) + self.offset

    def invert(self, pts: np.ndarray) -> np.ndarray:
        return (np.asarray(pts, dtype=np.float64) - self.offset) / self.scale


def fps(cloud: PointCloud, k: int, start_index: int = 0) -> PointCloud:
    """Greedy farthest-point (maximin) subsampling, seeded at start_index.

    Returns min(k, |cloud|) points in selection order. Deterministic: ties in
    the maximin distance are broken by lowest index (numpy argmax policy).
    """
    n = len(cloud)
    if n == 0:
        raise ValueError("empty input")
    if not 0 <= start_index < n:
        raise ValueError(f"start_index {start_index} out of range for {n} points")
    k = min(int(k), n)
    pts = cloud.points
    selected = np.empty(k, dtype=np.intp)
    selected[0] = start_index
    # min squared distance from each point to the selected set
    d2 = np.sum((pts - pts[start_index]) ** 2, axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(d2))
        selected[i] = nxt
        d2 = np.minimum(d2, np.sum((pts - pts[nxt]) ** 2, axis=1))
    return PointCloud(pts[selected], cloud.sensor_origin)


def normalize_to_unit_cube(points: np.ndarray) -> Tuple[np.ndarray, Transform]:
    """Uniformly scale + translate so the longest bounding-box axis spans
    exactly [-1, 1] and the box is centered at the origin.

    Works on any (N, 3) coordinate array (point cloud or mesh vertices).
    Returns the normalized coordinates and the invertible transform applied.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
        raise ValueError("need a non-empty (N, 3) array")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise ValueError("degenerate bounding box (zero extent)")
    scale = 2.0 / extent
    center = (lo + hi) / 2.0
    tf = Transform(scale=scale, offset=-scale * center)
    return tf.apply(pts), tf


def statistical_outlier_removal(
    cloud: PointCloud, k: int = 20, std_mult: float = 2.0
) -> PointCloud:
    """Remove points whose mean k-NN distance exceeds mean + std_mult * std
    of the per-point mean distances. Survivor order is preserved.

    Clouds with <= k points are returned unchanged (statistics undefined).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(cloud)
    if n <= k:
        return cloud
    tree = cKDTree(cloud.points)
    # k+1 because the nearest neighbor of each point is itself
    dists, _ = tree.query(cloud.points, k=k + 1)
    mean_d = dists[:, 1:].mean(axis=1)
    mu = mean_d.mean()
    sigma = mean_d.std()
    keep = mean_d <= mu + std_mult * sigma
    return PointCloud(cloud.points[keep], cloud.sensor_origin)


def estimate_normals(cloud: PointCloud, k: int = 10) -> np.ndarray:
    """Per-point unit normals from k-NN PCA, sign-oriented toward the sensor.

    The normal is the smallest-eigenvalue eigenvector of the local covariance;
    its sign is flipped so that normal . (sensor_origin - point) > 0.
    """
    if cloud.sensor_origin is None:
        raise ValueError("sensor_origin required for normal orientation")
    n = len(cloud)
    if n <= k:
        raise ValueError(f"need more than k={k} points, got {n}")
    pts = cloud.points
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k + 1)
    nbrs = pts[idx]  # (n, k+1, 3)
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]  # smallest eigenvalue first
    to_sensor = cloud.sensor_origin - pts
    flip = np.einsum("ni,ni->n", normals, to_sensor) < 0
    normals[flip] *= -1.0
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    return normals / norms


def stack_sweeps(sweeps) -> PointCloud:
    """Concatenate the point clouds of a multi-sweep (duplicates retained).

    Accepts a SweepInstance or any iterable of PointCloud. The result has no
    sensor origin: it mixes observations from several poses.
    """
    clouds = getattr(sweeps, "sweeps", sweeps)
    clouds = list(clouds)
    if not clouds:
        raise ValueError("zero sweeps")
    return PointCloud(np.concatenate([c.points for c in clouds], axis=0))


# ---------------------------------------------------------------------------
# I/O: ASCII PLY and whitespace-separated XYZ
# ---------------------------------------------------------------------------


def save_cloud_ply(cloud: PointCloud, path) -> None:
    pts = cloud.points.astype(np.float32)
    lines = ["ply", "format ascii 1.0"]
    if cloud.sensor_origin is not None:
        so = cloud.sensor_origin.astype(np.float32)
        lines.append(f"comment sensor_origin {so[0]:.9g} {so[1]:.9g} {so[2]:.9g}")
    lines += [
        f"element vertex {len(pts)}",
        "property float x",
        "property float y",
        "property float z",
        "end_header",
    ]
    lines += [f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}" for p in pts]
    Path(path).write_text("\n".join(lines) + "\n")


def load_cloud_ply(path) -> PointCloud:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    sensor_origin = None
    n_vertex = None
    i = 1
    while i < len(text):
        line = text[i].strip()
        i += 1
        if line == "end_header":
            break
        parts = line.split()
        if parts[:2] == ["comment", "sensor_origin"]:
            # stored at float32 precision; parse accordingly
            sensor_origin = np.array(parts[2:5], dtype=np.float32).astype(np.float64)
        elif parts[:2] == ["element", "vertex"]:
            n_vertex = int(parts[2])
    else:
        raise ValueError(f"{path}: missing end_header")
    if n_vertex is None:
        raise ValueError(f"{path}: missing vertex element")
    rows = text[i : i + n_vertex]
    if len(rows) < n_vertex:
        raise ValueError(f"{path}: truncated, expected {n_vertex} vertices")
    pts = np.array([r.split()[:3] for r in rows], dtype=np.float32).astype(np.float64)
    pts = pts.reshape(n_vertex, 3) if n_vertex else np.zeros((0, 3))
    return PointCloud(pts, sensor_origin)


def save_cloud_xyz(cloud: PointCloud, path) -> None:
    np.savetxt(path, cloud.points, fmt="%.9g")


def load_cloud_xyz(path) -> PointCloud:
    pts = np.loadtxt(path, dtype=np.float64).reshape(-1, 3)
    return PointCloud(pts)
