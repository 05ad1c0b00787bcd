"""Virtual spinning LiDAR: constrained pose sampling around a vehicle and
first-hit raycasting of a channel x azimuth spherical pattern against a
watertight mesh, producing realistic sparse partial sweeps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import List, Optional

import numpy as np

from .geometry import PointCloud, load_cloud_ply, save_cloud_ply
from .mesh import TriangleMesh, load_mesh_obj, save_mesh_obj

_RAY_CHUNK = 4096


class EmptySweepError(RuntimeError):
    """Raised when a pose yields zero hit points; callers resample the pose."""


@dataclass(frozen=True)
class SensorPose:
    """LiDAR placement in the vehicle frame: azimuth (degrees), horizontal
    distance and height above the ground plane, both in normalized units."""

    theta: float
    r: float
    h: float

    def __post_init__(self):
        if not -180.0 <= self.theta <= 180.0:
            raise ValueError(f"theta {self.theta} outside [-180, 180]")
        if not 3.0 <= self.r <= 15.0:
            raise ValueError(f"r {self.r} outside [3, 15]")
        if not 0.8 <= self.h <= 1.2:
            raise ValueError(f"h {self.h} outside [0.8, 1.2]")

    def position(self) -> np.ndarray:
        t = np.deg2rad(self.theta)
        return np.array([self.r * np.cos(t), self.r * np.sin(t), self.h])


@dataclass(frozen=True)
class LidarConfig:
    """Waymo-like default pattern; all parameters overridable."""

    channels: int = 64
    elevation_min: float = -25.0
    elevation_max: float = 15.0
    azimuth_step: float = 0.2
    max_range: float = 30.0
    range_noise_std: float = 0.0

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.elevation_min >= self.elevation_max:
            raise ValueError("elevation_min must be < elevation_max")
        if self.azimuth_step <= 0:
            raise ValueError("azimuth_step must be positive")


@dataclass
class SweepInstance:
    """One vehicle: B sweeps in the canonical object frame with their poses,
    plus (for training data) the ground-truth mesh and latent code."""

    shape_id: str
    sweeps: List[PointCloud]
    poses: List[SensorPose]
    side: int  # +1: theta in [0, 180]; -1: theta in [-180, 0]
    config: LidarConfig = field(default_factory=LidarConfig)
    gt_mesh: Optional[TriangleMesh] = None
    gt_latent: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.sweeps) < 1 or len(self.sweeps) != len(self.poses):
            raise ValueError("need B >= 1 sweeps with matching poses")
        for pose in self.poses:
            if self.side * pose.theta < 0:
                raise ValueError("pose azimuth on the wrong side of the vehicle")

    @property
    def n_sweeps(self) -> int:
        return len(self.sweeps)


def sample_pose(rng: np.random.Generator, side: int) -> SensorPose:
    """Uniform pose in the constraint box, restricted to one azimuth side."""
    lo, hi = (0.0, 180.0) if side > 0 else (-180.0, 0.0)
    return SensorPose(
        theta=float(rng.uniform(lo, hi)),
        r=float(rng.uniform(3.0, 15.0)),
        h=float(rng.uniform(0.8, 1.2)),
    )


def _ray_pattern(config: LidarConfig) -> np.ndarray:
    """Unit directions, channel-major then azimuth, for a full spin."""
    elev = np.deg2rad(np.linspace(config.elevation_min, config.elevation_max,
                                  config.channels))
    azim = np.deg2rad(np.arange(0.0, 360.0, config.azimuth_step))
    e = np.repeat(elev, azim.shape[0])
    a = np.tile(azim, elev.shape[0])
    return np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], axis=1)


def _first_hit_t(origin: np.ndarray, dirs: np.ndarray, corners: np.ndarray,
                 max_range: float) -> np.ndarray:
    """Moller-Trumbore first-hit parameter per ray; inf where the ray misses."""
    a = corners[:, 0]
    e1 = corners[:, 1] - a
    e2 = corners[:, 2] - a
    best = np.full(dirs.shape[0], np.inf)
    for s in range(0, dirs.shape[0], _RAY_CHUNK):
        d = dirs[s : s + _RAY_CHUNK]
        pvec = np.cross(d[:, None, :], e2[None, :, :])  # (R, T, 3)
        det = np.einsum("tj,rtj->rt", e1, pvec)
        ok = np.abs(det) > 1e-12
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = origin - a  # (T, 3)
        u = np.einsum("tj,rtj->rt", tvec, pvec) * inv
        qvec = np.cross(tvec, e1)  # (T, 3)
        v = np.einsum("rj,tj->rt", d, qvec) * inv
        t_hit = np.einsum("tj,tj->t", qvec, e2)[None, :] * inv
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t_hit > 1e-9) & (
            t_hit <= max_range
        )
        t_hit = np.where(hit, t_hit, np.inf)
        best[s : s + _RAY_CHUNK] = t_hit.min(axis=1)
    return best


def raycast_sweep(mesh: TriangleMesh, pose: SensorPose, config: LidarConfig,
                  rng: Optional[np.random.Generator] = None) -> PointCloud:
    """Simulate one sweep: first triangle hit per ray of the spinning pattern.

    Misses produce nothing; zero total hits raises EmptySweepError so the
    caller can resample the pose. Output order is channel-major, and the
    sensor origin is recorded on the returned cloud.
    """
    origin = pose.position()
    dirs = _ray_pattern(config)
    # cheap cull: only rays whose line passes near the object's bounding sphere
    center = mesh.vertices.mean(axis=0)
    radius = float(np.linalg.norm(mesh.vertices - center, axis=1).max()) * 1.05 + 1e-6
    oc = center - origin
    along = dirs @ oc
    perp2 = float(oc @ oc) - along**2
    cand = (along > 0) & (perp2 <= radius * radius)
    if not cand.any():
        raise EmptySweepError(f"no rays toward the object from pose {pose}")
    t = np.full(dirs.shape[0], np.inf)
    t[cand] = _first_hit_t(origin, dirs[cand], mesh.triangle_corners(),
                           config.max_range)
    hit = np.isfinite(t)
    if not hit.any():
        raise EmptySweepError(f"empty sweep from pose {pose}")
    ranges = t[hit]
    if config.range_noise_std > 0:
        if rng is None:
            raise ValueError("range noise requires an rng")
        ranges = ranges + rng.normal(0.0, config.range_noise_std, size=ranges.shape)
    points = origin + ranges[:, None] * dirs[hit]
    return PointCloud(points, sensor_origin=origin)


def generate_instance(mesh: TriangleMesh, B: int = 6,
                      config: LidarConfig = LidarConfig(), seed: int = 0,
                      shape_id: str = "", max_retries: int = 20) -> SweepInstance:
    """Pick an azimuth side once, then sample B valid poses and raycast each.

    Empty sweeps trigger pose resampling (bounded retries per sweep).
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    rng = np.random.default_rng(seed)
    side = 1 if rng.random() < 0.5 else -1
    sweeps, poses = [], []
    for _ in range(B):
        for attempt in range(max_retries + 1):
            pose = sample_pose(rng, side)
            try:
                sweep = raycast_sweep(mesh, pose, config, rng=rng)
                break
            except EmptySweepError:
                if attempt == max_retries:
                    raise RuntimeError(
                        f"exhausted {max_retries} pose retries for {shape_id!r}")
        sweeps.append(sweep)
        poses.append(pose)
    return SweepInstance(shape_id, sweeps, poses, side, config, gt_mesh=mesh)


# ---------------------------------------------------------------------------
# Instance persistence: meta.json + sweep_<i>.ply + optional gt.obj/gt_latent
# ---------------------------------------------------------------------------


def save_instance(instance: SweepInstance, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "shape_id": instance.shape_id,
        "B": instance.n_sweeps,
        "side": instance.side,
        "poses": [asdict(p) for p in instance.poses],
        "config": asdict(instance.config),
    }
    (directory / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1))
    for i, sweep in enumerate(instance.sweeps):
        save_cloud_ply(sweep, directory / f"sweep_{i}.ply")
    if instance.gt_mesh is not None:
        save_mesh_obj(instance.gt_mesh, directory / "gt.obj")
    if instance.gt_latent is not None:
        from .sdf_model import save_latent

        save_latent(instance.gt_latent, directory / "gt_latent.bin")


def load_instance(directory) -> SweepInstance:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    sweeps = [load_cloud_ply(directory / f"sweep_{i}.ply") for i in range(meta["B"])]
    poses = [SensorPose(**p) for p in meta["poses"]]
    gt_mesh = None
    if (directory / "gt.obj").exists():
        gt_mesh = load_mesh_obj(directory / "gt.obj")
    gt_latent = None
    if (directory / "gt_latent.bin").exists():
        from .sdf_model import load_latent

        gt_latent = load_latent(directory / "gt_latent.bin")
    return SweepInstance(meta["shape_id"], sweeps, poses, meta["side"],
                         LidarConfig(**meta["config"]), gt_mesh, gt_latent)
