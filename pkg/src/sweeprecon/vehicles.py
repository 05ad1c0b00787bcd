"""Procedural vehicle meshes: a convex body/cabin silhouette extruded across
the vehicle width plus four cylindrical wheels, normalized to [-1, 1]^3.
Stands in for a CAD car dataset at desk scale; fully seeded and watertight."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .geometry import normalize_to_unit_cube
from .mesh import TriangleMesh


@dataclass(frozen=True)
class ProceduralVehicleParams:
    """Sampling ranges in pre-normalization meters."""

    length: Tuple[float, float] = (3.8, 5.2)
    width: Tuple[float, float] = (1.7, 2.1)
    body_height: Tuple[float, float] = (0.9, 1.4)
    cabin_height: Tuple[float, float] = (0.35, 0.75)
    cabin_front: Tuple[float, float] = (0.05, 0.25)   # fraction of length from mid
    cabin_rear: Tuple[float, float] = (0.25, 0.42)
    hood_drop: Tuple[float, float] = (0.15, 0.4)      # fraction of body height
    wheel_radius: Tuple[float, float] = (0.3, 0.42)
    wheel_width: Tuple[float, float] = (0.2, 0.3)
    wheel_segments: int = 16
    clearance: float = 0.04                            # gap between body and wheels

    def __post_init__(self):
        for name in ("length", "width", "body_height", "cabin_height",
                     "cabin_front", "cabin_rear", "hood_drop",
                     "wheel_radius", "wheel_width"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValueError(f"degenerate range for {name}: ({lo}, {hi})")
        if self.wheel_segments < 3:
            raise ValueError("wheel_segments must be >= 3")


def _extrude_profile(profile: np.ndarray, y_lo: float, y_hi: float) -> TriangleMesh:
    """Extrude a simple star-shaped (x, z) polygon along y into a closed prism.

    Caps are fanned from the polygon centroid, so mildly non-convex car
    silhouettes stay valid.
    """
    n = profile.shape[0]
    centroid = profile.mean(axis=0)
    ring2d = np.vstack([profile, centroid])  # centroid is vertex n
    front = np.column_stack([ring2d[:, 0], np.full(n + 1, y_hi), ring2d[:, 1]])
    back = np.column_stack([ring2d[:, 0], np.full(n + 1, y_lo), ring2d[:, 1]])
    verts = np.vstack([front, back])
    tris: List[List[int]] = []
    for i in range(n):
        j = (i + 1) % n
        tris.append([n, i, j])                       # front cap (+y)
        tris.append([n + 1 + n, n + 1 + j, n + 1 + i])  # back cap (-y)
        # side quad between profile edges i->j on both rings
        tris.append([i, n + 1 + i, n + 1 + j])
        tris.append([i, n + 1 + j, j])
    mesh = TriangleMesh(verts, np.array(tris, dtype=np.int64))
    if mesh.signed_volume() < 0:
        mesh = TriangleMesh(mesh.vertices, mesh.triangles[:, ::-1])
    return mesh


def _cylinder_y(center: np.ndarray, radius: float, width: float,
                segments: int) -> TriangleMesh:
    """Closed cylinder with its axis along y."""
    ang = 2 * np.pi * np.arange(segments) / segments
    circle = np.column_stack([radius * np.cos(ang), radius * np.sin(ang)])
    y_hi, y_lo = center[1] + width / 2, center[1] - width / 2
    top = np.column_stack([center[0] + circle[:, 0], np.full(segments, y_hi),
                           center[2] + circle[:, 1]])
    bot = np.column_stack([center[0] + circle[:, 0], np.full(segments, y_lo),
                           center[2] + circle[:, 1]])
    caps = np.array([[center[0], y_hi, center[2]], [center[0], y_lo, center[2]]])
    verts = np.vstack([top, bot, caps])
    c_hi, c_lo = 2 * segments, 2 * segments + 1
    tris: List[List[int]] = []
    for i in range(segments):
        j = (i + 1) % segments
        tris.append([c_hi, i, j])
        tris.append([c_lo, segments + j, segments + i])
        tris.append([i, segments + i, segments + j])
        tris.append([i, segments + j, j])
    mesh = TriangleMesh(verts, np.array(tris, dtype=np.int64))
    if mesh.signed_volume() < 0:
        mesh = TriangleMesh(mesh.vertices, mesh.triangles[:, ::-1])
    return mesh


def _merge(meshes: List[TriangleMesh]) -> TriangleMesh:
    verts, tris, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        offset += m.n_vertices
    return TriangleMesh(np.vstack(verts), np.vstack(tris))


def gen_vehicle_mesh(params: ProceduralVehicleParams,
                     rng: np.random.Generator) -> TriangleMesh:
    """One random vehicle: body+cabin prism over four disjoint wheels,
    normalized so the longest axis spans [-1, 1]."""
    u = lambda rg: float(rng.uniform(*rg))
    L, W, Hb = u(params.length), u(params.width), u(params.body_height)
    Hc = u(params.cabin_height)
    cf = u(params.cabin_front) * L
    cr = u(params.cabin_rear) * L
    hood = Hb * (1.0 - u(params.hood_drop))
    H = Hb + Hc
    # x forward, z up; ground at z = 0 before normalization
    profile = np.array([
        [L / 2, 0.0],
        [L / 2, hood],
        [cf, H],
        [-cr, H],
        [-L / 2, Hb],
        [-L / 2, 0.0],
    ])
    body = _extrude_profile(profile, -W / 2, W / 2)

    rw = u(params.wheel_radius)
    ww = u(params.wheel_width)
    cz = -params.clearance - rw
    cy = W / 2 - ww / 2 - 0.02
    axle = L * 0.32
    wheels = [
        _cylinder_y(np.array([sx * axle, sy * cy, cz]), rw, ww,
                    params.wheel_segments)
        for sx in (1, -1) for sy in (1, -1)
    ]
    vehicle = _merge([body] + wheels)
    verts, _ = normalize_to_unit_cube(vehicle.vertices)
    return TriangleMesh(verts, vehicle.triangles)


def gen_shapes(params: ProceduralVehicleParams, n: int,
               seed: int = 0) -> List[TriangleMesh]:
    """n distinct watertight normalized vehicles, deterministic per seed."""
    rng = np.random.default_rng(seed)
    return [gen_vehicle_mesh(params, rng) for _ in range(n)]
