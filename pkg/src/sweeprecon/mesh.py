"""Triangle meshes: surface sampling, marching-cubes extraction, watertightness,
a mesh-based SDF oracle (sign by ray parity), and OBJ / binary-PLY I/O.

Sign convention everywhere: SDF positive outside, negative inside; triangle
winding is counter-clockwise seen from outside.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from skimage import measure

from .geometry import PointCloud

_CHUNK = 2048  # query chunk size for triangle-soup broadcasts


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (F, 3) int64, CCW = outward

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if v.size and not np.isfinite(v).all():
            raise ValueError("non-finite vertices")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def triangle_corners(self) -> np.ndarray:
        """(F, 3, 3) corner coordinates."""
        return self.vertices[self.triangles]

    def triangle_areas(self) -> np.ndarray:
        c = self.triangle_corners()
        cross = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def signed_volume(self) -> float:
        """Positive for outward-oriented closed meshes."""
        c = self.triangle_corners()
        return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)


@dataclass(frozen=True)
class SdfGrid:
    """Regular SDF samples on a cubic lattice; values flat in x-fastest order."""

    resolution: int
    extent: Tuple[float, float]  # (lo, hi) per axis, default (-1.1, 1.1)
    values: np.ndarray  # (resolution**3,) float64

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("resolution must be >= 2")
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if vals.shape[0] != self.resolution**3:
            raise ValueError("value count != resolution^3")
        if not np.isfinite(vals).all():
            raise ValueError("non-finite grid values")
        if not float(self.extent[0]) < float(self.extent[1]):
            raise ValueError("extent must be (lo, hi) with lo < hi")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "extent", (float(self.extent[0]), float(self.extent[1])))

    @property
    def cell_width(self) -> float:
        return (self.extent[1] - self.extent[0]) / (self.resolution - 1)

    def axis_coords(self) -> np.ndarray:
        return np.linspace(self.extent[0], self.extent[1], self.resolution)

    def volume(self) -> np.ndarray:
        """Values as a (res, res, res) array indexed [ix, iy, iz]."""
        r = self.resolution
        return self.values.reshape((r, r, r), order="F")

    def query_points(self) -> np.ndarray:
        """All lattice points, x-fastest, matching the flat value order."""
        axis = self.axis_coords()
        zz, yy, xx = np.meshgrid(axis, axis, axis, indexing="ij")
        return np.stack([xx, yy, zz], axis=-1).reshape(-1, 3)


def sample_surface(mesh: TriangleMesh, n: int, seed: int = 0,
                   return_face_index: bool = False):
    """n points sampled area-proportionally over triangles with uniform
    barycentric placement; deterministic per seed."""
    if mesh.n_triangles == 0:
        raise ValueError("empty mesh")
    if n == 0:
        cloud = PointCloud(np.zeros((0, 3)))
        return (cloud, np.zeros(0, dtype=np.int64)) if return_face_index else cloud
    rng = np.random.default_rng(seed)
    areas = mesh.triangle_areas()
    probs = areas / areas.sum()
    tri_idx = rng.choice(mesh.n_triangles, size=n, p=probs)
    c = mesh.triangle_corners()[tri_idx]
    # square-root trick gives uniform density inside each triangle
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    pts = (
        (1.0 - r1)[:, None] * c[:, 0]
        + (r1 * (1.0 - r2))[:, None] * c[:, 1]
        + (r1 * r2)[:, None] * c[:, 2]
    )
    cloud = PointCloud(pts)
    return (cloud, tri_idx.astype(np.int64)) if return_face_index else cloud


def marching_cubes(grid: SdfGrid, iso: float = 0.0) -> TriangleMesh:
    """Extract the iso-level set of an SDF grid as a triangle mesh.

    Uses the Lewiner table-based extraction; vertices are linearly interpolated
    along cell edges. Output is oriented outward (positive SDF side outside).
    A uniformly-signed grid yields an empty mesh.
    """
    vol = grid.volume()
    if vol.min() > iso or vol.max() < iso:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    w = grid.cell_width
    verts, faces, _, _ = measure.marching_cubes(
        vol, level=iso, spacing=(w, w, w), gradient_direction="ascent"
    )
    verts = verts.astype(np.float64) + grid.extent[0]
    mesh = TriangleMesh(verts, faces.astype(np.int64))
    # enforce outward orientation regardless of library convention
    if mesh.n_triangles and mesh.signed_volume() < 0:
        mesh = TriangleMesh(mesh.vertices, mesh.triangles[:, ::-1])
    return mesh


def is_watertight(mesh: TriangleMesh) -> bool:
    """True iff every undirected edge is shared by exactly two triangles with
    opposite directed orientations (closed, consistently oriented 2-manifold)."""
    if mesh.n_triangles == 0:
        return False
    t = mesh.triangles
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=0)
    if (directed[:, 0] == directed[:, 1]).any():
        return False
    # each directed edge must be unique ...
    keys = directed[:, 0] * mesh.n_vertices + directed[:, 1]
    uniq, counts = np.unique(keys, return_counts=True)
    if (counts != 1).any():
        return False
    # ... and its reverse must exist
    rev = directed[:, 1] * mesh.n_vertices + directed[:, 0]
    return bool(np.isin(rev, uniq, assume_unique=False).all())


# ---------------------------------------------------------------------------
# Mesh SDF oracle
# ---------------------------------------------------------------------------


def _point_triangle_dist2(q: np.ndarray, corners: np.ndarray) -> np.ndarray:
    """Min squared distance from each query to each triangle.

    q: (Q, 3); corners: (T, 3, 3). Returns (Q, T). Vectorized form of the
    standard closest-point-on-triangle region decomposition.
    """
    a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
    ab = b - a
    ac = c - a
    qa = q[:, None, :] - a[None, :, :]  # (Q, T, 3)
    d1 = np.einsum("tj,qtj->qt", ab, qa)
    d2 = np.einsum("tj,qtj->qt", ac, qa)
    qb = q[:, None, :] - b[None, :, :]
    d3 = np.einsum("tj,qtj->qt", ab, qb)
    d4 = np.einsum("tj,qtj->qt", ac, qb)
    qc = q[:, None, :] - c[None, :, :]
    d5 = np.einsum("tj,qtj->qt", ab, qc)
    d6 = np.einsum("tj,qtj->qt", ac, qc)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    denom_face = va + vb + vc
    with np.errstate(divide="ignore", invalid="ignore"):
        v_face = np.where(denom_face != 0, vb / denom_face, 0.0)
        w_face = np.where(denom_face != 0, vc / denom_face, 0.0)
        t_ab = np.where(d1 - d3 != 0, d1 / (d1 - d3), 0.0)
        t_ac = np.where(d2 - d6 != 0, d2 / (d2 - d6), 0.0)
        t_bc = np.where(
            (d4 - d3) + (d5 - d6) != 0, (d4 - d3) / ((d4 - d3) + (d5 - d6)), 0.0
        )

    closest = (
        a[None, :, :]
        + v_face[..., None] * ab[None, :, :]
        + w_face[..., None] * ac[None, :, :]
    )
    # vertex regions
    closest = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a[None, :, :], closest)
    closest = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b[None, :, :], closest)
    closest = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c[None, :, :], closest)
    # edge regions
    on_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    closest = np.where(
        on_ab[..., None],
        a[None, :, :] + np.clip(t_ab, 0, 1)[..., None] * ab[None, :, :],
        closest,
    )
    on_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    closest = np.where(
        on_ac[..., None],
        a[None, :, :] + np.clip(t_ac, 0, 1)[..., None] * ac[None, :, :],
        closest,
    )
    on_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    closest = np.where(
        on_bc[..., None],
        b[None, :, :] + np.clip(t_bc, 0, 1)[..., None] * (c - b)[None, :, :],
        closest,
    )
    diff = q[:, None, :] - closest
    return np.einsum("qtj,qtj->qt", diff, diff)


# slightly irrational ray directions so lattice-aligned geometry is never hit
# exactly on an edge; successive fallbacks used when a hit is too marginal
_RAY_DIRS = np.array(
    [
        [0.57, 0.61, 0.55],
        [-0.43, 0.71, 0.57],
        [0.29, -0.83, 0.49],
        [0.77, 0.13, -0.63],
    ]
)
_RAY_DIRS = _RAY_DIRS / np.linalg.norm(_RAY_DIRS, axis=1, keepdims=True)


def _ray_crossings(q: np.ndarray, corners: np.ndarray, direction: np.ndarray):
    """Moller-Trumbore crossing count per query along one direction.

    Returns (counts, ok) where ok is False for queries with a marginal hit
    (near an edge or the ray origin) that needs a fallback direction.
    """
    eps = 1e-12
    edge_tol = 1e-9
    a = corners[:, 0]
    e1 = corners[:, 1] - a
    e2 = corners[:, 2] - a
    pvec = np.cross(direction, e2)  # (T, 3)
    det = np.einsum("tj,tj->t", e1, pvec)
    valid_tri = np.abs(det) > eps
    inv_det = np.where(valid_tri, 1.0 / np.where(valid_tri, det, 1.0), 0.0)
    tvec = q[:, None, :] - a[None, :, :]
    u = np.einsum("qtj,tj->qt", tvec, pvec) * inv_det
    qvec = np.cross(tvec, e1[None, :, :])
    v = np.einsum("qtj,j->qt", qvec, direction) * inv_det
    t_hit = np.einsum("qtj,tj->qt", qvec, e2) * inv_det
    hit = valid_tri & (u >= -edge_tol) & (v >= -edge_tol) & (u + v <= 1 + edge_tol) & (
        t_hit > edge_tol
    )
    marginal = hit & (
        (u < edge_tol) | (v < edge_tol) | (u + v > 1 - edge_tol) | (t_hit < 1e-7)
    )
    strict = hit & ~marginal
    return strict.sum(axis=1), ~marginal.any(axis=1)


def mesh_sdf(mesh: TriangleMesh, queries: np.ndarray) -> np.ndarray:
    """Signed distance from each query point to a watertight mesh.

    Magnitude is the exact distance to the triangle soup; sign is determined
    by ray-crossing parity (odd = inside = negative). Raises on meshes that
    fail the watertightness check, where parity is meaningless.
    """
    if not is_watertight(mesh):
        raise ValueError("mesh_sdf requires a watertight mesh")
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    corners = mesh.triangle_corners()
    out = np.empty(q.shape[0])
    for s in range(0, q.shape[0], _CHUNK):
        chunk = q[s : s + _CHUNK]
        dist = np.sqrt(_point_triangle_dist2(chunk, corners).min(axis=1))
        counts = np.zeros(chunk.shape[0], dtype=np.int64)
        pending = np.ones(chunk.shape[0], dtype=bool)
        for direction in _RAY_DIRS:
            if not pending.any():
                break
            c, ok = _ray_crossings(chunk[pending], corners, direction)
            idx = np.flatnonzero(pending)
            counts[idx[ok]] = c[ok]
            pending[idx[ok]] = False
        # all fallbacks marginal: accept the last count (vanishingly rare)
        if pending.any():
            counts[pending] = c[~ok] if (~ok).any() else 0
        sign = np.where(counts % 2 == 1, -1.0, 1.0)
        out[s : s + _CHUNK] = sign * dist
    return out


def mesh_sdf_single(mesh: TriangleMesh, query) -> float:
    return float(mesh_sdf(mesh, np.asarray(query, dtype=np.float64).reshape(1, 3))[0])


# ---------------------------------------------------------------------------
# Mesh I/O: ASCII OBJ and binary little-endian PLY
# ---------------------------------------------------------------------------


class MeshParseError(ValueError):
    def __init__(self, path, line_no: int, msg: str):
        super().__init__(f"{path}:{line_no}: {msg}")
        self.line_no = line_no


def save_mesh_obj(mesh: TriangleMesh, path) -> None:
    lines = [f"v {v[0]:.8f} {v[1]:.8f} {v[2]:.8f}" for v in mesh.vertices]
    lines += [f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}" for t in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh_obj(path) -> TriangleMesh:
    verts, tris = [], []
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        parts = raw.split()
        if not parts or parts[0] not in ("v", "f"):
            continue
        try:
            if parts[0] == "v":
                if len(parts) < 4:
                    raise ValueError("vertex needs 3 coordinates")
                verts.append([float(x) for x in parts[1:4]])
            else:
                # indices may carry /vt/vn suffixes; quads fan-triangulated
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                if len(idx) < 3:
                    raise ValueError("face needs >= 3 indices")
                for i in range(1, len(idx) - 1):
                    tris.append([idx[0], idx[i], idx[i + 1]])
        except ValueError as exc:
            raise MeshParseError(path, line_no, str(exc)) from exc
    if not verts:
        raise MeshParseError(path, 0, "no vertices found (truncated or empty file)")
    try:
        return TriangleMesh(np.array(verts), np.array(tris, dtype=np.int64).reshape(-1, 3))
    except ValueError as exc:
        raise MeshParseError(path, 0, str(exc)) from exc


def save_mesh_ply(mesh: TriangleMesh, path) -> None:
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"element face {mesh.n_triangles}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(mesh.vertices.astype("<f4").tobytes())
        face_dtype = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
        faces = np.empty(mesh.n_triangles, dtype=face_dtype)
        faces["n"] = 3
        faces["idx"] = mesh.triangles.astype("<i4")
        fh.write(faces.tobytes())


def load_mesh_ply(path) -> TriangleMesh:
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if end < 0:
        raise MeshParseError(path, 0, "missing end_header")
    header = data[:end].decode("ascii").splitlines()
    n_vertex = n_face = None
    for line_no, line in enumerate(header, start=1):
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n_vertex = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            n_face = int(parts[2])
        elif parts[:2] == ["format", "ascii"]:
            raise MeshParseError(path, line_no, "expected binary_little_endian")
    if n_vertex is None or n_face is None:
        raise MeshParseError(path, 0, "missing vertex/face elements")
    body = data[end + len(b"end_header\n") :]
    vbytes = n_vertex * 12
    if len(body) < vbytes:
        raise MeshParseError(path, 0, "truncated vertex payload")
    verts = np.frombuffer(body[:vbytes], dtype="<f4").reshape(n_vertex, 3)
    face_dtype = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
    fbytes = n_face * face_dtype.itemsize
    if len(body) < vbytes + fbytes:
        raise MeshParseError(path, 0, "truncated face payload")
    faces = np.frombuffer(body[vbytes : vbytes + fbytes], dtype=face_dtype)
    if n_face and (faces["n"] != 3).any():
        raise MeshParseError(path, 0, "non-triangular face in binary PLY")
    return TriangleMesh(verts.astype(np.float64), faces["idx"].astype(np.int64))


def save_mesh(mesh: TriangleMesh, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        save_mesh_obj(mesh, path)
    elif path.suffix.lower() == ".ply":
        save_mesh_ply(mesh, path)
    else:
        raise ValueError(f"unsupported mesh format: {path.suffix}")


def load_mesh(path) -> TriangleMesh:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        return load_mesh_obj(path)
    if path.suffix.lower() == ".ply":
        return load_mesh_ply(path)
    raise ValueError(f"unsupported mesh format: {path.suffix}")


# ---------------------------------------------------------------------------
# SdfGrid binary format: 3 x u32 resolution, 6 x f64 extent, f64 x-fastest
# ---------------------------------------------------------------------------


def save_grid(grid: SdfGrid, path) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<3I", grid.resolution, grid.resolution, grid.resolution))
        lo, hi = grid.extent
        fh.write(struct.pack("<6d", lo, lo, lo, hi, hi, hi))
        fh.write(grid.values.astype("<f8").tobytes())


def load_grid(path) -> SdfGrid:
    data = Path(path).read_bytes()
    rx, ry, rz = struct.unpack_from("<3I", data, 0)
    if not rx == ry == rz:
        raise ValueError("only cubic grids are supported")
    ext = struct.unpack_from("<6d", data, 12)
    values = np.frombuffer(data, dtype="<f8", count=rx**3, offset=12 + 48)
    return SdfGrid(rx, (ext[0], ext[3]), values.copy())
