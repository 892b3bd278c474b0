"""Triangle meshes: loading, hashing, augmentation, sampling and spatial queries."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from . import geometry as geo
from . import rotations

MAGIC = b"QDGM"
FORMAT_VERSION = 1
# Triangles below this area (m^2) are treated as degenerate.
MIN_AREA = 1e-20


class MeshError(ValueError):
    """Raised for unreadable, malformed or empty meshes."""


def _freeze(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Immutable indexed triangle surface.

    Per-triangle areas, unit normals (from the stored winding), the AABB, the
    content digest and the BVH are derived lazily and cached.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        v = _freeze(self.vertices, np.float64).reshape(-1, 3)
        t = _freeze(self.triangles, np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if len(t) == 0:
            raise MeshError("mesh has no triangles")
        if t.min() < 0 or t.max() >= len(v):
            raise MeshError("triangle index out of range")
        if not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinates")
        if self.areas.sum() <= 0:
            raise MeshError("mesh has zero total area")

    @classmethod
    def from_soup(cls, vertices, triangles, metadata=None):
        """Build a mesh after dropping degenerate triangles and unused vertices.

        The number of dropped triangles is recorded as ``metadata['dropped']``.
        """
        v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("triangle index out of range")
        if len(t):
            a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
            area = 0.5 * geo.norm(geo.cross(b - a, c - a))
            repeated = (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])
            keep = (area > MIN_AREA) & ~repeated
        else:
            keep = np.zeros(0, dtype=bool)
        dropped = int((~keep).sum())
        t = t[keep]
        if len(t) == 0:
            raise MeshError("mesh is empty after removing degenerate triangles")
        used = np.zeros(len(v), dtype=bool)
        used[t.ravel()] = True
        remap = np.cumsum(used) - 1
        meta = dict(metadata or {})
        meta["dropped"] = dropped
        return cls(v[used], remap[t], meta)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @cached_property
    def corners(self):
        t = self.triangles
        return self.vertices[t[:, 0]], self.vertices[t[:, 1]], self.vertices[t[:, 2]]

    @cached_property
    def _cross(self):
        a, b, c = self.corners
        return geo.cross(b - a, c - a)

    @cached_property
    def areas(self):
        return 0.5 * geo.norm(self._cross)

    @cached_property
    def normals(self):
        n = self._cross
        length = geo.norm(n)
        return n / np.where(length > 0, length, 1.0)[:, None]

    @cached_property
    def aabb(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def center(self):
        lo, hi = self.aabb
        return 0.5 * (lo + hi)

    @property
    def extents(self):
        lo, hi = self.aabb
        return hi - lo

    @property
    def diagonal(self):
        return float(np.linalg.norm(self.extents))

    @cached_property
    def bvh(self):
        a, b, c = self.corners
        lo = np.minimum(np.minimum(a, b), c)
        hi = np.maximum(np.maximum(a, b), c)
        return geo.BVH(lo, hi)

    @cached_property
    def packed(self):
        """Contiguous per-triangle arrays and flat BVH used by the compiled evaluator."""
        a, b, c = (np.ascontiguousarray(x) for x in self.corners)
        e1, e2 = b - a, c - a
        scale = np.sqrt(geo.dot(e1, e1)) * np.sqrt(geo.dot(e2, e2))
        t = self.bvh
        tree = (t.node_min, t.node_max, t.left.astype(np.int64), t.right.astype(np.int64),
                t.start.astype(np.int64), t.count.astype(np.int64), t.order.astype(np.int64))
        return (a, b, c, e1, e2, scale, np.ascontiguousarray(self.normals), tree, t.tri_min, t.tri_max)

    @cached_property
    def digest(self):
        """Hex sha256 over the canonical internal-binary serialization.

        Vertices are sorted lexicographically and each triangle is rotated to
        start at its smallest index (winding kept), so the digest depends on
        content only, not on the order a file happened to list it in.
        """
        v, t = self.vertices, self.triangles
        vorder = np.lexsort((v[:, 2], v[:, 1], v[:, 0]))
        rank = np.empty_like(vorder)
        rank[vorder] = np.arange(len(vorder))
        t = rank[t]
        shift = np.argmin(t, axis=1)
        rows = np.arange(len(t))[:, None]
        t = t[rows, (shift[:, None] + np.arange(3)) % 3]
        t = t[np.lexsort((t[:, 2], t[:, 1], t[:, 0]))]
        return hashlib.sha256(to_bytes(v[vorder], t)).hexdigest()

    def with_vertices(self, vertices, **metadata):
        """Same topology, new vertex positions (caches rebuilt)."""
        return TriMesh(vertices, self.triangles, {**self.metadata, **metadata})

    def transformed(self, quaternion, translation):
        """Apply the rigid transform ``x -> R x + t``."""
        v = rotations.rotate(np.asarray(quaternion, dtype=float), self.vertices)
        return self.with_vertices(v + np.asarray(translation, dtype=float))

    def recentered(self):
        """Translate so the AABB center is the origin."""
        c = self.center
        if not np.any(c):
            return self
        return self.with_vertices(self.vertices - c)


# --------------------------------------------------------------------------
# serialization

def to_bytes(vertices, triangles):
    v = np.ascontiguousarray(vertices, dtype="<f8")
    t = np.ascontiguousarray(triangles, dtype="<u4")
    return b"".join([
        MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        struct.pack("<Q", len(v)),
        v.tobytes(),
        struct.pack("<Q", len(t)),
        t.tobytes(),
    ])


def _parse_internal(data):
    if data[:4] != MAGIC:
        raise MeshError("bad magic, not an internal-binary mesh")
    try:
        (version,) = struct.unpack_from("<I", data, 4)
        if version != FORMAT_VERSION:
            raise MeshError(f"unsupported mesh format version {version}")
        (nv,) = struct.unpack_from("<Q", data, 8)
        off = 16
        v = np.frombuffer(data, dtype="<f8", count=3 * nv, offset=off).reshape(-1, 3)
        off += 24 * nv
        (nt,) = struct.unpack_from("<Q", data, off)
        off += 8
        t = np.frombuffer(data, dtype="<u4", count=3 * nt, offset=off).reshape(-1, 3)
    except (struct.error, ValueError) as exc:
        raise MeshError(f"truncated internal-binary mesh: {exc}") from None
    if off + 12 * nt != len(data):
        raise MeshError("trailing bytes in internal-binary mesh")
    return v.astype(np.float64), t.astype(np.int64)


def _parse_obj(text):
    verts, faces = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
                if len(verts[-1]) != 3:
                    raise ValueError("vertex needs 3 coordinates")
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if len(idx) < 3:
                    raise ValueError("face needs at least 3 vertices")
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
        except ValueError as exc:
            raise MeshError(f"OBJ line {lineno}: {exc}") from None
    if not verts or not faces:
        raise MeshError("OBJ file has no geometry")
    return np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64)


def _parse_stl(data):
    if len(data) < 84:
        raise MeshError("STL file too short")
    (n,) = struct.unpack_from("<I", data, 80)
    if len(data) < 84 + 50 * n:
        raise MeshError("STL file truncated")
    rec = np.dtype([("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    tris = np.frombuffer(data, dtype=rec, count=n, offset=84)
    corners = tris["v"].reshape(-1, 3).astype(np.float64)
    # weld exactly coincident corners, numbering vertices by first appearance
    uniq, first, inverse = np.unique(corners, axis=0, return_index=True, return_inverse=True)
    appearance = np.argsort(first, kind="stable")
    rank = np.empty_like(appearance)
    rank[appearance] = np.arange(len(appearance))
    return uniq[appearance], rank[inverse.ravel()].reshape(-1, 3)


_FORMATS = {".obj": "obj", ".stl": "stl", ".qdgm": "internal"}


def load_mesh(path, format=None, recenter=True):
    """Load an OBJ, binary STL or internal-binary mesh.

    The mesh is recentered on its AABB center unless ``recenter`` is False.
    Degenerate triangles are dropped; their count is in ``metadata['dropped']``.
    """
    path = Path(path)
    fmt = format or _FORMATS.get(path.suffix.lower())
    if fmt is None:
        raise MeshError(f"cannot infer mesh format from {path.name!r}")
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read mesh {str(path)!r}: {exc.strerror}") from None
    if fmt == "obj":
        try:
            v, t = _parse_obj(data.decode("utf-8"))
        except UnicodeDecodeError:
            raise MeshError("OBJ file is not valid UTF-8") from None
    elif fmt == "stl":
        v, t = _parse_stl(data)
    elif fmt == "internal":
        v, t = _parse_internal(data)
    else:
        raise MeshError(f"unknown mesh format {fmt!r}")
    mesh = TriMesh.from_soup(v, t, {"source": str(path)})
    return mesh.recentered() if recenter else mesh


def save_mesh(mesh, path, format=None):
    path = Path(path)
    fmt = format or _FORMATS.get(path.suffix.lower(), "internal")
    if fmt == "internal":
        path.write_bytes(to_bytes(mesh.vertices, mesh.triangles))
    elif fmt == "obj":
        lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
        path.write_text("\n".join(lines) + "\n")
    elif fmt == "stl":
        a, b, c = mesh.corners
        rec = np.zeros(mesh.n_triangles, dtype=[("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
        rec["normal"] = mesh.normals
        rec["v"] = np.stack([a, b, c], axis=1)
        path.write_bytes(b"\0" * 80 + struct.pack("<I", mesh.n_triangles) + rec.tobytes())
    else:
        raise MeshError(f"unknown mesh format {fmt!r}")


# --------------------------------------------------------------------------
# augmentation

@dataclass(frozen=True)
class AugmentationSpec:
    """Diagonal scaling ``diag(alpha)`` applied about the object center."""

    alpha: tuple
    reference_id: str = ""
    rng_seed: int = 0

    def __post_init__(self):
        alpha = tuple(float(a) for a in self.alpha)
        if len(alpha) != 3:
            raise ValueError("alpha needs three factors")
        if min(alpha) <= 0:
            raise ValueError(f"scale factors must be positive, got {alpha}")
        object.__setattr__(self, "alpha", alpha)

    @property
    def is_identity(self):
        return self.alpha == (1.0, 1.0, 1.0)

    def apply(self, points, center):
        """Map points ``x -> D (x - c) + c``."""
        points = np.asarray(points, dtype=float)
        if self.is_identity:
            return points
        center = np.asarray(center, dtype=float)
        return (points - center) * np.asarray(self.alpha) + center

    def to_dict(self):
        return {"alpha": list(self.alpha), "reference_id": self.reference_id, "rng_seed": self.rng_seed}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["alpha"]), d.get("reference_id", ""), int(d.get("rng_seed", 0)))


def augment(mesh, spec, center=None):
    """Scale ``mesh`` by ``diag(spec.alpha)`` about its AABB center.

    An identity spec returns the input mesh itself.
    """
    if spec.is_identity:
        return mesh
    c = mesh.center if center is None else center
    c = np.asarray(c, dtype=float)
    return mesh.with_vertices(spec.apply(mesh.vertices, c), augmentation={**spec.to_dict(), "center": c.tolist()})


def sample_augmentation(rng_seed, alpha_min=0.5, alpha_max=1.5, reference_id=""):
    if not 0 < alpha_min <= alpha_max:
        raise ValueError(f"need 0 < alpha_min <= alpha_max, got ({alpha_min}, {alpha_max})")
    rng = np.random.default_rng(rng_seed)
    alpha = rng.uniform(alpha_min, alpha_max, size=3)
    if alpha_min == alpha_max:
        alpha[:] = alpha_min
    return AugmentationSpec(tuple(alpha.tolist()), reference_id, int(rng_seed))


# --------------------------------------------------------------------------
# sampling

class SurfaceSample(NamedTuple):
    point: np.ndarray
    normal: np.ndarray
    triangle_index: int


def surface_points(mesh, rng, count):
    """Area-weighted uniform points: ``(points, normals, triangle_indices)``."""
    cdf = np.cumsum(mesh.areas)
    cdf /= cdf[-1]
    tri = np.searchsorted(cdf, rng.random(count), side="right")
    tri = np.minimum(tri, mesh.n_triangles - 1)
    r1, r2 = rng.random((2, count))
    s = np.sqrt(r1)
    u, v = 1 - s, s * (1 - r2)
    a, b, c = (x[tri] for x in mesh.corners)
    w = 1 - u - v
    pts = u[:, None] * a + v[:, None] * b + w[:, None] * c
    return pts, mesh.normals[tri], tri


def sample_surface(mesh, rng_seed, count):
    if count < 1:
        raise ValueError("count must be >= 1")
    pts, nrm, tri = surface_points(mesh, np.random.default_rng(rng_seed), count)
    return [SurfaceSample(p, n, int(i)) for p, n, i in zip(pts, nrm, tri)]


# --------------------------------------------------------------------------
# queries

class RayHit(NamedTuple):
    distance: float
    point: np.ndarray
    normal: np.ndarray
    triangle_index: int


def raycast_many(mesh, origins, directions, max_dist):
    """Nearest hit for many rays: ``(has_hit, distance, triangle_index)``."""
    origins = np.atleast_2d(np.asarray(origins, dtype=float))
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    n = len(origins)
    max_dist = np.broadcast_to(np.asarray(max_dist, dtype=float), (n,))
    ends = origins + directions * max_dist[:, None]
    slack = 1e-9
    qmin = np.minimum(origins, ends) - slack
    qmax = np.maximum(origins, ends) + slack
    pr, pt = mesh.bvh.query(qmin, qmax)
    a, b, c = mesh.corners
    t, hit, glo, ghi, graze = geo.ray_triangle_pairs(
        origins[pr], directions[pr], max_dist[pr], a[pt], b[pt] - a[pt], c[pt] - a[pt], mesh.normals[pt])
    return geo.nearest_hits(n, pr, pt, t, hit, glo, ghi, graze)


def raycast(mesh, origin, direction, max_dist=np.inf) -> Optional[RayHit]:
    """Nearest intersection along a unit-direction ray, or None.

    Rays lying in a triangle's plane do not hit it, and hits where the ray is
    merely skimming a coplanar face are discarded.
    """
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(direction) - 1) > 1e-9:
        raise ValueError("direction must be a unit vector")
    if not max_dist > 0:
        raise ValueError("max_dist must be positive")
    if not np.isfinite(max_dist):
        max_dist = 2 * np.linalg.norm(np.abs(origin - mesh.center) + mesh.extents) + 1.0
    has, t, tri = raycast_many(mesh, origin[None], direction[None], max_dist)
    if not has[0]:
        return None
    i = int(tri[0])
    return RayHit(float(t[0]), origin + t[0] * direction, mesh.normals[i].copy(), i)


def boxes_intersect(mesh, centers, axes, half_extents):
    """Per box, whether any triangle intersects the oriented box (closed)."""
    centers = np.atleast_2d(centers)
    axes = np.asarray(axes, dtype=float).reshape(-1, 3, 3)
    half = np.atleast_2d(np.asarray(half_extents, dtype=float))
    half = np.broadcast_to(half, centers.shape)
    # world AABB of each box
    reach = (np.abs(axes[:, :, 0]) * half[:, :1] + np.abs(axes[:, :, 1]) * half[:, 1:2]
             + np.abs(axes[:, :, 2]) * half[:, 2:])
    slack = 1e-9
    pb, pt = mesh.bvh.query(centers - reach - slack, centers + reach + slack)
    out = np.zeros(len(centers), dtype=bool)
    if pb.size:
        a, b, c = mesh.corners
        hit = geo.obb_triangle_pairs(centers[pb], axes[pb], half[pb], a[pt], b[pt], c[pt])
        out[np.unique(pb[hit])] = True
    return out


def intersects_aabb_region(mesh, box_center, box_half_extents, box_orientation=(1.0, 0.0, 0.0, 0.0)):
    """True iff some triangle intersects the oriented box (touching counts)."""
    half = np.asarray(box_half_extents, dtype=float)
    if np.any(half <= 0):
        raise ValueError("half extents must be positive")
    axes = rotations.to_matrix(rotations.canonical(box_orientation))
    return bool(boxes_intersect(mesh, np.asarray(box_center, dtype=float)[None], axes[None], half[None])[0])


def point_mesh_distance(mesh, points, chunk=200_000):
    """Unsigned distance from each point to the surface (brute force, chunked)."""
    points = np.atleast_2d(points)
    a, b, c = mesh.corners
    nt = mesh.n_triangles
    per = max(1, chunk // nt)
    out = np.empty(len(points))
    for s in range(0, len(points), per):
        p = points[s:s + per]
        pp = np.repeat(p, nt, axis=0)
        q = geo.closest_point_triangle(pp, np.tile(a, (len(p), 1)), np.tile(b, (len(p), 1)), np.tile(c, (len(p), 1)))
        out[s:s + per] = geo.norm(pp - q).reshape(len(p), nt).min(axis=1)
    return out


# --------------------------------------------------------------------------
# decimation

def _cluster(mesh, cells):
    lo, hi = mesh.aabb
    size = (hi - lo).max() / cells
    key = np.floor((mesh.vertices - lo) / size).astype(np.int64)
    key = np.minimum(key, cells)
    flat = (key[:, 0] * (cells + 1) + key[:, 1]) * (cells + 1) + key[:, 2]
    uniq, inverse = np.unique(flat, return_inverse=True)
    inverse = inverse.ravel()
    counts = np.bincount(inverse)
    reps = np.stack([np.bincount(inverse, weights=mesh.vertices[:, k]) for k in range(3)], axis=1)
    reps /= counts[:, None]
    t = inverse[mesh.triangles]
    ok = (t[:, 0] != t[:, 1]) & (t[:, 1] != t[:, 2]) & (t[:, 0] != t[:, 2])
    t = t[ok]
    if len(t):
        a, b, c = reps[t[:, 0]], reps[t[:, 1]], reps[t[:, 2]]
        t = t[0.5 * geo.norm(geo.cross(b - a, c - a)) > MIN_AREA]
    if len(t):
        _, first = np.unique(np.sort(t, axis=1), axis=0, return_index=True)
        t = t[np.sort(first)]
    return reps, t


def hausdorff(m1, m2, n_samples=2000, rng_seed=0):
    """Symmetric Hausdorff distance estimated on vertices plus surface samples."""
    rng = np.random.default_rng(rng_seed)
    p1 = np.vstack([m1.vertices, surface_points(m1, rng, n_samples)[0]])
    p2 = np.vstack([m2.vertices, surface_points(m2, rng, n_samples)[0]])
    return float(max(point_mesh_distance(m2, p1).max(), point_mesh_distance(m1, p2).max()))


def decimate(mesh, target_triangles):
    """Uniform vertex clustering, grid resolution chosen by bisection.

    Picks the finest grid whose clustered mesh has at most
    ``target_triangles`` triangles; when even the coarsest non-empty
    clustering exceeds the budget that one is returned. The estimated
    Hausdorff distance to the input is stored in ``metadata['hausdorff']``.
    """
    if target_triangles < 4:
        raise ValueError("target_triangles must be >= 4")
    if mesh.n_triangles <= target_triangles:
        return mesh

    def count(cells):
        return len(_cluster(mesh, cells)[1])

    hi = 2
    while count(hi) <= target_triangles:
        hi *= 2
        if hi > 1 << 20:
            return mesh
    lo = 1
    # invariant: count(hi) > target; find the largest cells with count <= target
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if count(mid) <= target_triangles:
            lo = mid
        else:
            hi = mid
    cells = lo
    # counts are not strictly monotone in resolution; step down until valid
    while cells > 1 and not 0 < count(cells) <= target_triangles:
        cells -= 1
    if count(cells) == 0:
        cells = next(c for c in range(cells, hi + 1) if count(c) > 0)
    verts, tris = _cluster(mesh, cells)
    out = TriMesh.from_soup(verts, tris, {**mesh.metadata, "decimation_cells": cells})
    out.metadata["hausdorff"] = hausdorff(mesh, out)
    return out
