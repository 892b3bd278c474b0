"""Procedural test objects, all centered on the origin with outward winding."""
import numpy as np

from .mesh import TriMesh


def box(extents=(1.0, 1.0, 1.0)):
    hx, hy, hz = 0.5 * np.asarray(extents, dtype=float)
    v = np.array([[sx * hx, sy * hy, sz * hz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    # vertex index = 4*ix + 2*iy + iz
    faces = [
        (0, 1, 3), (0, 3, 2),  # -x
        (4, 6, 7), (4, 7, 5),  # +x
        (0, 4, 5), (0, 5, 1),  # -y
        (2, 3, 7), (2, 7, 6),  # +y
        (0, 2, 6), (0, 6, 4),  # -z
        (1, 5, 7), (1, 7, 3),  # +z
    ]
    return TriMesh(v, faces, {"name": "box"})


def icosphere(radius=1.0, subdivisions=2):
    t = (1 + 5 ** 0.5) / 2
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    v = [np.array(p, dtype=float) / np.linalg.norm(p) for p in v]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = v[i] + v[j]
                v.append(m / np.linalg.norm(m))
                cache[key] = len(v) - 1
            return cache[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = nf
    return TriMesh(np.array(v) * radius, f, {"name": "icosphere"})


def uv_sphere(radius=1.0, n_lat=16, n_lon=32, axis="z"):
    """Latitude/longitude sphere with its poles on ``axis``."""
    rows = []
    for i in range(1, n_lat):
        th = np.pi * i / n_lat
        for j in range(n_lon):
            ph = 2 * np.pi * j / n_lon
            rows.append((np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)))
    v = [(0.0, 0.0, 1.0)] + rows + [(0.0, 0.0, -1.0)]
    top, bottom = 0, len(v) - 1

    def ring(i, j):
        return 1 + (i - 1) * n_lon + (j % n_lon)

    f = []
    for j in range(n_lon):
        f.append((top, ring(1, j), ring(1, j + 1)))
        f.append((bottom, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)))
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            f += [(a, c, d), (a, d, b)]
    v = np.array(v) * radius
    perm = {"z": [0, 1, 2], "x": [2, 0, 1], "y": [1, 2, 0]}[axis]
    return TriMesh(v[:, perm], f, {"name": "uv_sphere"})


def cylinder(radius=1.0, height=1.0, segments=24):
    """Closed cylinder along z."""
    ang = 2 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    h = height / 2
    v = np.vstack([np.c_[ring, np.full(segments, -h)], np.c_[ring, np.full(segments, h)],
                   [[0, 0, -h], [0, 0, h]]])
    cb, ct = 2 * segments, 2 * segments + 1
    f = []
    for j in range(segments):
        k = (j + 1) % segments
        f += [(j, k, segments + k), (j, segments + k, segments + j)]
        f += [(cb, k, j), (ct, segments + j, segments + k)]
    return TriMesh(v, f, {"name": "cylinder"})


def torus(major=1.0, minor=0.25, n_major=24, n_minor=12):
    """Torus around the z axis."""
    v = []
    for i in range(n_major):
        u = 2 * np.pi * i / n_major
        for j in range(n_minor):
            w = 2 * np.pi * j / n_minor
            r = major + minor * np.cos(w)
            v.append((r * np.cos(u), r * np.sin(u), minor * np.sin(w)))

    def idx(i, j):
        return (i % n_major) * n_minor + (j % n_minor)

    f = []
    for i in range(n_major):
        for j in range(n_minor):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            f += [(a, b, c), (a, c, d)]
    return TriMesh(np.array(v), f, {"name": "torus"})


def wedge(half_angle, length=1.0, depth=1.0):
    """Triangular prism whose two slanted faces meet at an apex edge.

    The apex edge runs along y at ``z = depth/2``; the faces open downward,
    each at ``half_angle`` (radians) from the z axis. The base is at
    ``z = -depth/2``.
    """
    top = depth / 2
    half_w = depth * np.tan(half_angle)
    hl = length / 2
    v = np.array([
        [0, -hl, top], [0, hl, top],
        [-half_w, -hl, -top], [-half_w, hl, -top],
        [half_w, -hl, -top], [half_w, hl, -top],
    ])
    f = [
        (0, 3, 2), (0, 1, 3),  # -x slanted face
        (0, 5, 1), (0, 4, 5),  # +x slanted face
        (2, 5, 4), (2, 3, 5),  # base
        (0, 2, 4), (1, 5, 3),  # end caps
    ]
    return TriMesh(v, f, {"name": "wedge"})


UNIT_CUBE_OBJ = """# unit cube
v -0.5 -0.5 -0.5
v -0.5 -0.5 0.5
v -0.5 0.5 -0.5
v -0.5 0.5 0.5
v 0.5 -0.5 -0.5
v 0.5 -0.5 0.5
v 0.5 0.5 -0.5
v 0.5 0.5 0.5
f 1 2 4
f 1 4 3
f 5 7 8
f 5 8 6
f 1 5 6
f 1 6 2
f 3 4 8
f 3 8 7
f 1 3 7
f 1 7 5
f 2 6 8
f 2 8 4
"""
