"""Vectorized geometric kernels shared by mesh queries and the grasp evaluator.

All kernels work on flat arrays of (query, triangle) candidate pairs produced
by :class:`BVH`. Per-pair arithmetic is written out component by component so
a pair's result never depends on which other pairs share the call.
"""
import numpy as np

# Barycentric slack so that a ray through an edge shared by two triangles is
# never lost between them.
BARY_EPS = 1e-12
PARALLEL_EPS = 1e-12
PLANE_EPS = 1e-12
# SAT axes shorter than this (relative to the edge length) are degenerate.
AXIS_EPS = 1e-10


def dot(a, b):
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def cross(a, b):
    return np.stack([
        a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
        a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
        a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
    ], axis=-1)


def norm(a):
    return np.sqrt(dot(a, a))


class BVH:
    """Median-split bounding volume hierarchy over triangle AABBs.

    Stored as flat node arrays. ``query`` walks the tree for many query boxes
    at once, one tree level per iteration.
    """

    def __init__(self, tri_min, tri_max, leaf_size=4):
        self.tri_min = tri_min
        self.tri_max = tri_max
        n_tri = len(tri_min)
        centroids = 0.5 * (tri_min + tri_max)
        order = np.arange(n_tri)
        node_min, node_max, left, right, start, count = [], [], [], [], [], []

        def new_node(s, e):
            idx = order[s:e]
            node_min.append(tri_min[idx].min(axis=0))
            node_max.append(tri_max[idx].max(axis=0))
            left.append(-1)
            right.append(-1)
            start.append(s)
            count.append(e - s)
            return len(node_min) - 1

        stack = [(new_node(0, n_tri), 0, n_tri)]
        while stack:
            node, s, e = stack.pop()
            if e - s <= leaf_size:
                continue
            c = centroids[order[s:e]]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            order[s:e] = order[s:e][np.argsort(c[:, axis], kind="stable")]
            mid = (s + e) // 2
            left[node] = new_node(s, mid)
            right[node] = new_node(mid, e)
            count[node] = 0
            stack.append((left[node], s, mid))
            stack.append((right[node], mid, e))

        self.order = order
        self.node_min = np.array(node_min)
        self.node_max = np.array(node_max)
        self.left = np.array(left)
        self.right = np.array(right)
        self.start = np.array(start)
        self.count = np.array(count)

    @property
    def n_nodes(self):
        return len(self.left)

    def query(self, qmin, qmax):
        """Candidate (query index, triangle index) pairs whose AABBs overlap."""
        qmin = np.atleast_2d(qmin)
        qmax = np.atleast_2d(qmax)
        q = np.arange(len(qmin))
        n = np.zeros(len(qmin), dtype=np.intp)
        out_q, out_t = [], []
        while q.size:
            ok = np.all((self.node_min[n] <= qmax[q]) & (self.node_max[n] >= qmin[q]), axis=1)
            q, n = q[ok], n[ok]
            leaf = self.left[n] < 0
            if leaf.any():
                lq, ln = q[leaf], n[leaf]
                counts = self.count[ln]
                total = int(counts.sum())
                first = np.repeat(np.cumsum(counts) - counts, counts)
                slots = np.repeat(self.start[ln], counts) + np.arange(total) - first
                out_q.append(np.repeat(lq, counts))
                out_t.append(self.order[slots])
            inner = ~leaf
            n_in = n[inner]
            q = np.concatenate([q[inner], q[inner]])
            n = np.concatenate([self.left[n_in], self.right[n_in]])
        if not out_q:
            empty = np.zeros(0, dtype=np.intp)
            return empty, empty
        pq = np.concatenate(out_q)
        pt = np.concatenate(out_t)
        ok = np.all((self.tri_min[pt] <= qmax[pq]) & (self.tri_max[pt] >= qmin[pq]), axis=1)
        return pq[ok], pt[ok]


def ray_triangle_pairs(origins, dirs, max_dist, v0, e1, e2, normals):
    """Intersect rays with triangles, pairwise.

    Returns ``(t, hit, graze_lo, graze_hi, grazing)``. ``hit`` marks transversal
    hits on the closed triangle with ``0 <= t <= max_dist``. Rays lying in the
    triangle's plane never hit it; for those, ``[graze_lo, graze_hi]`` is the
    parameter interval along which the ray runs over the triangle.
    """
    h = cross(dirs, e2)
    det = dot(e1, h)
    scale = norm(e1) * norm(e2)
    parallel = np.abs(det) <= PARALLEL_EPS * scale
    inv = 1.0 / np.where(parallel, 1.0, det)
    s = origins - v0
    u = dot(s, h) * inv
    qv = cross(s, e1)
    v = dot(dirs, qv) * inv
    t = dot(e2, qv) * inv
    hit = (~parallel & (u >= -BARY_EPS) & (v >= -BARY_EPS) & (u + v <= 1 + BARY_EPS)
           & (t >= 0) & (t <= max_dist))

    graze_lo = np.full(len(t), np.inf)
    graze_hi = np.full(len(t), -np.inf)
    coplanar = parallel & (np.abs(dot(s, normals)) <= PLANE_EPS)
    if coplanar.any():
        idx = np.nonzero(coplanar)[0]
        o, d, a = origins[idx], dirs[idx], v0[idx]
        n = normals[idx]
        verts = (a, a + e1[idx], a + e2[idx])
        lo = np.zeros(len(idx))
        hi = np.full(len(idx), np.inf)
        if np.ndim(max_dist):
            hi = np.asarray(max_dist, dtype=float)[idx].copy()
        else:
            hi[:] = max_dist
        empty = np.zeros(len(idx), dtype=bool)
        for k in range(3):
            p, r = verts[k], verts[(k + 1) % 3]
            inward = cross(n, r - p)
            # constraint: inward . (o + t d - p) >= 0
            a0 = dot(inward, o - p)
            a1 = dot(inward, d)
            tol = PLANE_EPS * norm(inward)
            flat = np.abs(a1) <= tol
            empty |= flat & (a0 < -tol)
            tb = -a0 / np.where(flat, 1.0, a1)
            lo = np.where(~flat & (a1 > 0), np.maximum(lo, tb), lo)
            hi = np.where(~flat & (a1 < 0), np.minimum(hi, tb), hi)
        valid = ~empty & (lo <= hi)
        graze_lo[idx[valid]] = lo[valid]
        graze_hi[idx[valid]] = hi[valid]
    return t, hit, graze_lo, graze_hi, coplanar


def nearest_hits(n_rays, pair_ray, pair_tri, t, hit, graze_lo, graze_hi, grazing):
    """Reduce pairwise results to the nearest valid hit per ray.

    Hits falling inside a grazing interval of the same ray are discarded
    (the ray only skims the surface there). Ties go to the lowest triangle
    index. Returns ``(has_hit, t, tri)`` arrays of length ``n_rays``.
    """
    has = np.zeros(n_rays, dtype=bool)
    best_t = np.full(n_rays, np.inf)
    best_tri = np.full(n_rays, -1, dtype=np.intp)
    if grazing.any():
        g_ray = pair_ray[grazing]
        g_lo, g_hi = graze_lo[grazing], graze_hi[grazing]
        keep = np.isfinite(g_lo)
        g_ray, g_lo, g_hi = g_ray[keep], g_lo[keep], g_hi[keep]
        if g_ray.size:
            hit = hit.copy()
            hit_idx = np.nonzero(hit & np.isin(pair_ray, g_ray))[0]
            for i in hit_idx:
                r = pair_ray[i]
                sel = g_ray == r
                tol = 1e-12 * max(1.0, abs(t[i]))
                if np.any((t[i] >= g_lo[sel] - tol) & (t[i] <= g_hi[sel] + tol)):
                    hit[i] = False
    idx = np.nonzero(hit)[0]
    if idx.size == 0:
        return has, best_t, best_tri
    r, tt, tri = pair_ray[idx], t[idx], pair_tri[idx]
    order = np.lexsort((tri, tt, r))
    r, tt, tri = r[order], tt[order], tri[order]
    first = np.ones(len(r), dtype=bool)
    first[1:] = r[1:] != r[:-1]
    has[r[first]] = True
    best_t[r[first]] = tt[first]
    best_tri[r[first]] = tri[first]
    return has, best_t, best_tri


def obb_triangle_pairs(centers, axes, half, v0, v1, v2):
    """Separating-axis test between oriented boxes and triangles, pairwise.

    ``axes`` is (P, 3, 3) with the box's local x, y, z axes as columns.
    Touching (separation exactly zero) counts as intersecting. Pairs are
    culled progressively: box face axes first, then the triangle normal,
    then the nine edge cross products.
    """
    n_pairs = len(centers)
    rot = np.ascontiguousarray(np.asarray(axes, dtype=float).transpose(1, 2, 0))
    c = np.ascontiguousarray(np.asarray(centers, dtype=float).T)
    d = [np.ascontiguousarray(v.T) - c for v in (v0, v1, v2)]
    # local coordinates, loc[vertex][axis]
    loc = [[dv[0] * rot[0, k] + dv[1] * rot[1, k] + dv[2] * rot[2, k] for k in range(3)] for dv in d]
    h = np.ascontiguousarray(np.asarray(half, dtype=float).T)

    alive = np.ones(n_pairs, dtype=bool)
    for k in range(3):
        x0, x1, x2 = loc[0][k], loc[1][k], loc[2][k]
        lo = np.minimum(np.minimum(x0, x1), x2)
        hi = np.maximum(np.maximum(x0, x1), x2)
        alive &= (lo <= h[k]) & (hi >= -h[k])
    idx = np.nonzero(alive)[0]
    if idx.size == 0:
        return alive
    (ax, ay, az), (bx, by, bz), (cx, cy, cz) = ([comp[idx] for comp in v] for v in loc)
    hx, hy, hz = h[0][idx], h[1][idx], h[2][idx]
    edges = ((bx - ax, by - ay, bz - az), (cx - bx, cy - by, cz - bz), (ax - cx, ay - cy, az - cz))
    keep = np.ones(idx.size, dtype=bool)

    # triangle normal
    (e0x, e0y, e0z), (e1x, e1y, e1z) = edges[0], edges[1]
    nx = e0y * e1z - e0z * e1y
    ny = e0z * e1x - e0x * e1z
    nz = e0x * e1y - e0y * e1x
    nlen = np.sqrt(nx * nx + ny * ny + nz * nz)
    ref = np.sqrt(e0x * e0x + e0y * e0y + e0z * e0z) * np.sqrt(e1x * e1x + e1y * e1y + e1z * e1z)
    r = hx * np.abs(nx) + hy * np.abs(ny) + hz * np.abs(nz)
    pa = nx * ax + ny * ay + nz * az
    pb = nx * bx + ny * by + nz * bz
    pc = nx * cx + ny * cy + nz * cz
    lo = np.minimum(np.minimum(pa, pb), pc)
    hi = np.maximum(np.maximum(pa, pb), pc)
    keep &= ~((nlen > AXIS_EPS * ref) & ((lo > r) | (hi < -r)))

    verts = ((ax, ay, az), (bx, by, bz), (cx, cy, cz))
    for ex, ey, ez in edges:
        elen = AXIS_EPS * np.sqrt(ex * ex + ey * ey + ez * ez)
        # axis = e x unit_k for k = x, y, z
        for (u1, u2, h1, h2, i1, i2, e1, e2) in (
                (ez, ey, hy, hz, 1, 2, ez, ey),
                (ex, ez, hz, hx, 2, 0, ex, ez),
                (ey, ex, hx, hy, 0, 1, ey, ex)):
            # projection of v onto axis: v[i1] * e1 - v[i2] * e2
            p = [v[i1] * e1 - v[i2] * e2 for v in verts]
            lo = np.minimum(np.minimum(p[0], p[1]), p[2])
            hi = np.maximum(np.maximum(p[0], p[1]), p[2])
            r = h1 * np.abs(u1) + h2 * np.abs(u2)
            usable = np.sqrt(u1 * u1 + u2 * u2) > elen
            keep &= ~(usable & ((lo > r) | (hi < -r)))
    out = np.zeros(n_pairs, dtype=bool)
    out[idx[keep]] = True
    return out


def closest_point_triangle(p, a, b, c):
    """Closest points on triangles to points, pairwise (Ericson's regions)."""
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = dot(ab, ap), dot(ac, ap)
    bp = p - b
    d3, d4 = dot(ab, bp), dot(ac, bp)
    cp = p - c
    d5, d6 = dot(ab, cp), dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def assign(mask, value):
        nonlocal done
        m = mask & ~done
        out[m] = value[m] if np.ndim(value) == 2 else value
        done |= m

    with np.errstate(divide="ignore", invalid="ignore"):
        assign((d1 <= 0) & (d2 <= 0), a)
        assign((d3 >= 0) & (d4 <= d3), b)
        assign((d6 >= 0) & (d5 <= d6), c)
        v = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[:, None] * ab)
        w = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[:, None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w[:, None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        v, w = vb * denom, vc * denom
        assign(np.ones(len(p), dtype=bool), a + v[:, None] * ab + w[:, None] * ac)
    return out
