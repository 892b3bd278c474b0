"""Compiled per-pose grasp evaluation.

Scalar ports of the vectorized kernels in :mod:`graspqd.geometry`, with the
same operation order so both routes agree bit for bit. One pose is handled
at a time, which keeps every result independent of batching. The numpy
route stays available as the reference implementation.
"""
import numpy as np
from numba import njit

from .geometry import AXIS_EPS, BARY_EPS, PARALLEL_EPS, PLANE_EPS

SLACK = 1e-9
NONE, BODY_COLLISION, MISSED_CONTACT, FRICTION_CONE_VIOLATION = 0, 1, 2, 3


@njit(cache=True, nogil=True)
def _to_local(v, cx, cy, cz, rot):
    d0, d1, d2 = v[0] - cx, v[1] - cy, v[2] - cz
    return (d0 * rot[0, 0] + d1 * rot[1, 0] + d2 * rot[2, 0],
            d0 * rot[0, 1] + d1 * rot[1, 1] + d2 * rot[2, 1],
            d0 * rot[0, 2] + d1 * rot[1, 2] + d2 * rot[2, 2])


@njit(cache=True, nogil=True)
def _box_hits_triangle(cx, cy, cz, rot, hx, hy, hz, a, b, c):
    ax, ay, az = _to_local(a, cx, cy, cz, rot)
    bx, by, bz = _to_local(b, cx, cy, cz, rot)
    qx, qy, qz = _to_local(c, cx, cy, cz, rot)
    if not (min(min(ax, bx), qx) <= hx and max(max(ax, bx), qx) >= -hx):
        return False
    if not (min(min(ay, by), qy) <= hy and max(max(ay, by), qy) >= -hy):
        return False
    if not (min(min(az, bz), qz) <= hz and max(max(az, bz), qz) >= -hz):
        return False
    e0x, e0y, e0z = bx - ax, by - ay, bz - az
    e1x, e1y, e1z = qx - bx, qy - by, qz - bz
    e2x, e2y, e2z = ax - qx, ay - qy, az - qz

    nx = e0y * e1z - e0z * e1y
    ny = e0z * e1x - e0x * e1z
    nz = e0x * e1y - e0y * e1x
    nlen = np.sqrt(nx * nx + ny * ny + nz * nz)
    ref = np.sqrt(e0x * e0x + e0y * e0y + e0z * e0z) * np.sqrt(e1x * e1x + e1y * e1y + e1z * e1z)
    r = hx * abs(nx) + hy * abs(ny) + hz * abs(nz)
    pa = nx * ax + ny * ay + nz * az
    pb = nx * bx + ny * by + nz * bz
    pc = nx * qx + ny * qy + nz * qz
    lo = min(min(pa, pb), pc)
    hi = max(max(pa, pb), pc)
    if nlen > AXIS_EPS * ref and (lo > r or hi < -r):
        return False

    vx = (ax, bx, qx)
    vy = (ay, by, qy)
    vz = (az, bz, qz)
    for j in range(3):
        if j == 0:
            ex, ey, ez = e0x, e0y, e0z
        elif j == 1:
            ex, ey, ez = e1x, e1y, e1z
        else:
            ex, ey, ez = e2x, e2y, e2z
        elen = AXIS_EPS * np.sqrt(ex * ex + ey * ey + ez * ez)
        for case in range(3):
            if case == 0:
                u1, u2, h1, h2 = ez, ey, hy, hz
                p0 = vy[0] * ez - vz[0] * ey
                p1 = vy[1] * ez - vz[1] * ey
                p2 = vy[2] * ez - vz[2] * ey
            elif case == 1:
                u1, u2, h1, h2 = ex, ez, hz, hx
                p0 = vz[0] * ex - vx[0] * ez
                p1 = vz[1] * ex - vx[1] * ez
                p2 = vz[2] * ex - vx[2] * ez
            else:
                u1, u2, h1, h2 = ey, ex, hx, hy
                p0 = vx[0] * ey - vy[0] * ex
                p1 = vx[1] * ey - vy[1] * ex
                p2 = vx[2] * ey - vy[2] * ex
            lo = min(min(p0, p1), p2)
            hi = max(max(p0, p1), p2)
            r = h1 * abs(u1) + h2 * abs(u2)
            if np.sqrt(u1 * u1 + u2 * u2) > elen and (lo > r or hi < -r):
                return False
    return True


@njit(cache=True, nogil=True)
def _obb_overlaps_aabb(center, rot, half, reach, bmin, bmax):
    # world axes
    for i in range(3):
        if center[i] - reach[i] - SLACK > bmax[i] or center[i] + reach[i] + SLACK < bmin[i]:
            return False
    # box axes; conservative, only used to prune
    m0, m1, m2 = 0.5 * (bmin[0] + bmax[0]), 0.5 * (bmin[1] + bmax[1]), 0.5 * (bmin[2] + bmax[2])
    r0, r1, r2 = 0.5 * (bmax[0] - bmin[0]), 0.5 * (bmax[1] - bmin[1]), 0.5 * (bmax[2] - bmin[2])
    d0, d1, d2 = m0 - center[0], m1 - center[1], m2 - center[2]
    for k in range(3):
        proj = d0 * rot[0, k] + d1 * rot[1, k] + d2 * rot[2, k]
        ext = r0 * abs(rot[0, k]) + r1 * abs(rot[1, k]) + r2 * abs(rot[2, k])
        if abs(proj) > half[k] + ext + SLACK:
            return False
    return True


@njit(cache=True, nogil=True)
def _box_collides(center, rot, half, v0, v1, v2, bvh, tri_min, tri_max, stack, buf):
    bvh_min, bvh_max, left, right, start, count, order = bvh
    reach = np.empty(3)
    for i in range(3):
        reach[i] = abs(rot[i, 0]) * half[0] + abs(rot[i, 1]) * half[1] + abs(rot[i, 2]) * half[2]
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        if not _obb_overlaps_aabb(center, rot, half, reach, bvh_min[node], bvh_max[node]):
            continue
        if left[node] < 0:
            for s in range(start[node], start[node] + count[node]):
                t = order[s]
                if _box_hits_triangle(center[0], center[1], center[2], rot, half[0], half[1], half[2],
                                      v0[t], v1[t], v2[t]):
                    return True
        else:
            stack[top] = right[node]
            stack[top + 1] = left[node]
            top += 2
    return False


@njit(cache=True, nogil=True)
def _slab(o, d, max_dist, bmin, bmax):
    """Conservative ray-segment versus AABB test (boxes padded by SLACK)."""
    t0 = 0.0
    t1 = max_dist
    for i in range(3):
        lo = bmin[i] - SLACK
        hi = bmax[i] + SLACK
        if abs(d[i]) < 1e-300:
            if o[i] < lo or o[i] > hi:
                return False
            continue
        ta = (lo - o[i]) / d[i]
        tb = (hi - o[i]) / d[i]
        if ta > tb:
            ta, tb = tb, ta
        # widen a little against rounding in the divisions
        pad = 1e-12 * (abs(ta) + abs(tb)) + 1e-15
        t0 = max(t0, ta - pad)
        t1 = min(t1, tb + pad)
        if t0 > t1:
            return False
    return True


@njit(cache=True, nogil=True)
def _ray_candidates(o, d, max_dist, bvh, tri_min, tri_max, stack, out):
    bvh_min, bvh_max, left, right, start, count, order = bvh
    n_out = 0
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        if not _slab(o, d, max_dist, bvh_min[node], bvh_max[node]):
            continue
        if left[node] < 0:
            for s in range(start[node], start[node] + count[node]):
                t = order[s]
                if _slab(o, d, max_dist, tri_min[t], tri_max[t]):
                    out[n_out] = t
                    n_out += 1
        else:
            stack[top] = right[node]
            stack[top + 1] = left[node]
            top += 2
    return n_out


@njit(cache=True, nogil=True)
def _cast(o, d, max_dist, v0, e1, e2, scale, normals, bvh, tri_min, tri_max, stack, buf,
          hit_t, hit_tri, g_lo, g_hi):
    """Nearest valid hit along one ray: ``(t, triangle)`` or ``(inf, -1)``."""
    n = _ray_candidates(o, d, max_dist, bvh, tri_min, tri_max, stack, buf)
    n_hit = 0
    n_graze = 0
    for j in range(n):
        k = buf[j]
        ax, ay, az = e1[k, 0], e1[k, 1], e1[k, 2]
        bx, by, bz = e2[k, 0], e2[k, 1], e2[k, 2]
        hx = d[1] * bz - d[2] * by
        hy = d[2] * bx - d[0] * bz
        hz = d[0] * by - d[1] * bx
        det = ax * hx + ay * hy + az * hz
        parallel = abs(det) <= PARALLEL_EPS * scale[k]
        inv = 1.0 / (1.0 if parallel else det)
        sx, sy, sz = o[0] - v0[k, 0], o[1] - v0[k, 1], o[2] - v0[k, 2]
        u = (sx * hx + sy * hy + sz * hz) * inv
        qx = sy * az - sz * ay
        qy = sz * ax - sx * az
        qz = sx * ay - sy * ax
        v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
        t = (bx * qx + by * qy + bz * qz) * inv
        if (not parallel and u >= -BARY_EPS and v >= -BARY_EPS and u + v <= 1 + BARY_EPS
                and t >= 0 and t <= max_dist):
            hit_t[n_hit] = t
            hit_tri[n_hit] = k
            n_hit += 1
        if parallel:
            nx, ny, nz = normals[k, 0], normals[k, 1], normals[k, 2]
            if abs(sx * nx + sy * ny + sz * nz) <= PLANE_EPS:
                lo, hi, empty = _graze_interval(o, d, max_dist, v0[k], e1[k], e2[k], normals[k])
                if not empty and lo <= hi:
                    g_lo[n_graze] = lo
                    g_hi[n_graze] = hi
                    n_graze += 1
    best_t = np.inf
    best_tri = -1
    for j in range(n_hit):
        t = hit_t[j]
        tol = 1e-12 * max(1.0, abs(t))
        skimmed = False
        for g in range(n_graze):
            if t >= g_lo[g] - tol and t <= g_hi[g] + tol:
                skimmed = True
                break
        if skimmed:
            continue
        if t < best_t or (t == best_t and hit_tri[j] < best_tri):
            best_t = t
            best_tri = hit_tri[j]
    return best_t, best_tri


@njit(cache=True, nogil=True)
def _graze_interval(o, d, max_dist, a, e1, e2, n):
    lo = 0.0
    hi = max_dist
    empty = False
    for k in range(3):
        if k == 0:
            px, py, pz = a[0], a[1], a[2]
            rx, ry, rz = a[0] + e1[0], a[1] + e1[1], a[2] + e1[2]
        elif k == 1:
            px, py, pz = a[0] + e1[0], a[1] + e1[1], a[2] + e1[2]
            rx, ry, rz = a[0] + e2[0], a[1] + e2[1], a[2] + e2[2]
        else:
            px, py, pz = a[0] + e2[0], a[1] + e2[1], a[2] + e2[2]
            rx, ry, rz = a[0], a[1], a[2]
        wx, wy, wz = rx - px, ry - py, rz - pz
        ix = n[1] * wz - n[2] * wy
        iy = n[2] * wx - n[0] * wz
        iz = n[0] * wy - n[1] * wx
        a0 = ix * (o[0] - px) + iy * (o[1] - py) + iz * (o[2] - pz)
        a1 = ix * d[0] + iy * d[1] + iz * d[2]
        tol = PLANE_EPS * np.sqrt(ix * ix + iy * iy + iz * iz)
        flat = abs(a1) <= tol
        if flat and a0 < -tol:
            empty = True
        if not flat:
            tb = -a0 / a1
            if a1 > 0:
                lo = max(lo, tb)
            else:
                hi = min(hi, tb)
    return lo, hi, empty


@njit(cache=True, nogil=True)
def evaluate(positions, rots, friction, box_centers, box_half, fan_o, fan_d, max_opening,
             v0, v1, v2, e1, e2, scale, normals, bvh, tri_min, tri_max,
             success, reason, width, points, contact_normals):
    """Fill the output arrays for every pose (see ``grasp.evaluate_poses``)."""
    n_tri = len(v0)
    stack = np.empty(2 * len(bvh[2]) + 2, dtype=np.int64)
    buf = np.empty(n_tri, dtype=np.int64)
    hit_t = np.empty(n_tri)
    hit_tri = np.empty(n_tri, dtype=np.int64)
    g_lo = np.empty(n_tri)
    g_hi = np.empty(n_tri)
    nf = fan_o.shape[1]
    reach = max_opening / 2
    c = np.empty(3)
    o = np.empty(3)
    d = np.empty(3)
    best_o = np.empty((2, 3))
    best_d = np.empty((2, 3))
    best_t = np.empty(2)
    best_k = np.empty(2, dtype=np.int64)
    for p in range(len(positions)):
        rot = rots[p]
        pos = positions[p]
        collided = False
        for b in range(len(box_centers)):
            lc = box_centers[b]
            for i in range(3):
                c[i] = pos[i] + (rot[i, 0] * lc[0] + rot[i, 1] * lc[1] + rot[i, 2] * lc[2])
            if _box_collides(c, rot, box_half[b], v0, v1, v2, bvh, tri_min, tri_max, stack, buf):
                collided = True
                break
        success[p] = False
        width[p] = 0.0
        if collided:
            reason[p] = BODY_COLLISION
            continue
        touched = True
        for f in range(2):
            for i in range(3):
                d[i] = rot[i, 0] * fan_d[f, 0] + rot[i, 1] * fan_d[f, 1] + rot[i, 2] * fan_d[f, 2]
            best_t[f] = np.inf
            best_k[f] = -1
            for r in range(nf):
                lo = fan_o[f, r]
                for i in range(3):
                    o[i] = pos[i] + (rot[i, 0] * lo[0] + rot[i, 1] * lo[1] + rot[i, 2] * lo[2])
                t, k = _cast(o, d, reach, v0, e1, e2, scale, normals, bvh, tri_min, tri_max, stack, buf,
                             hit_t, hit_tri, g_lo, g_hi)
                # strict comparison: the lowest ray index wins ties
                if k >= 0 and t < best_t[f]:
                    best_t[f] = t
                    best_k[f] = k
                    for i in range(3):
                        best_o[f, i] = o[i]
                        best_d[f, i] = d[i]
            if best_k[f] < 0:
                touched = False
        if not touched:
            reason[p] = MISSED_CONTACT
            continue
        mu = friction[p]
        cos_lim = 1.0 / np.sqrt(1.0 + mu * mu)
        in_cone = True
        for f in range(2):
            k = best_k[f]
            dd = normals[k, 0] * best_d[f, 0] + normals[k, 1] * best_d[f, 1] + normals[k, 2] * best_d[f, 2]
            if not (-dd >= cos_lim):
                in_cone = False
            for i in range(3):
                points[p, f, i] = best_o[f, i] + best_t[f] * best_d[f, i]
                contact_normals[p, f, i] = normals[k, i]
        width[p] = max_opening - best_t[0] - best_t[1]
        reason[p] = NONE if in_cone else FRICTION_CONE_VIOLATION
        success[p] = in_cone
