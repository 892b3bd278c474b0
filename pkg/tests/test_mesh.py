import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from graspqd import primitives, rotations
from graspqd.mesh import (AugmentationSpec, MeshError, TriMesh, augment, decimate, intersects_aabb_region,
                          load_mesh, raycast, sample_augmentation, sample_surface, save_mesh)

CUBE_OBJ = primitives.UNIT_CUBE_OBJ


@pytest.fixture
def cube():
    return primitives.box((1.0, 1.0, 1.0))


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


# --------------------------------------------------------------------------
# loading and digests

def test_unit_cube_obj(tmp_path):
    m = load_mesh(_write(tmp_path, "cube.obj", CUBE_OBJ))
    assert (m.n_vertices, m.n_triangles) == (8, 12)
    assert m.diagonal == pytest.approx(np.sqrt(3), abs=1e-12)
    assert m.metadata["dropped"] == 0


def test_stl_and_obj_share_digest(tmp_path):
    m = load_mesh(_write(tmp_path, "cube.obj", CUBE_OBJ))
    save_mesh(m, tmp_path / "cube.stl")
    assert load_mesh(tmp_path / "cube.stl").digest == m.digest


def test_internal_binary_round_trip(tmp_path, meshes):
    for name, m in meshes.items():
        save_mesh(m, tmp_path / f"{name}.qdgm")
        assert load_mesh(tmp_path / f"{name}.qdgm", recenter=False).digest == m.digest


def test_internal_binary_layout(tmp_path, cube):
    save_mesh(cube, tmp_path / "c.qdgm")
    data = (tmp_path / "c.qdgm").read_bytes()
    assert data[:4] == b"QDGM"
    assert len(data) == 4 + 4 + 8 + 8 * 24 + 8 + 4 * 36


def test_degenerate_triangle_dropped(tmp_path):
    text = CUBE_OBJ + "f 1 1 2\n"
    m = load_mesh(_write(tmp_path, "cube.obj", text))
    assert m.n_triangles == 12 and m.metadata["dropped"] == 1


def test_digest_ignores_listing_order(cube):
    perm = np.random.default_rng(3).permutation(cube.n_vertices)
    inv = np.argsort(perm)
    shuffled = TriMesh(cube.vertices[perm], inv[cube.triangles][::-1])
    rolled = TriMesh(cube.vertices, np.roll(cube.triangles, 1, axis=1))
    assert shuffled.digest == cube.digest == rolled.digest


@pytest.mark.parametrize("text", ["v 0 0 0\nf 1 2 3\n", "v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n", "v a b c\n"])
def test_malformed_or_empty_files(tmp_path, text):
    with pytest.raises(MeshError):
        load_mesh(_write(tmp_path, "bad.obj", text))


def test_missing_file_names_path(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.obj"):
        load_mesh(tmp_path / "nope.obj")


def test_mesh_invariants(meshes):
    for m in meshes.values():
        lo, hi = m.aabb
        assert m.triangles.max() < m.n_vertices
        assert np.all(m.areas >= 0) and m.areas.sum() > 0
        assert np.all(m.vertices >= lo) and np.all(m.vertices <= hi)
        assert np.allclose(np.linalg.norm(m.normals, axis=1), 1.0)


def test_mesh_is_immutable(cube):
    with pytest.raises(ValueError):
        cube.vertices[0, 0] = 5.0


# --------------------------------------------------------------------------
# augmentation

def test_augment_maps_vertices_about_center():
    m = TriMesh([[1.0, 2.0, 3.0], [-1.0, -2.0, -3.0], [1.0, -2.0, 0.0]], [[0, 1, 2]])
    out = augment(m, AugmentationSpec((0.5, 1.0, 1.5)))
    rel = out.vertices[0] - out.center
    assert np.allclose(rel, [0.5, 2.0, 4.5], atol=1e-15)
    assert np.array_equal(out.triangles, m.triangles)


def test_identity_augment_keeps_digest(cube):
    assert augment(cube, AugmentationSpec((1.0, 1.0, 1.0))).digest == cube.digest


def test_box_under_diagonal_scale(cube):
    out = augment(cube, AugmentationSpec((0.5, 1.5, 1.0)))
    assert np.allclose(out.extents, [0.5, 1.5, 1.0], atol=1e-15)


def test_augment_recomputes_normals():
    m = primitives.wedge(0.4, 1.0, 1.0)
    out = augment(m, AugmentationSpec((2.0, 1.0, 1.0)))
    n = np.cross(out.vertices[out.triangles[:, 1]] - out.vertices[out.triangles[:, 0]],
                 out.vertices[out.triangles[:, 2]] - out.vertices[out.triangles[:, 0]])
    assert np.allclose(out.normals, n / np.linalg.norm(n, axis=1, keepdims=True))


def test_non_positive_alpha_rejected():
    with pytest.raises(ValueError):
        AugmentationSpec((1.0, 0.0, 1.0))


alphas = st.tuples(*[st.floats(0.5, 1.5)] * 3)


@given(a=alphas, b=alphas)
@settings(max_examples=50)
def test_augment_composes(a, b):
    m = primitives.torus(0.035, 0.012, 12, 6)
    c = m.center
    two = augment(augment(m, AugmentationSpec(a), c), AugmentationSpec(b), c)
    one = augment(m, AugmentationSpec(tuple(x * y for x, y in zip(a, b))), c)
    assert np.allclose(two.vertices, one.vertices, rtol=1e-12, atol=1e-15)


@given(s=st.floats(0.5, 1.5))
@settings(max_examples=30)
def test_uniform_scale_scales_distances(s):
    m = primitives.icosphere(0.03, 1)
    out = augment(m, AugmentationSpec((s, s, s)))
    d0 = np.linalg.norm(m.vertices[:, None] - m.vertices[None], axis=-1)
    d1 = np.linalg.norm(out.vertices[:, None] - out.vertices[None], axis=-1)
    assert np.allclose(d1, s * d0, rtol=1e-12, atol=1e-16)


@given(seed=st.integers(0, 2**63 - 1))
@settings(max_examples=50)
def test_sample_augmentation_within_bounds(seed):
    spec = sample_augmentation(seed, 0.5, 1.5, "ref")
    assert all(0.5 <= a <= 1.5 for a in spec.alpha)
    assert spec == sample_augmentation(seed, 0.5, 1.5, "ref")


def test_sample_augmentation_degenerate_and_inverted():
    assert sample_augmentation(4, 1.0, 1.0).alpha == (1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        sample_augmentation(4, 1.5, 0.5)


# --------------------------------------------------------------------------
# surface sampling

def test_cube_face_fractions(cube):
    s = sample_surface(cube, 0, 60000)
    face = np.array([x.triangle_index // 2 for x in s])
    # triangles 2k, 2k+1 form one face of equal area, so the expectation is 1/6 each
    frac = np.bincount(face, minlength=6) / len(s)
    assert np.all(np.abs(frac - 1 / 6) <= 0.01)


def test_cube_triangle_frequency_chi_square(cube):
    s = sample_surface(cube, 1, 100000)
    counts = np.bincount([x.triangle_index for x in s], minlength=12)
    expected = cube.areas / cube.areas.sum() * len(s)
    assert chisquare(counts, expected).pvalue > 0.001


def test_samples_lie_on_their_triangle(meshes):
    m = meshes["torus"]
    for smp in sample_surface(m, 2, 500):
        a, b, c = (x[smp.triangle_index] for x in m.corners)
        # least-squares barycentric fit; residual is the off-plane distance
        lam, *_ = np.linalg.lstsq(np.c_[b - a, c - a], smp.point - a, rcond=None)
        assert np.linalg.norm(a + np.c_[b - a, c - a] @ lam - smp.point) < 1e-9
        assert lam.min() >= -1e-9 and lam.sum() <= 1 + 1e-9
        assert abs(np.linalg.norm(smp.normal) - 1) < 1e-9


def test_single_triangle_and_determinism():
    m = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    assert {s.triangle_index for s in sample_surface(m, 0, 100)} == {0}
    a, b = sample_surface(m, 9, 1)[0], sample_surface(m, 9, 1)[0]
    assert np.array_equal(a.point, b.point)
    with pytest.raises(ValueError):
        sample_surface(m, 0, 0)


# --------------------------------------------------------------------------
# ray casting

def test_ray_hits_cube_face(cube):
    hit = raycast(cube, (-2.0, 0.0, 0.0), (1.0, 0.0, 0.0))
    assert hit.distance == pytest.approx(1.5, abs=1e-12)
    assert np.allclose(hit.normal, [-1, 0, 0])
    assert raycast(cube, (-2.0, 0.0, 0.0), (1.0, 0.0, 0.0), 1.0) is None


def test_non_unit_direction_rejected(cube):
    with pytest.raises(ValueError):
        raycast(cube, (0, 0, 0), (2.0, 0.0, 0.0))


def _slab(origin, direction, lo, hi, max_dist):
    """Slab-test oracle for an axis-aligned box with open faces: entry distance or None.

    A ray lying in a face plane (origin on the boundary of a parallel slab)
    only skims the box and does not hit.
    """
    t0, t1 = 0.0, max_dist
    for k in range(3):
        if direction[k] == 0:
            if not lo[k] < origin[k] < hi[k]:
                return None
            continue
        a, b = sorted(((lo[k] - origin[k]) / direction[k], (hi[k] - origin[k]) / direction[k]))
        t0, t1 = max(t0, a), min(t1, b)
    return t0 if t0 <= t1 else None


def test_axis_rays_against_slab_oracle(cube):
    # lattice rays cover interior, face-plane and edge-line cases
    lo, hi = np.full(3, -0.5), np.full(3, 0.5)
    grid = [-0.7, -0.5, -0.25, 0.0, 0.25, 0.5, 0.7]
    for axis, sign in itertools.product(range(3), (-1.0, 1.0)):
        d = np.zeros(3)
        d[axis] = sign
        others = [k for k in range(3) if k != axis]
        for u, v in itertools.product(grid, grid):
            o = np.zeros(3)
            o[axis] = -2.0 * sign
            o[others[0]], o[others[1]] = u, v
            expected = _slab(o, d, lo, hi, 10.0)
            hit = raycast(cube, o, d, 10.0)
            assert (hit is None) == (expected is None), (o, d)
            if hit is not None:
                assert hit.distance == pytest.approx(expected, abs=1e-12)


def test_ray_in_face_plane_misses():
    tri = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    assert raycast(tri, (-1.0, 0.2, 0.0), (1.0, 0.0, 0.0), 5.0) is None


def test_tie_goes_to_lowest_triangle():
    v = [[0, -1, -1], [0, 1, -1], [0, 0, 1]]
    m = TriMesh(v + v, [[0, 1, 2], [3, 4, 5]])
    assert raycast(m, (-1.0, 0.0, 0.0), (1.0, 0.0, 0.0), 5.0).triangle_index == 0


@given(q=st.tuples(*[st.floats(-1, 1)] * 4).filter(lambda q: np.linalg.norm(q) > 0.1),
       t=st.tuples(*[st.floats(-1, 1)] * 3))
@settings(max_examples=40)
def test_ray_distance_rigid_invariant(q, t):
    m = primitives.torus(0.035, 0.012, 16, 8)
    q = rotations.canonical(np.array(q) / np.linalg.norm(q))
    o, d = np.array([-0.1, 0.003, 0.004]), np.array([1.0, 0.0, 0.0])
    h0 = raycast(m, o, d, 1.0)
    mt = m.transformed(q, t)
    d1 = rotations.rotate(q, d)
    h1 = raycast(mt, rotations.rotate(q, o) + np.array(t), d1 / np.linalg.norm(d1), 1.0)
    assert h0 is not None and h1 is not None
    assert abs(h0.distance - h1.distance) < 1e-9


# --------------------------------------------------------------------------
# box intersection

def _sat_box_box(c1, r1, h1, c2, r2, h2):
    """Separating-axis oracle for two oriented boxes over the 15 axes (closed)."""
    axes = [r1[:, i] for i in range(3)] + [r2[:, i] for i in range(3)]
    axes += [np.cross(r1[:, i], r2[:, j]) for i in range(3) for j in range(3)]
    for ax in axes:
        if np.linalg.norm(ax) < 1e-12:
            continue
        ra = np.abs(ax @ r1) @ h1
        rb = np.abs(ax @ r2) @ h2
        if abs(ax @ (c2 - c1)) > ra + rb + 1e-12:
            return False
    return True


def test_box_far_away_and_containing(cube):
    assert not intersects_aabb_region(cube, (5.0, 0.0, 0.0), (0.1, 0.1, 0.1))
    assert intersects_aabb_region(cube, (0.0, 0.0, 0.0), (2.0, 2.0, 2.0))


def test_box_touching_face_counts(cube):
    assert intersects_aabb_region(cube, (0.6, 0.0, 0.0), (0.1, 0.1, 0.1))
    assert not intersects_aabb_region(cube, (0.6 + 1e-9, 0.0, 0.0), (0.1, 0.1, 0.1))


def test_boxes_against_sat_oracle(cube):
    # the solid cube is itself a box; surface contact = solid overlap unless strictly inside
    rng = np.random.default_rng(5)
    eye = np.eye(3)
    n = 0
    for _ in range(600):
        q = rotations.random_unit(rng, 1)[0]
        r = rotations.to_matrix(q)
        h = rng.uniform(0.05, 0.4, 3)
        c = rng.uniform(-1.0, 1.0, 3)
        corners = c + (np.array(list(itertools.product([-1, 1], repeat=3))) * h) @ r.T
        inside = np.all(np.abs(corners) < 0.5)
        expected = _sat_box_box(np.zeros(3), eye, np.full(3, 0.5), c, r, h) and not inside
        assert intersects_aabb_region(cube, c, h, q) == expected
        n += expected
    assert 100 < n < 500


def test_zero_half_extent_rejected(cube):
    with pytest.raises(ValueError):
        intersects_aabb_region(cube, (0, 0, 0), (0.0, 1.0, 1.0))


# --------------------------------------------------------------------------
# decimation

def _clustering_oracle(mesh, cells):
    """Triangle count of vertex clustering on a cubic grid, written from scratch."""
    lo = mesh.vertices.min(axis=0)
    size = (mesh.vertices.max(axis=0) - lo).max() / cells
    key = [tuple(np.minimum(np.floor((v - lo) / size), cells).astype(int)) for v in mesh.vertices]
    ids = {k: i for i, k in enumerate(sorted(set(key)))}
    groups = {}
    for k, v in zip(key, mesh.vertices):
        groups.setdefault(ids[k], []).append(v)
    rep = {i: np.mean(g, axis=0) for i, g in groups.items()}
    seen = set()
    for t in mesh.triangles:
        a, b, c = (ids[key[i]] for i in t)
        if len({a, b, c}) < 3 or frozenset((a, b, c)) in seen:
            continue
        if 0.5 * np.linalg.norm(np.cross(rep[b] - rep[a], rep[c] - rep[a])) <= 1e-20:
            continue
        seen.add(frozenset((a, b, c)))
    return len(seen)


def test_decimate_icosphere():
    ico = primitives.icosphere(0.03, 4)
    assert ico.n_triangles == 5120
    out = decimate(ico, 320)
    assert out.n_triangles <= 320
    assert out.n_triangles == _clustering_oracle(ico, out.metadata["decimation_cells"])
    assert 0 < out.metadata["hausdorff"] < 0.03


def test_decimate_under_or_at_budget(cube):
    ico = primitives.icosphere(1.0, 1)
    assert ico.n_triangles == 80
    assert decimate(ico, 200) is ico
    assert decimate(cube, 12) is cube
    with pytest.raises(ValueError):
        decimate(cube, 3)
