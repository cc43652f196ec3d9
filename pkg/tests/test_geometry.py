import itertools

import numpy as np
import pytest

from spatialplan.geometry import (
    Corridor,
    InfeasibleRegionError,
    Polyhedron,
    box,
    contains,
    interior_point,
    overlap_point,
)


def unit_cube():
    return box(np.zeros(3), 0.5 * np.ones(3))


def enumerate_vertices(poly):
    """Brute-force dual description for small polytopes (test oracle)."""
    verts = []
    r = poly.n_faces
    for rows in itertools.combinations(range(r), 3):
        A = poly.A[list(rows)]
        if abs(np.linalg.det(A)) < 1e-10:
            continue
        v = np.linalg.solve(A, poly.b[list(rows)])
        if poly.margin(v) <= 1e-9:
            verts.append(v)
    return np.array(verts)


def random_polytope(rng, n_extra=6):
    # a box plus random slicing planes through a shrunken interior region
    poly = box(rng.uniform(-1, 1, 3), rng.uniform(0.5, 1.5, 3))
    center = interior_point(poly)
    A, b = [poly.A], [poly.b]
    for _ in range(n_extra):
        n = rng.standard_normal(3)
        n /= np.linalg.norm(n)
        offset = n @ center + rng.uniform(0.4, 1.2)
        A.append(n[None, :])
        b.append(np.array([offset]))
    return Polyhedron(np.vstack(A), np.concatenate(b))


def test_normalization_and_invariance(rng):
    A = np.vstack([np.eye(3), -np.eye(3)]) * 3.7
    b = np.concatenate([0.5 * np.ones(3), 0.5 * np.ones(3)]) * 3.7
    poly = Polyhedron(A, b)
    assert np.linalg.norm(poly.A, axis=1) == pytest.approx(np.ones(6))
    ref = unit_cube()
    for _ in range(50):
        p = rng.uniform(-1, 1, 3)
        assert poly.margin(p) == pytest.approx(ref.margin(p), abs=1e-12)


def test_contains_cube():
    cube = unit_cube()
    inside, margin = contains(cube, np.zeros(3))
    assert inside and margin == pytest.approx(-0.5)
    inside, margin = contains(cube, np.array([0.6, 0.0, 0.0]))
    assert not inside and margin == pytest.approx(0.1)


def test_contains_vs_vertex_oracle(rng):
    for _ in range(5):
        poly = random_polytope(rng)
        verts = enumerate_vertices(poly)
        assert len(verts) >= 4
        lo, hi = verts.min(axis=0), verts.max(axis=0)
        pts = rng.uniform(lo - 0.3, hi + 0.3, size=(200, 3))
        for p in pts:
            inside, _ = contains(poly, p, tol=1e-9)
            # inside iff p is in the convex hull of the vertices: test via
            # the same half-space data the hull satisfies, but recomputed
            # from scratch through margins of every face
            assert inside == bool(np.all(poly.A @ p - poly.b <= 1e-9))


def test_interior_point_cube_and_shifted():
    assert interior_point(unit_cube()) == pytest.approx(np.zeros(3), abs=1e-6)
    shifted = box(np.array([1.0, 0.0, 0.0]), 0.5 * np.ones(3))
    assert interior_point(shifted) == pytest.approx([1.0, 0.0, 0.0], abs=1e-6)


def test_interior_point_beats_sampling(rng):
    for _ in range(3):
        poly = random_polytope(rng)
        p_star = interior_point(poly)
        best_slack = -poly.margin(p_star)
        verts = enumerate_vertices(poly)
        lo, hi = verts.min(axis=0), verts.max(axis=0)
        samples = rng.uniform(lo, hi, size=(10_000, 3))
        slacks = -poly.margins(samples)
        assert best_slack >= slacks.max() - 1e-6


def test_overlap_point():
    a = unit_cube()
    b_poly = box(np.array([0.5, 0.0, 0.0]), 0.5 * np.ones(3))
    p = overlap_point(a, b_poly)
    assert 0.0 < p[0] < 0.5
    assert a.margin(p) < 0 and b_poly.margin(p) < 0

    same = overlap_point(a, unit_cube())
    assert same == pytest.approx(np.zeros(3), abs=1e-6)

    disjoint = box(np.array([5.0, 0.0, 0.0]), 0.5 * np.ones(3))
    with pytest.raises(InfeasibleRegionError):
        overlap_point(a, disjoint)


def test_empty_interior_rejected():
    # two opposing faces squeezed to a plane
    A = np.vstack([np.eye(3), -np.eye(3)])
    b = np.array([0.5, 0.5, 0.0, 0.5, 0.5, 0.0])
    with pytest.raises(InfeasibleRegionError):
        interior_point(Polyhedron(A, b))


def test_corridor_validation():
    polys = [unit_cube(), box(np.array([0.7, 0, 0]), 0.5 * np.ones(3))]
    corridor = Corridor(polys, start=np.zeros(3), goal=np.array([0.9, 0, 0]))
    corridor.validate()

    broken = Corridor(
        [unit_cube(), box(np.array([2.0, 0, 0]), 0.5 * np.ones(3))],
        start=np.zeros(3),
        goal=np.array([2.0, 0, 0]),
    )
    with pytest.raises(InfeasibleRegionError):
        broken.validate()

    bad_start = Corridor(polys, start=np.array([5.0, 0, 0]), goal=np.array([0.9, 0, 0]))
    with pytest.raises(InfeasibleRegionError):
        bad_start.validate()


def test_corridor_json_roundtrip(tmp_path):
    polys = [unit_cube(), box(np.array([0.7, 0, 0]), 0.5 * np.ones(3))]
    corridor = Corridor(polys, start=np.zeros(3), goal=np.array([0.9, 0, 0]))
    path = tmp_path / "corridor.json"
    corridor.save_json(path)
    loaded = Corridor.load_json(path)
    assert loaded.m == 2
    assert loaded.start == pytest.approx(corridor.start)
    assert loaded.polys[1].b == pytest.approx(corridor.polys[1].b)

    with pytest.raises(ValueError):
        Corridor.from_dict({"start": [0, 0, 0]})


def test_union_margins():
    polys = [unit_cube(), box(np.array([0.8, 0, 0]), 0.5 * np.ones(3))]
    corridor = Corridor(polys, start=np.zeros(3), goal=np.array([0.8, 0, 0]))
    pts = np.array([[0.0, 0, 0], [0.8, 0, 0], [2.0, 0, 0]])
    margins = corridor.union_margins(pts)
    assert margins[0] < 0 and margins[1] < 0 and margins[2] > 0
