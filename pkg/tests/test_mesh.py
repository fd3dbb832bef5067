import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluxlab.mesh import (
    aspect_ratio,
    build_structured,
    check_nested,
    coarse_parent,
    euler_characteristic,
    export_mesh,
    prolongation,
    read_mesh,
    refine,
    single_triangle,
)


def test_counts_n2():
    m = build_structured(2)
    assert (m.n_vertices, m.n_triangles) == (9, 8)
    assert m.h == pytest.approx(math.sqrt(2) / 2, abs=1e-15)


def test_single_cell_all_boundary():
    m = build_structured(1)
    assert (m.n_vertices, m.n_triangles) == (4, 2)
    assert m.boundary_mask.all()


def test_area_sums_to_one():
    assert build_structured(4).areas.sum() == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("bad", [0, -1, 2.5])
def test_rejects_bad_n_div(bad):
    with pytest.raises(ValueError):
        build_structured(bad)


@given(st.integers(1, 12))
@settings(max_examples=12, deadline=None)
def test_structural_invariants(n):
    m = build_structured(n)
    assert np.all(m.signed_areas > 0)
    # conforming: interior edges shared by two triangles, boundary edges by one
    t = m.triangles
    e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    assert set(counts.tolist()) <= {1, 2}
    assert m.h == pytest.approx(m.edge_lengths().max(), abs=1e-15)
    x, y = m.vertices.T
    on_bd = (x == 0) | (x == 1) | (y == 0) | (y == 1)
    assert np.array_equal(on_bd, m.boundary_mask)
    assert euler_characteristic(m) == 1


def test_refine_of_single_cell_matches_n2():
    r, m = refine(build_structured(1)), build_structured(2)
    key = lambda mesh: sorted(tuple(sorted(map(tuple, mesh.vertices[tri]))) for tri in mesh.triangles)
    assert key(r) == key(m)


@given(st.integers(1, 6))
@settings(max_examples=6, deadline=None)
def test_refine_halves_h_and_quadruples(n):
    m = build_structured(n)
    r = refine(m)
    assert r.h == pytest.approx(m.h / 2, abs=1e-14)
    assert refine(r).n_triangles == 32 * n * n
    assert aspect_ratio(r) == pytest.approx(aspect_ratio(m), abs=1e-12)
    # children lie inside their parent
    parent_of = coarse_parent(m, r)
    assert np.array_equal(parent_of, r.parent)


def test_refine_unstructured_keeps_parent_map():
    t = single_triangle([[0, 0], [1, 0], [0.3, 0.8]])
    r = refine(t)
    assert r.n_triangles == 4 and np.all(r.parent == 0)
    assert r.areas.sum() == pytest.approx(t.areas.sum(), rel=1e-14)
    assert np.all(r.signed_areas > 0)


def test_aspect_ratio_values():
    assert aspect_ratio(build_structured(5)) == pytest.approx(1 + math.sqrt(2), abs=1e-12)
    eq = single_triangle([[0, 0], [1, 0], [0.5, math.sqrt(3) / 2]])
    assert aspect_ratio(eq) == pytest.approx(2.0, abs=1e-12)


def test_linear_interpolation_exact_on_refinement():
    c, f = build_structured(4), build_structured(16)
    lin = lambda p: 0.3 + 2 * p[:, 0] - 1.5 * p[:, 1]
    fine_vals = prolongation(c, f) @ lin(c.vertices)
    assert np.max(np.abs(fine_vals - lin(f.vertices))) < 1e-13


def test_locate_barycentric(mesh8, rng):
    pts = rng.uniform(0, 1, size=(200, 2))
    tri, bary = mesh8.locate(pts)
    assert np.all(bary >= -1e-12)
    rebuilt = np.einsum("pk,pkd->pd", bary, mesh8.vertices[mesh8.triangles[tri]])
    assert np.allclose(rebuilt, pts, atol=1e-14)


def test_nesting_checks():
    assert check_nested(build_structured(4), build_structured(16)) == 4
    with pytest.raises(ValueError):
        check_nested(build_structured(3), build_structured(8))


def test_export_roundtrip(tmp_path):
    m = build_structured(3)
    path = tmp_path / "m.txt"
    export_mesh(m, path)
    assert path.read_text().splitlines()[0] == "16 18"
    back = read_mesh(path)
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.triangles, m.triangles)
    assert back.h == pytest.approx(m.h)


def test_mesh_is_read_only(mesh8):
    with pytest.raises(ValueError):
        mesh8.vertices[0, 0] = 5.0
