import numpy as np
import pytest
import shapely
from hypothesis import given, settings
from hypothesis import strategies as st

from psfuse.errors import ConfigurationError, GeometryError, OutOfDomainError
from psfuse.mesh import (
    AreaGrid,
    Mesh,
    assemble_fem,
    build_structured_mesh,
    dual_weights,
    grid_centres,
    project_areas,
    project_points,
    read_area_geometry,
    read_mesh,
    write_area_geometry,
    write_mesh,
)


def test_three_by_three_lattice():
    m = build_structured_mesh((0, 0, 1, 1), 0.5, 0.0)
    assert m.n_nodes == 9
    assert m.n_triangles == 8


def test_extended_bbox():
    m = build_structured_mesh((0, 0, 1, 1), 0.1, 0.2)
    assert np.allclose(m.extended_bbox, (-0.2, -0.2, 1.2, 1.2))


@pytest.mark.parametrize("bbox,edge,ext", [((0, 0, 1, 1), 0.1, 0.2), ((-3, 2, 5, 4.5), 0.37, 0.1), ((0, 0, 2, 1), 0.3, 0.0)])
def test_triangles_tile_extended_rectangle(bbox, edge, ext):
    m = build_structured_mesh(bbox, edge, ext)
    a = m.signed_areas()
    assert (a > 0).all()
    x0, y0, x1, y1 = m.extended_bbox
    # exact summation oracle
    assert np.isclose(np.sum(a), (x1 - x0) * (y1 - y0), rtol=1e-10)
    # node spacing never exceeds the requested edge
    L = m.lattice
    assert L.hx <= edge + 1e-12 and L.hy <= edge + 1e-12


def test_bad_mesh_arguments():
    with pytest.raises(ConfigurationError):
        build_structured_mesh((0, 0, 1, 1), 0.0)
    with pytest.raises(ConfigurationError):
        build_structured_mesh((0, 0, 1, 1), 0.1, -0.1)
    with pytest.raises((ConfigurationError, GeometryError)):
        build_structured_mesh((0, 0, 0, 1), 0.1)


def test_p1_element_integrals():
    m = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]), (0, 0, 1, 1))
    fem = assemble_fem(m)
    area = 0.5
    C = fem.mass_C.toarray()
    assert np.allclose(np.diag(C), area / 6)
    assert np.allclose(C[~np.eye(3, dtype=bool)], area / 12)
    # stiffness of the reference right triangle
    G_ref = 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]])
    assert np.allclose(fem.stiffness_G.toarray(), G_ref)


def test_degenerate_triangle_named():
    m = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0, 1]]), np.array([[0, 1, 3], [0, 1, 2]]), (0, 0, 1, 1))
    with pytest.raises(GeometryError, match="triangle 1"):
        assemble_fem(m)


def test_fem_identities(unit_mesh, irregular_mesh):
    for m in (unit_mesh, irregular_mesh):
        fem = m.fem()
        G, C = fem.stiffness_G, fem.mass_C
        assert abs(G - G.T).max() < 1e-14 and abs(C - C.T).max() < 1e-14
        assert np.abs(G @ np.ones(m.n_nodes)).max() < 1e-10
        x0, y0, x1, y1 = m.extended_bbox
        assert np.isclose(fem.mass_lumped.sum(), (x1 - x0) * (y1 - y0), rtol=1e-12)
        assert np.allclose(fem.mass_lumped, np.asarray(C.sum(axis=1)).ravel())
        assert np.linalg.eigvalsh(C.toarray()).min() > 0
        assert np.linalg.eigvalsh(G.toarray()).min() > -1e-10


def test_dual_weights_partition(unit_mesh, irregular_mesh):
    full = dual_weights(unit_mesh, clip_to=unit_mesh.extended_bbox)
    assert np.isclose(full.weights.sum(), 1.4 * 1.4, rtol=1e-10)
    # unclipped dual areas coincide with the lumped mass
    assert np.allclose(full.weights, unit_mesh.fem().mass_lumped, atol=1e-10)
    assert np.allclose(dual_weights(irregular_mesh, irregular_mesh.extended_bbox).weights,
                       irregular_mesh.fem().mass_lumped, atol=1e-10)
    clipped = unit_mesh.dual()
    assert np.isclose(clipped.weights.sum(), 1.0, rtol=1e-8)
    assert (clipped.weights >= 0).all()
    assert np.array_equal(clipped.integration_points, unit_mesh.nodes)


def test_dual_weights_zero_outside(unit_mesh):
    w = unit_mesh.dual().weights
    far = (unit_mesh.nodes < -0.1 + 1e-9).any(1) | (unit_mesh.nodes > 1.1 - 1e-9).any(1)
    assert far.any()
    assert (w[far] == 0).all()


def _uniform_diagonal_mesh(n, h):
    # every cell split along the same diagonal: each interior node touches 6 triangles
    xs = np.arange(n + 1) * h
    xx, yy = np.meshgrid(xs, xs)
    nodes = np.column_stack([xx.ravel(), yy.ravel()])
    tri = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            tri += [(a, a + 1, a + n + 2), (a, a + n + 2, a + n + 1)]
    return Mesh(nodes, np.array(tri), (0, 0, n * h, n * h))


def test_dual_weights_interior_equal():
    m = _uniform_diagonal_mesh(8, 0.125)
    w = dual_weights(m, m.extended_bbox).weights
    interior = ((m.nodes > 1e-9) & (m.nodes < 1 - 1e-9)).all(1)
    assert np.allclose(w[interior], 0.125**2, atol=1e-15)


def test_dual_weights_criss_cross_classes(unit_mesh):
    # alternating diagonals: nodes touch 8 or 4 triangles -> 4h^2/3 or 2h^2/3
    w = dual_weights(unit_mesh, unit_mesh.extended_bbox).weights
    interior = ((unit_mesh.nodes > -0.2 + 1e-9) & (unit_mesh.nodes < 1.2 - 1e-9)).all(1)
    assert np.allclose(np.unique(np.round(w[interior], 12)), [2 * 0.01 / 3, 4 * 0.01 / 3])


def test_dual_weights_against_shapely_clip(irregular_mesh):
    clip = (0.13, 0.27, 0.81, 0.66)
    got = dual_weights(irregular_mesh, clip).weights
    box = shapely.box(*clip)
    p = irregular_mesh.nodes[irregular_mesh.triangles]
    cen = p.mean(1)
    ref = np.zeros(irregular_mesh.n_nodes)
    for t, tri in enumerate(irregular_mesh.triangles):
        for k in range(3):
            a, b, c = p[t, k], p[t, (k + 1) % 3], p[t, (k + 2) % 3]
            q = shapely.Polygon([a, (a + b) / 2, cen[t], (a + c) / 2])
            ref[tri[k]] += q.intersection(box).area
    assert np.allclose(got, ref, atol=1e-12)
    assert np.isclose(got.sum(), (0.81 - 0.13) * (0.66 - 0.27))


def test_project_points_basis_properties(unit_mesh):
    A = project_points(unit_mesh, unit_mesh.nodes[[7, 40]]).A.toarray()
    assert np.allclose(A[0], np.eye(unit_mesh.n_nodes)[7])
    assert np.allclose(A[1], np.eye(unit_mesh.n_nodes)[40])
    cen = unit_mesh.centroids()[[3, 50]]
    A = project_points(unit_mesh, cen).A
    for r in range(2):
        row = A.getrow(r)
        assert row.nnz == 3 and np.allclose(row.data, 1 / 3)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-0.2, 1.2), st.floats(-0.2, 1.2)), min_size=1, max_size=30),
       st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_partition_of_unity_and_linear_exactness(pts, a, b, c):
    m = build_structured_mesh((0, 0, 1, 1), 0.1, 0.2)
    xy = np.array(pts)
    A = project_points(m, xy).A
    assert np.allclose(np.asarray(A.sum(axis=1)).ravel(), 1.0, atol=1e-12)
    assert A.min() >= 0
    assert np.diff(A.indptr).max() <= 3
    f = a + b * m.nodes[:, 0] + c * m.nodes[:, 1]
    assert np.allclose(A @ f, a + b * xy[:, 0] + c * xy[:, 1], atol=1e-10)


def test_lattice_and_generic_location_agree(unit_mesh):
    rng = np.random.default_rng(11)
    xy = rng.uniform(-0.2, 1.2, size=(500, 2))
    generic = Mesh(unit_mesh.nodes, unit_mesh.triangles, unit_mesh.domain_bbox)
    A1 = project_points(unit_mesh, xy).A.toarray()
    A2 = project_points(generic, xy).A.toarray()
    assert np.allclose(A1, A2, atol=1e-12)


def test_irregular_mesh_linear_exactness(irregular_mesh):
    rng = np.random.default_rng(5)
    xy = rng.uniform(0, 1, size=(300, 2))
    A = project_points(irregular_mesh, xy).A
    f = 2 - irregular_mesh.nodes[:, 0] + 3 * irregular_mesh.nodes[:, 1]
    assert np.allclose(A @ f, 2 - xy[:, 0] + 3 * xy[:, 1], atol=1e-10)


def test_out_of_domain_lists_rows(unit_mesh):
    with pytest.raises(OutOfDomainError) as ei:
        project_points(unit_mesh, [[0.5, 0.5], [2.0, 0.1], [0.3, 0.3], [-1, -1]])
    assert ei.value.indices == [1, 3]


def test_area_rows_equal_weights():
    m = build_structured_mesh((0, 0, 1, 1), 0.25, 0.0)
    # nodes inside [0.1, 0.6] x [0.1, 0.4]: x in {0.25, 0.5}, y = 0.25
    A = project_areas(m, [shapely.box(0.1, 0.1, 0.6, 0.4)]).A
    cols = A.indices
    assert len(cols) == 2
    assert np.allclose(A.data, 0.5)
    assert np.allclose(np.sort(m.nodes[cols][:, 0]), [0.25, 0.5])


def test_whole_domain_area_uniform(unit_mesh):
    A = project_areas(unit_mesh, [(0, 0, 1, 1)]).A
    inside = ((unit_mesh.nodes >= -1e-9) & (unit_mesh.nodes <= 1 + 1e-9)).all(1)
    assert A.nnz == inside.sum() == 121
    assert np.allclose(A.data, 1 / 121)
    assert A[:, np.flatnonzero(~inside)].nnz == 0


def test_grid_areas_partition_nodes(unit_mesh):
    for n in (2, 5, 10):
        A = project_areas(unit_mesh, AreaGrid(n, n, (0, 0, 1, 1))).A
        assert np.allclose(np.asarray(A.sum(axis=1)).ravel(), 1.0, atol=1e-12)
        # every node of the unit square is used by exactly one cell
        used = np.asarray((A != 0).sum(axis=0)).ravel()
        inside = ((unit_mesh.nodes >= -1e-9) & (unit_mesh.nodes <= 1 + 1e-9)).all(1)
        assert (used[inside] == 1).all() and (used[~inside] == 0).all()


def test_grid_tie_goes_to_lower_index():
    g = AreaGrid(2, 2, (0, 0, 1, 1))
    assert list(g.assign(np.array([[0.5, 0.25], [0.25, 0.5], [0.5, 0.5], [1.0, 1.0], [0.0, 0.0]]))) == [0, 0, 0, 3, 0]


def test_empty_area_fallback_warns():
    m = build_structured_mesh((0, 0, 1, 1), 0.25, 0.0)
    with pytest.warns(RuntimeWarning, match="no mesh node"):
        P = project_areas(m, [shapely.box(0.3, 0.3, 0.4, 0.4)])
    assert P.A.nnz == 1 and np.isclose(P.A.data[0], 1.0)
    assert np.allclose(m.nodes[P.A.indices[0]], [0.25, 0.25]) or np.allclose(m.nodes[P.A.indices[0]], [0.5, 0.5])
    assert P.warnings


def test_area_rows_invariant_under_relabelling():
    m = build_structured_mesh((0, 0, 1, 1), 0.2, 0.1)
    perm = np.random.default_rng(2).permutation(m.n_nodes)
    inv = np.argsort(perm)
    m2 = Mesh(m.nodes[perm], inv[m.triangles], m.domain_bbox)
    areas = [shapely.box(0.1, 0.0, 0.7, 0.55), shapely.Polygon([(0, 0), (1, 0), (0, 1)])]
    A1 = project_areas(m, areas).A.toarray()
    A2 = project_areas(m2, areas).A.toarray()
    assert np.allclose(A1, A2[:, inv])


def test_grid_centres_order():
    xy = grid_centres((0, 0, 1, 1), 4, 2)
    assert xy.shape == (8, 2)
    assert np.allclose(xy[0], [0.125, 0.25]) and np.allclose(xy[1], [0.375, 0.25]) and np.allclose(xy[4], [0.125, 0.75])


def test_mesh_round_trip(tmp_path, irregular_mesh):
    p = tmp_path / "mesh.txt"
    write_mesh(p, irregular_mesh)
    head = p.read_text().splitlines()[0].split()
    assert head == [str(irregular_mesh.n_nodes), str(irregular_mesh.n_triangles)]
    m2 = read_mesh(p, (0, 0, 1, 1))
    assert np.array_equal(m2.nodes, irregular_mesh.nodes)
    assert np.array_equal(m2.triangles, irregular_mesh.triangles)


def test_area_geometry_files(tmp_path):
    p = tmp_path / "g.txt"
    p.write_text("5 5 0 0 1 1\n")
    g = read_area_geometry(p)
    assert isinstance(g, AreaGrid) and (g.nx, g.ny) == (5, 5)
    q = tmp_path / "poly.txt"
    q.write_text("a: 0 0 1 0 1 1\nb: 0 0 1 1 0 1\n")
    ids, polys = read_area_geometry(q)
    assert ids == ["a", "b"] and np.isclose(polys[0].area, 0.5)
    r = tmp_path / "round.txt"
    write_area_geometry(r, (ids, polys))
    ids2, polys2 = read_area_geometry(r)
    assert ids2 == ids and all(a.equals(b) for a, b in zip(polys, polys2))
