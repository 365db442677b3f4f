import numpy as np
import pytest

from qtdg.mesh2d import (
    BoundaryTags,
    Mesh2D,
    MeshFormatError,
    NonConvexElementError,
    classify_boundary,
    lshape_tri,
    quality,
    read_mesh,
    refine,
    unit_square_tri,
    write_mesh,
)

RNG = np.random.default_rng(20240817)


def _incenter_radius(pts):
    # independent triangle-inradius oracle: distance from the incenter to an edge
    a = np.hypot(*(pts[2] - pts[1]))
    b = np.hypot(*(pts[0] - pts[2]))
    c = np.hypot(*(pts[1] - pts[0]))
    center = (a * pts[0] + b * pts[1] + c * pts[2]) / (a + b + c)
    t = pts[1] - pts[0]
    n = np.array([t[1], -t[0]]) / np.hypot(*t)
    return abs(float(n @ (center - pts[0])))


# ---------------------------------------------------------------------------
# generators


def test_unit_square_one_cell_counts():
    mesh = unit_square_tri(1)
    assert mesh.n_elements == 2
    assert len(mesh.facets) == 5
    assert len(mesh.boundary_facets()) == 4
    assert len(mesh.interior_facets()) == 1
    assert mesh.vertices.shape == (4, 2)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_unit_square_counts_and_area(n):
    mesh = unit_square_tri(n)
    assert mesh.n_elements == 2 * n * n
    assert mesh.vertices.shape[0] == (n + 1) ** 2
    assert mesh.areas.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.allclose(mesh.areas, 0.5 / n**2)
    assert np.allclose(mesh.diameters, np.sqrt(2.0) / n)


def test_unit_square_boundary_tags():
    mesh = unit_square_tri(2)
    tags = {}
    for fid in mesh.boundary_facets():
        f = mesh.facets[fid]
        tags.setdefault(f.tag, 0)
        tags[f.tag] += 1
    assert tags == {"left": 2, "right": 2, "bottom": 2, "top": 2}


def test_facet_normals_unit_and_outward():
    mesh = unit_square_tri(3)
    for f in mesh.facets:
        assert np.hypot(*f.normal) == pytest.approx(1.0, abs=1e-14)
        # midpoint nudged along the normal must leave the left element
        probe = f.midpoint + 1e-6 * f.normal
        poly = mesh.element_vertices(f.left)
        k = poly.shape[0]
        inside = True
        for a in range(k):
            t = poly[(a + 1) % k] - poly[a]
            rel = probe - poly[a]
            inside &= t[0] * rel[1] - t[1] * rel[0] >= 0
        assert not inside
        if f.right is None:
            assert mesh.locate(probe[None, :])[0] == -1


def test_outward_normal_sums_to_zero_per_element():
    mesh = unit_square_tri(2)
    for e in range(mesh.n_elements):
        total = np.zeros(2)
        for fid in mesh.elem_facets[e]:
            f = mesh.facets[fid]
            sign = 1.0 if f.left == e else -1.0
            total += sign * f.length * f.normal
        assert np.allclose(total, 0.0, atol=1e-14)


def test_lshape_counts_and_tags():
    mesh = lshape_tri(2)
    assert mesh.n_elements == 6
    assert mesh.vertices.shape[0] == 8
    assert mesh.areas.sum() == pytest.approx(0.75, abs=1e-14)
    tags = sorted(mesh.facets[fid].tag for fid in mesh.boundary_facets())
    assert tags == sorted(
        ["bottom", "right", "right", "top", "top", "left", "step_v", "step_h"]
    )
    with pytest.raises(ValueError):
        lshape_tri(3)
    with pytest.raises(ValueError):
        lshape_tri(0)


def test_lshape_excludes_corner():
    mesh = lshape_tri(4)
    assert mesh.areas.sum() == pytest.approx(0.75, abs=1e-14)
    assert mesh.locate(np.array([[0.25, 0.25]]))[0] == -1
    assert mesh.locate(np.array([[0.75, 0.25]]))[0] >= 0


# ---------------------------------------------------------------------------
# construction validation


def test_rejects_clockwise_element():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(MeshFormatError):
        Mesh2D(verts, [(0, 2, 1)])


def test_rejects_nonconvex_quad():
    verts = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 0.5], [2.0, 2.0]])
    with pytest.raises(NonConvexElementError):
        Mesh2D(verts, [(0, 1, 2, 3)])


def test_rejects_overshared_edge():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [0.5, -1.0], [1.5, 1.0]])
    with pytest.raises(MeshFormatError):
        Mesh2D(verts, [(0, 1, 2), (0, 1, 4), (3, 1, 0)])


def test_rejects_degenerate_and_out_of_range():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(MeshFormatError):
        Mesh2D(verts, [(0, 1, 1)])
    with pytest.raises(MeshFormatError):
        Mesh2D(verts, [(0, 1, 5)])


# ---------------------------------------------------------------------------
# geometry


def test_triangle_geometry_reference():
    mesh = unit_square_tri(1)
    # first triangle (0,0)-(1,0)-(1,1)
    assert mesh.areas[0] == pytest.approx(0.5)
    assert mesh.diameters[0] == pytest.approx(np.sqrt(2.0))
    assert mesh.perimeters[0] == pytest.approx(2.0 + np.sqrt(2.0))
    assert np.allclose(mesh.centroids[0], [2.0 / 3.0, 1.0 / 3.0])
    rho = mesh.inradius(0)
    assert rho == pytest.approx(2.0 * 0.5 / (2.0 + np.sqrt(2.0)), rel=1e-14)


def test_triangle_inradius_matches_incenter_oracle():
    for _ in range(20):
        pts = RNG.uniform(-1.0, 1.0, size=(3, 2))
        x, y = pts[:, 0], pts[:, 1]
        if 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)) < 0.05:
            continue
        mesh = Mesh2D(pts, [(0, 1, 2)])
        assert mesh.inradius(0) == pytest.approx(_incenter_radius(pts), rel=1e-12)


def test_quad_inradius_chebyshev():
    square = Mesh2D(
        np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]), [(0, 1, 2, 3)]
    )
    assert square.inradius(0) == pytest.approx(0.5, abs=1e-9)
    rect = Mesh2D(
        np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [0.0, 1.0]]), [(0, 1, 2, 3)]
    )
    assert rect.inradius(0) == pytest.approx(0.5, abs=1e-9)


def test_locate():
    mesh = unit_square_tri(2)
    pts = np.array([[0.1, 0.05], [0.9, 0.95], [1.5, 0.5], [-0.1, 0.2]])
    found = mesh.locate(pts)
    assert found[2] == -1 and found[3] == -1
    for k in (0, 1):
        e = found[k]
        assert e >= 0
        poly = mesh.element_vertices(e)
        for a in range(3):
            t = poly[(a + 1) % 3] - poly[a]
            rel = pts[k] - poly[a]
            assert t[0] * rel[1] - t[1] * rel[0] >= -1e-12


# ---------------------------------------------------------------------------
# refinement


def test_refine_counts_parent_and_area():
    mesh = unit_square_tri(2)
    fine = refine(mesh)
    assert fine.n_elements == 4 * mesh.n_elements
    assert fine.parent.shape == (fine.n_elements,)
    assert fine.areas.sum() == pytest.approx(1.0, abs=1e-14)
    for child in range(fine.n_elements):
        parent = fine.parent[child]
        assert fine.areas[child] == pytest.approx(mesh.areas[parent] / 4.0)
        # child centroid lies inside the parent
        assert mesh.locate(fine.centroids[child][None, :])[0] == parent
    assert np.allclose(fine.diameters, mesh.diameters[fine.parent] / 2.0)


def test_refine_inherits_boundary_tags():
    mesh = lshape_tri(2)
    fine = refine(mesh)
    coarse_tags = sorted(mesh.facets[f].tag for f in mesh.boundary_facets())
    fine_tags = sorted(fine.facets[f].tag for f in fine.boundary_facets())
    assert fine_tags == sorted(coarse_tags * 2)
    assert len(fine.boundary_facets()) == 2 * len(mesh.boundary_facets())


def test_refine_matches_generator():
    fine = refine(unit_square_tri(1))
    direct = unit_square_tri(2)
    assert fine.n_elements == direct.n_elements
    assert fine.areas.sum() == pytest.approx(direct.areas.sum())
    assert quality(fine)["r_star"] == pytest.approx(quality(direct)["r_star"])


def test_refine_rejects_quads():
    square = Mesh2D(
        np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]), [(0, 1, 2, 3)]
    )
    with pytest.raises(MeshFormatError):
        refine(square)


# ---------------------------------------------------------------------------
# quality


def test_quality_structured_square():
    q = quality(unit_square_tri(3))
    assert q["r_star"] == pytest.approx((np.sqrt(2.0) - 1.0) / 2.0, rel=1e-12)
    assert q["C_g"] == pytest.approx(np.sqrt(2.0), rel=1e-12)
    assert q["N_partial"] == 3
    assert q["chunkiness_ok"]


def test_chunkiness_equality_for_triangles():
    # h_E |dE| = (2 / r_E) |E| holds with equality on triangles
    for _ in range(10):
        pts = RNG.uniform(0.0, 1.0, size=(3, 2))
        x, y = pts[:, 0], pts[:, 1]
        if 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)) < 0.02:
            continue
        mesh = Mesh2D(pts, [(0, 1, 2)])
        r_e = mesh.inradius(0) / mesh.diameters[0]
        lhs = mesh.diameters[0] * mesh.perimeters[0]
        rhs = (2.0 / r_e) * mesh.areas[0]
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_quality_quad():
    square = Mesh2D(
        np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]), [(0, 1, 2, 3)]
    )
    q = quality(square)
    assert q["r_star"] == pytest.approx(0.5 / np.sqrt(2.0), abs=1e-9)
    assert q["N_partial"] == 4
    assert q["chunkiness_ok"]  # h P = 4 sqrt(2) < (2/r) A = 2 sqrt(2) / 0.3535... = 8


# ---------------------------------------------------------------------------
# boundary classification


def test_classify_all_dirichlet_inflow_outflow():
    mesh = unit_square_tri(2)
    tags = classify_boundary(mesh, ["1", "0"])
    assert isinstance(tags, BoundaryTags)
    assert tags.dirichlet == frozenset(mesh.boundary_facets())
    assert tags.neumann == frozenset()
    for fid in tags.inflow:
        assert mesh.facets[fid].tag == "left"
    assert len(tags.inflow) == 2
    assert tags.inflow | tags.outflow == tags.dirichlet
    # beta . n = 0 on top/bottom counts as outflow
    for fid in tags.outflow:
        assert mesh.facets[fid].tag in ("right", "top", "bottom")


def test_classify_dirichlet_subset_and_warning():
    mesh = unit_square_tri(1)
    with pytest.warns(UserWarning, match="inflow"):
        tags = classify_boundary(mesh, ["1", "0"], dirichlet_tags={"right"})
    assert len(tags.dirichlet) == 1
    assert len(tags.neumann) == 3
    tags = classify_boundary(mesh, ["1", "0"], dirichlet_tags={"left", "top", "bottom"})
    assert len(tags.neumann) == 1


def test_classify_requires_dirichlet():
    mesh = unit_square_tri(1)
    with pytest.raises(ValueError):
        classify_boundary(mesh, ["1", "0"], dirichlet_tags={"no-such-tag"})


def test_classify_variable_field_and_sign_change_warning():
    mesh = unit_square_tri(1)
    # beta = (0, x1 - 0.75): on the bottom edge beta.n = 0.75 - x1 changes sign
    with pytest.warns(UserWarning, match="changes sign"):
        classify_boundary(mesh, ["0", "x1 - 0.75"], check_points=5)
    tags = classify_boundary(mesh, ["0", "x1 - 0.75"])
    bottom = [f for f in mesh.boundary_facets() if mesh.facets[f].tag == "bottom"]
    assert bottom[0] in tags.outflow  # midpoint value 0.25 > 0


def test_classify_zero_field():
    mesh = unit_square_tri(1)
    tags = classify_boundary(mesh, None)
    assert tags.inflow == frozenset()
    assert tags.outflow == frozenset(mesh.boundary_facets())


# ---------------------------------------------------------------------------
# file I/O


def test_roundtrip(tmp_path):
    mesh = lshape_tri(2)
    path = tmp_path / "mesh.txt"
    write_mesh(mesh, path)
    back = read_mesh(path)
    assert np.allclose(back.vertices, mesh.vertices)
    assert back.elements == mesh.elements
    tags = lambda m: sorted(
        (m.facets[f].va, m.facets[f].vb, m.facets[f].tag) for f in m.boundary_facets()
    )
    assert tags(back) == tags(mesh)


def test_read_quad_mesh(tmp_path):
    path = tmp_path / "quad.txt"
    path.write_text(
        "# one square\n"
        "2 4 1 4\n"
        "0.0 0.0\n1.0 0.0\n1.0 1.0\n0.0 1.0\n"
        "4 0 1 2 3\n"
        "0 1 bottom\n1 2 right\n2 3 top\n3 0 left\n"
    )
    mesh = read_mesh(path)
    assert mesh.n_elements == 1
    assert mesh.areas[0] == pytest.approx(1.0)
    assert {mesh.facets[f].tag for f in mesh.boundary_facets()} == {
        "bottom",
        "right",
        "top",
        "left",
    }


@pytest.mark.parametrize(
    "content, match",
    [
        ("", "empty"),
        ("2 1 0\n", "header"),
        ("3 3 1 0\n0 0\n1 0\n0 1\n3 0 1 2\n", "d=3"),
        ("2 3 1 0\n0 0\n1 0\n0 1\n", "content lines"),
        ("2 3 1 0\n0 0\n1 0\n0 1\n5 0 1 2 0 1\n", "k=5"),
        ("2 3 1 0\n0 0\nnope 0\n0 1\n3 0 1 2\n", "coordinates"),
        ("2 3 1 0\n0 0\n1 0\n0 1\n3 0 1 7\n", "out-of-range"),
        ("2 3 1 0\n0 0\n0 1\n1 0\n3 0 1 2\n", "counter-clockwise"),
    ],
)
def test_read_errors(tmp_path, content, match):
    path = tmp_path / "bad.txt"
    path.write_text(content)
    with pytest.raises(MeshFormatError, match=match):
        read_mesh(path)


def test_untagged_boundary_reads_as_none(tmp_path):
    path = tmp_path / "untagged.txt"
    path.write_text("2 3 1 1\n0 0\n1 0\n0 1\n3 0 1 2\n0 1 -\n")
    mesh = read_mesh(path)
    assert all(mesh.facets[f].tag is None for f in mesh.boundary_facets())
