import numpy as np
import pytest

from afvm.dual import build_dual, interpolate_dual
from afvm.mesh import build_triangulation, total_area
from afvm.problems import square_initial_mesh
from afvm.quadrature import integrate_segment, integrate_triangle
from afvm.refine import refine

UNIT_TRI_MESH = build_triangulation([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])


def crisscross_square():
    return build_triangulation(
        [[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]],
        [[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]],
    )


def random_meshes(count=5, seed=17):
    rng = np.random.default_rng(seed)
    meshes = []
    mesh = square_initial_mesh()
    for _ in range(count):
        marked = rng.choice(mesh.n_elements, size=max(1, mesh.n_elements // 3), replace=False)
        mesh = refine(mesh, marked).new_mesh
        meshes.append(mesh)
    return meshes


def test_box_areas_unit_triangle():
    d = build_dual(UNIT_TRI_MESH)
    assert np.allclose(d.box_area, 1 / 6, atol=1e-15)


def test_box_areas_partition_every_mesh():
    for mesh in random_meshes():
        d = build_dual(mesh)
        assert d.box_area.sum() == pytest.approx(total_area(mesh), rel=1e-12)
        # barycentric dual: each element gives each of its vertices |T|/3
        p = mesh.vertices[mesh.elements]
        areas = 0.5 * np.abs(
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
        )
        expected = np.zeros(mesh.n_nodes)
        np.add.at(expected, mesh.elements.ravel(), np.repeat(areas / 3, 3))
        assert np.abs(d.box_area - expected).max() <= 1e-12 * areas.max()


def test_segment_length_value():
    d = build_dual(UNIT_TRI_MESH)
    for seg in d.segments(0):
        assert seg.length == pytest.approx(0.372678, abs=1e-6)
        assert seg.length == pytest.approx(np.sqrt(5) / 6, rel=1e-14)


def test_six_segments_per_element():
    mesh = crisscross_square()
    d = build_dual(mesh)
    counts = np.bincount(d.seg_owner, minlength=mesh.n_elements)
    assert (counts == 6).all()


def test_normals_perpendicular_and_unit():
    d = build_dual(crisscross_square())
    direction = d.seg_points[:, 1] - d.seg_points[:, 0]
    dots = (direction * d.seg_normal).sum(axis=1)
    assert np.abs(dots).max() < 1e-14
    assert np.abs(np.linalg.norm(d.seg_normal, axis=1) - 1).max() < 1e-14


def test_shared_segment_has_flipped_normal():
    mesh = crisscross_square()
    d = build_dual(mesh)
    # group segments by geometric key (owner element and unordered endpoints)
    seen = {}
    flipped = 0
    for i in range(d.seg_node.size):
        pts = d.seg_points[i]
        key = (int(d.seg_owner[i]), tuple(sorted(map(tuple, pts.tolist()))))
        if key in seen:
            j = seen[key]
            assert np.allclose(d.seg_normal[i], -d.seg_normal[j])
            assert d.seg_node[i] != d.seg_node[j]
            flipped += 1
        else:
            seen[key] = i
    assert flipped == 3 * mesh.n_elements


def test_interior_box_flux_closes():
    mesh = crisscross_square()
    d = build_dual(mesh)
    total = np.zeros(2)
    for seg in d.segments(4):
        total += seg.length * seg.unit_normal
    assert np.abs(total).max() < 1e-14


def test_interpolation_of_hat_preserves_element_mean():
    values = np.array([1.0, 0.0, 0.0])
    v = interpolate_dual(UNIT_TRI_MESH, values)
    d = build_dual(UNIT_TRI_MESH)
    integral = float((d.box_area * values).sum())
    assert integral == pytest.approx(1 / 6, rel=1e-14)
    # equals the integral of the hat itself
    hat = lambda p: 1.0 - p[:, 0] - p[:, 1]
    assert integral == pytest.approx(
        integrate_triangle(hat, UNIT_TRI_MESH.vertices, 2), rel=1e-13
    )


def test_interpolation_of_constant():
    mesh = crisscross_square()
    v = interpolate_dual(mesh, np.full(mesh.n_nodes, 3.25))
    pts = np.array([[0.1, 0.2], [0.5, 0.51], [0.9, 0.4], [0.3, 0.8]])
    assert np.allclose(v(pts), 3.25)


def test_interpolation_length_mismatch():
    with pytest.raises(ValueError):
        interpolate_dual(UNIT_TRI_MESH, np.zeros(5))


def test_element_mean_orthogonality_random_functions():
    rng = np.random.default_rng(23)
    for mesh in random_meshes():
        d = build_dual(mesh)
        p = mesh.vertices[mesh.elements]
        areas = 0.5 * np.abs(
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
        )
        for _ in range(20):
            vals = rng.normal(size=mesh.n_nodes)
            scale = np.abs(vals).max()
            # exact integral of the P1 function minus the box-wise integral
            lin = areas * vals[mesh.elements].mean(axis=1)
            boxwise = (areas / 3)[:, None] * vals[mesh.elements]
            defect = np.abs(lin - boxwise.sum(axis=1))
            assert (defect <= 1e-13 * areas * max(scale, 1.0)).all()


def test_facet_mean_orthogonality_by_gauss():
    rng = np.random.default_rng(29)
    mesh = random_meshes(count=2)[-1]
    coeffs = rng.normal(size=3)
    linear = lambda p: coeffs[0] + coeffs[1] * p[:, 0] + coeffs[2] * p[:, 1]
    nodal = linear(mesh.vertices)
    interp = interpolate_dual(mesh, nodal)
    for e in rng.choice(mesh.n_edges, size=10, replace=False):
        a, b = mesh.vertices[mesh.edges[e]]
        mid = 0.5 * (a + b)
        va, vb = nodal[mesh.edges[e]]
        # I*v is constant on each half of the edge (midpoint splits the boxes)
        int_v = integrate_segment(linear, np.stack([a, b]), 2)
        int_iv = integrate_segment(lambda p: np.full(p.shape[0], va), np.stack([a, mid]), 2)
        int_iv += integrate_segment(lambda p: np.full(p.shape[0], vb), np.stack([mid, b]), 2)
        assert int_v - int_iv == pytest.approx(0.0, abs=1e-13 * max(1.0, abs(int_v)))


def test_hat_value_by_box_membership():
    v = interpolate_dual(UNIT_TRI_MESH, np.array([1.0, 0.0, 0.0]))
    pts = np.array([[0.05, 0.05], [0.7, 0.1], [0.1, 0.7]])
    assert np.allclose(v(pts), [1.0, 0.0, 0.0])


def test_boundary_boxes_flagged():
    mesh = crisscross_square()
    d = build_dual(mesh)
    assert d.node_is_interior.sum() == 1
    assert d.node_is_interior[4]
