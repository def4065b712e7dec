"""Barycentric dual mesh: control volumes around nodes, built per element.

Inside an element, the box of vertex ``a`` is the quadrilateral bounded by
the two adjacent edge midpoints and the centroid.  Its internal boundary (the
part not on the element edges) consists of two straight flux segments, each
running between an edge midpoint and the centroid.  Segments are stored per
(element, vertex) pair; polygon stitching is never needed because flux
assembly only uses segment-local quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from afvm.mesh import Triangulation


@dataclass(frozen=True)
class FluxSegment:
    """One straight piece of a control-volume boundary inside one element."""

    endpoints: np.ndarray
    owner_element: int
    unit_normal: np.ndarray
    length: float


@dataclass(frozen=True)
class DualMesh:
    """Control volumes of a triangulation, in flat per-segment arrays.

    The boxes of boundary nodes are constructed too (their areas complete the
    partition of the domain) but are flagged non-interior and excluded from
    the finite volume test space.

    Segment arrays have one entry per (element, vertex incident to segment)
    pair, i.e. 6 per element; ``seg_node`` is the node whose box the segment
    bounds, and ``seg_normal`` points out of that box.
    """

    mesh: Triangulation
    box_area: np.ndarray
    node_is_interior: np.ndarray
    seg_node: np.ndarray
    seg_owner: np.ndarray
    seg_points: np.ndarray
    seg_normal: np.ndarray
    seg_length: np.ndarray

    def segments(self, node_id: int) -> list[FluxSegment]:
        """Flux segments bounding the box of one node."""
        idx = np.flatnonzero(self.seg_node == node_id)
        return [
            FluxSegment(
                endpoints=self.seg_points[i].copy(),
                owner_element=int(self.seg_owner[i]),
                unit_normal=self.seg_normal[i].copy(),
                length=float(self.seg_length[i]),
            )
            for i in idx
        ]

    def box_quad(self, element_id: int, local_vertex: int) -> np.ndarray:
        """Corners of box cap V_a intersected with the element, counterclockwise."""
        p = self.mesh.vertices[self.mesh.elements[element_id]]
        c = p.mean(axis=0)
        a = local_vertex
        m_next = 0.5 * (p[a] + p[(a + 1) % 3])
        m_prev = 0.5 * (p[(a + 2) % 3] + p[a])
        return np.stack([p[a], m_next, c, m_prev])


def build_dual(mesh: Triangulation) -> DualMesh:
    """Construct all flux segments and box areas of the barycentric dual."""
    p = mesh.vertices[mesh.elements]
    c = p.mean(axis=1)
    n_el = mesh.n_elements

    # midpoint of local edge k (opposite vertex k)
    mid = 0.5 * (p[:, [1, 2, 0]] + p[:, [2, 0, 1]])

    seg_node = np.empty((n_el, 6), dtype=np.int64)
    seg_owner = np.repeat(np.arange(n_el, dtype=np.int64)[:, None], 6, axis=1)
    seg_points = np.empty((n_el, 6, 2, 2))
    seg_normal = np.empty((n_el, 6, 2))
    seg_length = np.empty((n_el, 6))

    for k in range(3):
        d = c - mid[:, k]
        length = np.linalg.norm(d, axis=1)
        n_hat = np.stack([d[:, 1], -d[:, 0]], axis=1) / length[:, None]
        # directed (midpoint -> centroid) the segment leaves the box of
        # vertex (k+1) to the left, so n_hat points out of that box
        seg_node[:, 2 * k] = mesh.elements[:, (k + 1) % 3]
        seg_points[:, 2 * k, 0] = mid[:, k]
        seg_points[:, 2 * k, 1] = c
        seg_normal[:, 2 * k] = n_hat
        seg_length[:, 2 * k] = length
        # the box of vertex (k+2) sees the same segment with flipped normal
        seg_node[:, 2 * k + 1] = mesh.elements[:, (k + 2) % 3]
        seg_points[:, 2 * k + 1, 0] = c
        seg_points[:, 2 * k + 1, 1] = mid[:, k]
        seg_normal[:, 2 * k + 1] = -n_hat
        seg_length[:, 2 * k + 1] = length

    # box areas: shoelace of the quad (vertex, midpoint, centroid, midpoint)
    box_area = np.zeros(mesh.n_nodes)
    for a in range(3):
        quad = np.stack(
            [p[:, a], 0.5 * (p[:, a] + p[:, (a + 1) % 3]), c, 0.5 * (p[:, (a + 2) % 3] + p[:, a])],
            axis=1,
        )
        x, y = quad[..., 0], quad[..., 1]
        xn, yn = np.roll(x, -1, axis=1), np.roll(y, -1, axis=1)
        areas = 0.5 * (x * yn - xn * y).sum(axis=1)
        np.add.at(box_area, mesh.elements[:, a], areas)

    dual = DualMesh(
        mesh=mesh,
        box_area=box_area,
        node_is_interior=~mesh.boundary_vertex,
        seg_node=seg_node.reshape(-1),
        seg_owner=seg_owner.reshape(-1),
        seg_points=seg_points.reshape(-1, 2, 2),
        seg_normal=seg_normal.reshape(-1, 2),
        seg_length=seg_length.reshape(-1),
    )
    for arr in (dual.box_area, dual.seg_node, dual.seg_owner, dual.seg_points, dual.seg_normal, dual.seg_length):
        arr.setflags(write=False)
    return dual


class DualPiecewiseConstant:
    """Node values viewed as a function constant on each control volume."""

    def __init__(self, mesh: Triangulation, nodal_values):
        nodal_values = np.asarray(nodal_values, dtype=float)
        if nodal_values.shape != (mesh.n_nodes,):
            raise ValueError("need exactly one value per node")
        self.mesh = mesh
        self.values = nodal_values

    def value_in_element(self, element_id: int, points) -> np.ndarray:
        """Evaluate at points known to lie in the given element.

        Inside an element the box of a vertex is exactly the region where
        that vertex's barycentric coordinate is largest.
        """
        lam = self._barycentric(element_id, np.atleast_2d(np.asarray(points, dtype=float)))
        pick = lam.argmax(axis=1)
        return self.values[self.mesh.elements[element_id][pick]]

    def __call__(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty(points.shape[0])
        for i, x in enumerate(points):
            t = self._locate(x)
            out[i] = self.value_in_element(t, x[None, :])[0]
        return out

    def _barycentric(self, element_id: int, points: np.ndarray) -> np.ndarray:
        tri = self.mesh.vertices[self.mesh.elements[element_id]]
        mat = np.stack([tri[1] - tri[0], tri[2] - tri[0]], axis=1)
        lam12 = np.linalg.solve(mat, (points - tri[0]).T).T
        return np.column_stack([1.0 - lam12.sum(axis=1), lam12])

    def _locate(self, x: np.ndarray) -> int:
        for t in range(self.mesh.n_elements):
            lam = self._barycentric(t, x[None, :])[0]
            if lam.min() >= -1e-12:
                return t
        raise ValueError(f"point {x} lies outside the mesh")


def interpolate_dual(mesh: Triangulation, nodal_values) -> DualPiecewiseConstant:
    """Interpolation onto box-wise constants: value of node a on box V_a."""
    return DualPiecewiseConstant(mesh, nodal_values)
