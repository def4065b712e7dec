"""Conforming 2D triangle meshes: topology, geometry, and regularity audits.

Element vertices are stored counterclockwise.  Local edge ``k`` of an element
is the edge opposite local vertex ``k``, i.e. it connects local vertices
``(k+1) % 3`` and ``(k+2) % 3``.  The per-element ``ref_edge`` index names the
bisection edge used by newest-vertex refinement in this local numbering.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class MeshError(Exception):
    """Base class for mesh construction failures."""


class NonConforming(MeshError):
    """An edge is incident to more than two elements, or elements repeat."""


class DegenerateElement(MeshError):
    """An element has (numerically) vanishing area."""


class IndexOutOfRange(MeshError):
    """A vertex or element index does not exist."""


@dataclass(frozen=True)
class Triangulation:
    """Immutable conforming triangulation with derived topology.

    Attributes:
        vertices: (n_nodes, 2) coordinates.
        elements: (n_elements, 3) vertex indices, counterclockwise.
        ref_edge: (n_elements,) local index in {0,1,2} of the bisection edge.
        region_tag: (n_elements,) integer tag, inherited under refinement so
            coefficient discontinuities stay aligned with element boundaries.
        generation: (n_elements,) bisection depth relative to the initial mesh.
        edges: (n_edges, 2) vertex pairs, each sorted ascending.
        edge_elements: (n_edges, 2) incident element ids, -1 in the second
            slot for boundary edges.
        element_edges: (n_elements, 3) global edge id of local edge k.
        boundary_edge: (n_edges,) flag.
        boundary_vertex: (n_nodes,) flag.
    """

    vertices: np.ndarray
    elements: np.ndarray
    ref_edge: np.ndarray
    region_tag: np.ndarray
    generation: np.ndarray
    edges: np.ndarray
    edge_elements: np.ndarray
    element_edges: np.ndarray
    boundary_edge: np.ndarray
    boundary_vertex: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def interior_nodes(self) -> np.ndarray:
        """Ids of nodes not on the boundary."""
        return np.flatnonzero(~self.boundary_vertex)


@dataclass(frozen=True)
class ElementGeometry:
    """Geometric quantities of one element.

    ``h`` is the area-based mesh size ``sqrt(area)``; ``diam`` the longest
    edge.  ``edge_unit_normals[k]`` is the outward unit normal of local
    edge k.
    """

    area: float
    h: float
    diam: float
    edge_lengths: np.ndarray
    edge_unit_normals: np.ndarray
    centroid: np.ndarray


def _signed_areas(vertices: np.ndarray, elements: np.ndarray) -> np.ndarray:
    p = vertices[elements]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def build_triangulation(
    vertices,
    elements,
    ref_edges=None,
    region_tags=None,
    generations=None,
) -> Triangulation:
    """Validate input arrays and derive the full mesh topology.

    Orientation is normalized to counterclockwise (the ``ref_edge`` index is
    remapped if an element gets flipped).  When ``ref_edges`` is omitted,
    each element's longest edge is chosen; exact ties go to the edge whose
    opposite vertex has the smallest global index.

    Raises:
        IndexOutOfRange: vertex index outside the vertex array.
        DegenerateElement: |area| <= 1e-14 * bounding box area.
        NonConforming: some edge has more than two incident elements.
    """
    vertices = np.ascontiguousarray(vertices, dtype=float)
    elements = np.ascontiguousarray(elements, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 2 or vertices.shape[0] < 3:
        raise MeshError("need at least 3 vertices of dimension 2")
    if elements.ndim != 2 or elements.shape[1] != 3 or elements.shape[0] < 1:
        raise MeshError("need at least 1 element with 3 vertex indices")
    n_nodes = vertices.shape[0]
    n_elements = elements.shape[0]
    if elements.min() < 0 or elements.max() >= n_nodes:
        raise IndexOutOfRange("element refers to a vertex that does not exist")
    if np.any(
        (elements[:, 0] == elements[:, 1])
        | (elements[:, 1] == elements[:, 2])
        | (elements[:, 2] == elements[:, 0])
    ):
        raise DegenerateElement("element with repeated vertex")

    if ref_edges is None:
        ref_edge = np.full(n_elements, -1, dtype=np.int64)
    else:
        ref_edge = np.ascontiguousarray(ref_edges, dtype=np.int64).copy()
        if ref_edge.shape != (n_elements,) or ref_edge.min() < 0 or ref_edge.max() > 2:
            raise MeshError("ref_edges must be one local index in 0..2 per element")
    if region_tags is None:
        region_tag = np.zeros(n_elements, dtype=np.int64)
    else:
        region_tag = np.ascontiguousarray(region_tags, dtype=np.int64).copy()
        if region_tag.shape != (n_elements,):
            raise MeshError("region_tags must have one entry per element")
    if generations is None:
        generation = np.zeros(n_elements, dtype=np.int64)
    else:
        generation = np.ascontiguousarray(generations, dtype=np.int64).copy()

    # orientation: flip clockwise elements, remapping the ref edge index
    # (swapping the last two vertices exchanges local edges 1 and 2)
    elements = elements.copy()
    areas = _signed_areas(vertices, elements)
    bbox = vertices.max(axis=0) - vertices.min(axis=0)
    bbox_area = max(bbox[0] * bbox[1], bbox.max() ** 2)
    if np.any(np.abs(areas) <= 1e-14 * bbox_area):
        bad = int(np.argmin(np.abs(areas)))
        raise DegenerateElement(f"element {bad} has area {areas[bad]:.3e}")
    flip = areas < 0.0
    elements[flip] = elements[flip][:, [0, 2, 1]]
    swapped = ref_edge[flip]
    swapped_new = swapped.copy()
    swapped_new[swapped == 1] = 2
    swapped_new[swapped == 2] = 1
    ref_edge[flip] = swapped_new

    # edge table: local edge k of element t is (v[k+1], v[k+2]) sorted
    raw = np.stack(
        [
            elements[:, [1, 2]],
            elements[:, [2, 0]],
            elements[:, [0, 1]],
        ],
        axis=1,
    ).reshape(-1, 2)
    raw_sorted = np.sort(raw, axis=1)
    edges, element_edges_flat, counts = np.unique(
        raw_sorted, axis=0, return_inverse=True, return_counts=True
    )
    element_edges = element_edges_flat.reshape(n_elements, 3)
    if counts.max() > 2:
        raise NonConforming("an edge is shared by more than two elements")
    triples = np.sort(elements, axis=1)
    if np.unique(triples, axis=0).shape[0] != n_elements:
        raise NonConforming("the same element is listed more than once")

    n_edges = edges.shape[0]
    edge_elements = np.full((n_edges, 2), -1, dtype=np.int64)
    owner = np.repeat(np.arange(n_elements, dtype=np.int64), 3)
    order = np.argsort(element_edges_flat, kind="stable")
    eids = element_edges_flat[order]
    owners = owner[order]
    first = np.searchsorted(eids, np.arange(n_edges), side="left")
    edge_elements[:, 0] = owners[first]
    second_mask = counts == 2
    edge_elements[second_mask, 1] = owners[first[second_mask] + 1]
    boundary_edge = counts == 1
    boundary_vertex = np.zeros(n_nodes, dtype=bool)
    boundary_vertex[edges[boundary_edge].ravel()] = True

    if ref_edges is None:
        p = vertices[elements]
        lens2 = np.stack(
            [
                ((p[:, 2] - p[:, 1]) ** 2).sum(axis=1),
                ((p[:, 0] - p[:, 2]) ** 2).sum(axis=1),
                ((p[:, 1] - p[:, 0]) ** 2).sum(axis=1),
            ],
            axis=1,
        )
        ref_edge = np.empty(n_elements, dtype=np.int64)
        for t in range(n_elements):
            best = np.flatnonzero(lens2[t] == lens2[t].max())
            ref_edge[t] = best[np.argmin(elements[t, best])]

    mesh = Triangulation(
        vertices=vertices,
        elements=elements,
        ref_edge=ref_edge,
        region_tag=region_tag,
        generation=generation,
        edges=edges,
        edge_elements=edge_elements,
        element_edges=element_edges,
        boundary_edge=boundary_edge,
        boundary_vertex=boundary_vertex,
    )
    for arr in (
        mesh.vertices,
        mesh.elements,
        mesh.ref_edge,
        mesh.region_tag,
        mesh.generation,
        mesh.edges,
        mesh.edge_elements,
        mesh.element_edges,
        mesh.boundary_edge,
        mesh.boundary_vertex,
    ):
        arr.setflags(write=False)
    return mesh


def element_geometry(mesh: Triangulation, element_id: int) -> ElementGeometry:
    """All geometric quantities of one element; h = sqrt(area) in 2D."""
    if not 0 <= element_id < mesh.n_elements:
        raise IndexOutOfRange(f"element {element_id} does not exist")
    p = mesh.vertices[mesh.elements[element_id]]
    area = float(_signed_areas(mesh.vertices, mesh.elements[element_id : element_id + 1])[0])
    # local edge k runs from vertex (k+1)%3 to (k+2)%3 along the CCW boundary
    tangents = np.stack([p[2] - p[1], p[0] - p[2], p[1] - p[0]])
    lengths = np.linalg.norm(tangents, axis=1)
    normals = np.stack([tangents[:, 1], -tangents[:, 0]], axis=1) / lengths[:, None]
    return ElementGeometry(
        area=area,
        h=float(np.sqrt(area)),
        diam=float(lengths.max()),
        edge_lengths=lengths,
        edge_unit_normals=normals,
        centroid=p.mean(axis=0),
    )


def patch(mesh: Triangulation, element_set) -> np.ndarray:
    """All elements sharing at least a vertex with the given set (a superset)."""
    element_set = np.asarray(list(element_set), dtype=np.int64)
    if element_set.size == 0:
        return element_set
    if element_set.min() < 0 or element_set.max() >= mesh.n_elements:
        raise IndexOutOfRange("patch input contains an unknown element id")
    touched = np.zeros(mesh.n_nodes, dtype=bool)
    touched[mesh.elements[element_set].ravel()] = True
    hit = touched[mesh.elements].any(axis=1)
    return np.flatnonzero(hit)


def shape_regularity(mesh: Triangulation) -> float:
    """max over elements of diam(T)^2 / |T| (dimension d = 2)."""
    p = mesh.vertices[mesh.elements]
    lens2 = np.stack(
        [
            ((p[:, 2] - p[:, 1]) ** 2).sum(axis=1),
            ((p[:, 0] - p[:, 2]) ** 2).sum(axis=1),
            ((p[:, 1] - p[:, 0]) ** 2).sum(axis=1),
        ],
        axis=1,
    )
    areas = _signed_areas(mesh.vertices, mesh.elements)
    return float((lens2.max(axis=1) / areas).max())


def min_angle(mesh: Triangulation) -> float:
    """Smallest interior angle over all elements, in radians."""
    p = mesh.vertices[mesh.elements]
    angles = []
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        cosang = (a * b).sum(axis=1) / (
            np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
        )
        angles.append(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return float(np.min(angles))


def total_area(mesh: Triangulation) -> float:
    """Sum of element areas, equals the domain polygon area."""
    return float(_signed_areas(mesh.vertices, mesh.elements).sum())


def mesh_to_json(mesh: Triangulation) -> str:
    """Serialize to the exchange format (vertices/elements/ref_edges/region_tags)."""
    return json.dumps(
        {
            "vertices": mesh.vertices.tolist(),
            "elements": mesh.elements.tolist(),
            "ref_edges": mesh.ref_edge.tolist(),
            "region_tags": mesh.region_tag.tolist(),
        }
    )


def mesh_from_json(data) -> Triangulation:
    """Build a mesh from the JSON exchange format (string or parsed dict)."""
    if isinstance(data, (str, bytes)):
        data = json.loads(data)
    return build_triangulation(
        np.asarray(data["vertices"], dtype=float),
        np.asarray(data["elements"], dtype=np.int64),
        ref_edges=data.get("ref_edges"),
        region_tags=data.get("region_tags"),
    )
