"""Newest-vertex bisection with conforming closure.

Bisecting an element splits its reference edge at the midpoint; the two
children take the old outer edges (from the split edge's endpoints to the
opposite vertex) as their reference edges, i.e. the edges opposite the newest
vertex.  Closure marks reference edges of neighbours until every element with
a marked edge also has its reference edge marked; a single pass then splits
each element into 2, 3, or 4 children depending on how many of its edges
carry midpoints.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from afvm.mesh import Triangulation, build_triangulation


class InvalidMark(Exception):
    """A marked element id does not exist in the mesh."""


@dataclass(frozen=True)
class RefinementResult:
    """Outcome of one refine call.

    ``parent_of`` maps every element of ``new_mesh`` to the element of the
    input mesh it came from (identity for elements that were kept).
    ``refined_set`` holds the input-element ids that were actually bisected,
    always a superset of the marked set.
    """

    new_mesh: Triangulation
    parent_of: np.ndarray
    refined_set: np.ndarray


def refine(mesh: Triangulation, marked) -> RefinementResult:
    """Bisect all marked elements and restore conformity by closure."""
    marked = np.asarray(list(marked), dtype=np.int64)
    if marked.size and (marked.min() < 0 or marked.max() >= mesh.n_elements):
        raise InvalidMark("marked set contains an unknown element id")
    ref_edge_ids = mesh.element_edges[np.arange(mesh.n_elements), mesh.ref_edge]
    return refine_edges(mesh, ref_edge_ids[marked])


def refine_edges(mesh: Triangulation, marked_edge_ids) -> RefinementResult:
    """Split the given edges (plus closure) and rebuild the triangulation."""
    edge_marked = np.zeros(mesh.n_edges, dtype=bool)
    marked_edge_ids = np.asarray(list(marked_edge_ids), dtype=np.int64)
    if marked_edge_ids.size and (
        marked_edge_ids.min() < 0 or marked_edge_ids.max() >= mesh.n_edges
    ):
        raise InvalidMark("marked set contains an unknown edge id")
    edge_marked[marked_edge_ids] = True

    if not edge_marked.any():
        return RefinementResult(
            new_mesh=mesh,
            parent_of=np.arange(mesh.n_elements, dtype=np.int64),
            refined_set=np.empty(0, dtype=np.int64),
        )

    ref_edge_ids = mesh.element_edges[np.arange(mesh.n_elements), mesh.ref_edge]

    # closure: an element with any marked edge needs its reference edge marked
    work = deque(np.flatnonzero(edge_marked[mesh.element_edges].any(axis=1)))
    while work:
        t = work.popleft()
        r = ref_edge_ids[t]
        if edge_marked[r]:
            continue
        edge_marked[r] = True
        for t2 in mesh.edge_elements[r]:
            if t2 >= 0 and not edge_marked[ref_edge_ids[t2]]:
                work.append(t2)

    # midpoint node for every marked edge
    split = np.flatnonzero(edge_marked)
    midpoint_of = np.full(mesh.n_edges, -1, dtype=np.int64)
    midpoint_of[split] = mesh.n_nodes + np.arange(split.size)
    new_vertices = np.vstack(
        [mesh.vertices, 0.5 * (mesh.vertices[mesh.edges[split, 0]] + mesh.vertices[mesh.edges[split, 1]])]
    )

    new_elements: list[tuple[int, int, int]] = []
    new_ref: list[int] = []
    new_parent: list[int] = []
    new_region: list[int] = []
    new_generation: list[int] = []
    refined: list[int] = []

    def emit(verts, ref, parent, gen):
        new_elements.append(verts)
        new_ref.append(ref)
        new_parent.append(parent)
        new_region.append(int(mesh.region_tag[parent]))
        new_generation.append(gen)

    for t in range(mesh.n_elements):
        k = int(mesh.ref_edge[t])
        eids = mesh.element_edges[t]
        if not edge_marked[eids].any():
            emit(tuple(mesh.elements[t]), k, t, int(mesh.generation[t]))
            continue
        refined.append(t)
        gen = int(mesh.generation[t])
        v = mesh.elements[t]
        p, a, b = int(v[k]), int(v[(k + 1) % 3]), int(v[(k + 2) % 3])
        m = int(midpoint_of[eids[k]])
        # children (p, a, m) and (p, m, b); their reference edges (p, a)
        # and (b, p) are the old edges opposite a and b in the parent
        for child, outer_edge in (
            ((p, a, m), eids[(k + 2) % 3]),
            ((p, m, b), eids[(k + 1) % 3]),
        ):
            if edge_marked[outer_edge]:
                # second bisection: split the child's reference edge too
                mo = int(midpoint_of[outer_edge])
                cp, ca, cm = child  # reference edge is (cp, ca), peak cm
                if child[1] == m:  # child (p, m, b): reference edge (b, p)
                    cp, ca, cm = child[2], child[0], child[1]
                emit((cm, cp, mo), 2, t, gen + 2)
                emit((cm, mo, ca), 1, t, gen + 2)
            else:
                # reference edge of (p, a, m) is opposite m: local edge 2;
                # of (p, m, b) it is opposite m: local edge 1
                emit(child, 2 if child[2] == m else 1, t, gen + 1)

    result = build_triangulation(
        new_vertices,
        np.asarray(new_elements, dtype=np.int64),
        ref_edges=np.asarray(new_ref, dtype=np.int64),
        region_tags=np.asarray(new_region, dtype=np.int64),
        generations=np.asarray(new_generation, dtype=np.int64),
    )
    return RefinementResult(
        new_mesh=result,
        parent_of=np.asarray(new_parent, dtype=np.int64),
        refined_set=np.asarray(refined, dtype=np.int64),
    )


def refine_uniform(mesh: Triangulation) -> RefinementResult:
    """One uniform step: bisect everything until each input element has
    at least 4 children (three bisections), which halves the mesh size."""
    current = mesh
    parent = np.arange(mesh.n_elements, dtype=np.int64)
    while True:
        step = refine(current, np.arange(current.n_elements))
        current = step.new_mesh
        parent = parent[step.parent_of]
        counts = np.bincount(parent, minlength=mesh.n_elements)
        if counts.min() >= 4:
            return RefinementResult(
                new_mesh=current,
                parent_of=parent,
                refined_set=np.arange(mesh.n_elements, dtype=np.int64),
            )
