"""Weighted-residual error estimator and data oscillations.

Per element T with mesh size h = sqrt(|T|):

    eta(T)^2 = h^2 ||f + div(A grad v)||_{L2(T)}^2
             + h   ||normal jump of A grad v||_{L2(boundary of T minus Gamma)}^2

The oscillation indicator applies (1 - mean) to both residuals before
squaring, with the mean taken per element and per whole facet.  Every
interior facet contributes its full jump integral to both incident elements
(no halving), so facet terms are counted twice in the total; boundary facets
never contribute.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from afvm.assemble import element_data
from afvm.mesh import Triangulation
from afvm.problems import ProblemSpec, coefficient_divergence, eval_coefficient
from afvm.quadrature import segment_rule, tri_rule


class BoundaryEdge(Exception):
    """Jumps are only defined on interior facets."""


@dataclass(frozen=True)
class EstimatorOutput:
    """Per-element squared indicators and their decompositions.

    ``edge_jump_sq``/``edge_osc_sq`` hold the squared facet integrals per
    edge (zero on boundary edges), already including the facet-mean
    subtraction for the oscillation variant.
    """

    eta_sq: np.ndarray
    osc_sq: np.ndarray
    edge_jump_sq: np.ndarray
    edge_osc_sq: np.ndarray

    @property
    def eta_total_sq(self) -> float:
        return float(self.eta_sq.sum())

    @property
    def osc_total_sq(self) -> float:
        return float(self.osc_sq.sum())

    @property
    def eta(self) -> float:
        return float(np.sqrt(self.eta_total_sq))

    @property
    def osc(self) -> float:
        return float(np.sqrt(self.osc_total_sq))


def volume_residual(mesh: Triangulation, problem: ProblemSpec, nodal, element: int):
    """Pointwise volume residual f + div(A grad v) on one element."""
    data = element_data(mesh)
    grad = np.einsum("aj,a->j", data.grads[element], np.asarray(nodal)[mesh.elements[element]])
    region_value = int(mesh.region_tag[element])

    def residual(points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        region = np.full(points.shape[0], region_value)
        div_factor = coefficient_divergence(problem, points, region=region)
        return problem.source(points) + div_factor @ grad

    return residual


def edge_jump(mesh: Triangulation, problem: ProblemSpec, nodal, interior_edge: int):
    """Pointwise normal jump of A grad v across one interior facet.

    The value is the sum of both one-sided normal fluxes with each side's
    outward normal, hence independent of the element ordering.
    """
    if mesh.boundary_edge[interior_edge]:
        raise BoundaryEdge(f"edge {interior_edge} lies on the boundary")
    data = element_data(mesh)
    t1, t2 = mesh.edge_elements[interior_edge]
    nodal = np.asarray(nodal, dtype=float)
    g1 = np.einsum("aj,a->j", data.grads[t1], nodal[mesh.elements[t1]])
    g2 = np.einsum("aj,a->j", data.grads[t2], nodal[mesh.elements[t2]])
    local1 = int(np.flatnonzero(mesh.element_edges[t1] == interior_edge)[0])
    tang = data.coords[t1, (local1 + 2) % 3] - data.coords[t1, (local1 + 1) % 3]
    normal1 = np.array([tang[1], -tang[0]]) / np.linalg.norm(tang)
    r1 = int(mesh.region_tag[t1])
    r2 = int(mesh.region_tag[t2])

    def jump(points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        a1 = eval_coefficient(problem, points, region=np.full(points.shape[0], r1))
        a2 = eval_coefficient(problem, points, region=np.full(points.shape[0], r2))
        return (a1 @ g1 - a2 @ g2) @ normal1

    return jump


def compute_estimator(mesh: Triangulation, problem: ProblemSpec, nodal) -> EstimatorOutput:
    """Per-element estimator and oscillation contributions for a P1 function."""
    data = element_data(mesh)
    nodal = np.asarray(nodal, dtype=float)
    gh = np.einsum("maj,ma->mj", data.grads, nodal[mesh.elements])
    h_sq = data.areas
    h = np.sqrt(h_sq)

    # volume residual with the degree-5 rule; the elementwise mean uses the
    # same rule so the oscillation split is exact within the rule
    rule = tri_rule(5)
    n_q = rule.points.shape[0]
    pts = np.einsum("qk,mkx->mqx", rule.points, data.coords).reshape(-1, 2)
    region = np.repeat(mesh.region_tag, n_q)
    fvals = problem.source(pts)
    dvals = coefficient_divergence(problem, pts, region=region)
    resid = (fvals + np.einsum("nj,nj->n", dvals, np.repeat(gh, n_q, axis=0))).reshape(
        mesh.n_elements, n_q
    )
    mean = resid @ rule.weights
    vol_l2 = data.areas * (resid**2 @ rule.weights)
    vol_osc = data.areas * ((resid - mean[:, None]) ** 2 @ rule.weights)

    # facet jumps with 3-point Gauss, means per whole facet
    edge_jump_sq = np.zeros(mesh.n_edges)
    edge_osc_sq = np.zeros(mesh.n_edges)
    interior = np.flatnonzero(~mesh.boundary_edge)
    if interior.size:
        srule = segment_rule(3)
        n_s = srule.points.size
        t1 = mesh.edge_elements[interior, 0]
        t2 = mesh.edge_elements[interior, 1]
        pa = mesh.vertices[mesh.edges[interior, 0]]
        pb = mesh.vertices[mesh.edges[interior, 1]]
        lengths = np.linalg.norm(pb - pa, axis=1)
        local1 = np.argmax(mesh.element_edges[t1] == interior[:, None], axis=1)
        tang = data.coords[t1, (local1 + 2) % 3] - data.coords[t1, (local1 + 1) % 3]
        normal1 = tang[:, [1, 0]] * np.array([1.0, -1.0]) / np.linalg.norm(tang, axis=1)[:, None]
        pts = (pa[:, None, :] + srule.points[None, :, None] * (pb - pa)[:, None, :]).reshape(-1, 2)
        a1 = eval_coefficient(problem, pts, region=np.repeat(mesh.region_tag[t1], n_s))
        a2 = eval_coefficient(problem, pts, region=np.repeat(mesh.region_tag[t2], n_s))
        flux = np.einsum("nij,nj->ni", a1, np.repeat(gh[t1], n_s, axis=0)) - np.einsum(
            "nij,nj->ni", a2, np.repeat(gh[t2], n_s, axis=0)
        )
        jq = np.einsum("ni,ni->n", flux, np.repeat(normal1, n_s, axis=0)).reshape(-1, n_s)
        jmean = jq @ srule.weights
        edge_jump_sq[interior] = lengths * (jq**2 @ srule.weights)
        edge_osc_sq[interior] = lengths * ((jq - jmean[:, None]) ** 2 @ srule.weights)

    jump_per_element = edge_jump_sq[mesh.element_edges].sum(axis=1)
    osc_per_element = edge_osc_sq[mesh.element_edges].sum(axis=1)

    eta_sq = h_sq * vol_l2 + h * jump_per_element
    osc_sq = h_sq * vol_osc + h * osc_per_element
    return EstimatorOutput(
        eta_sq=eta_sq,
        osc_sq=osc_sq,
        edge_jump_sq=edge_jump_sq,
        edge_osc_sq=edge_osc_sq,
    )


def subset_total(output: EstimatorOutput, element_set) -> tuple[float, float]:
    """(eta^2, osc^2) summed over a subset of elements."""
    ids = np.asarray(list(element_set), dtype=np.int64)
    if ids.size == 0:
        return 0.0, 0.0
    return float(output.eta_sq[ids].sum()), float(output.osc_sq[ids].sum())
