"""Assembly and solution of the box-method (FVM) and companion FEM systems.

The FVM system is Petrov-Galerkin: one balance equation per interior node,
obtained by integrating the flux -A grad(v) over the control volume boundary;
trial functions are continuous piecewise linears.  The FEM system is the
standard P1 Galerkin discretization on the same space.  Both eliminate
Dirichlet nodes by lifting nodal boundary values to the right-hand side.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from afvm.dual import DualMesh
from afvm.mesh import Triangulation
from afvm.problems import ProblemSpec, coefficient_divergence, eval_coefficient
from afvm.quadrature import segment_rule, tri_rule
from afvm.sparse import (
    BreakdownDetected,
    CsrMatrix,
    LinearSolveReport,
    NoConvergence,
    solve_cg,
    solve_dense_lu,
    solve_general,
)

_DENSE_FALLBACK_LIMIT = 2000


class MissingExact(Exception):
    """The requested quantity needs the (absent) exact solution."""


class ZeroOscillation(Exception):
    """The oscillation normalization of the defect quotient vanished."""


@dataclass(frozen=True)
class AssembledSystem:
    """Reduced linear system over the interior nodes.

    ``node_map`` lists the mesh node id of every unknown; ``unknown_of_node``
    is the inverse with -1 at boundary nodes.  ``lifted_dirichlet`` holds the
    nodal boundary values used in the lifting (zero at interior nodes).
    """

    matrix: CsrMatrix
    rhs: np.ndarray
    node_map: np.ndarray
    unknown_of_node: np.ndarray
    lifted_dirichlet: np.ndarray
    symmetric: bool


class ElementData(NamedTuple):
    coords: np.ndarray
    areas: np.ndarray
    grads: np.ndarray
    centroids: np.ndarray
    midpoints: np.ndarray


def element_data(mesh: Triangulation) -> ElementData:
    """Coordinates, areas, P1 shape gradients, centroids, edge midpoints."""
    p = mesh.vertices[mesh.elements]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    grads = np.empty((mesh.n_elements, 3, 2))
    for j in range(3):
        edge = p[:, (j + 1) % 3] - p[:, (j + 2) % 3]
        grads[:, j, 0] = edge[:, 1]
        grads[:, j, 1] = -edge[:, 0]
    grads /= (2.0 * areas)[:, None, None]
    centroids = p.mean(axis=1)
    midpoints = 0.5 * (p[:, [1, 2, 0]] + p[:, [2, 0, 1]])
    return ElementData(p, areas, grads, centroids, midpoints)


def _dirichlet_values(mesh: Triangulation, problem: ProblemSpec) -> np.ndarray:
    lifted = np.zeros(mesh.n_nodes)
    boundary = np.flatnonzero(mesh.boundary_vertex)
    if boundary.size:
        lifted[boundary] = problem.dirichlet(mesh.vertices[boundary])
    return lifted


def _reduce_system(mesh, problem, rows, cols, vals, rhs_full, symmetric) -> AssembledSystem:
    """Drop boundary rows and move boundary columns into the right-hand side."""
    lifted = _dirichlet_values(mesh, problem)
    interior = ~mesh.boundary_vertex
    unknown_of_node = np.full(mesh.n_nodes, -1, dtype=np.int64)
    node_map = np.flatnonzero(interior)
    unknown_of_node[node_map] = np.arange(node_map.size)

    rhs = rhs_full[node_map].copy()
    keep_row = interior[rows]
    rows, cols, vals = rows[keep_row], cols[keep_row], vals[keep_row]
    to_rhs = ~interior[cols]
    np.subtract.at(
        rhs, unknown_of_node[rows[to_rhs]], vals[to_rhs] * lifted[cols[to_rhs]]
    )
    keep = ~to_rhs
    matrix = CsrMatrix.from_coo(
        unknown_of_node[rows[keep]],
        unknown_of_node[cols[keep]],
        vals[keep],
        shape=(node_map.size, node_map.size),
    )
    return AssembledSystem(
        matrix=matrix,
        rhs=rhs,
        node_map=node_map,
        unknown_of_node=unknown_of_node,
        lifted_dirichlet=lifted,
        symmetric=symmetric,
    )


def _source_moments(mesh, problem, data: ElementData) -> np.ndarray:
    """Per (element, vertex): integral of f over the box cap V_a within T.

    The cap is split along the vertex-to-centroid diagonal into two triangles
    of area |T|/6 each, integrated with the degree-5 rule.
    """
    rule = tri_rule(5)
    moments = np.empty((mesh.n_elements, 3))
    for a in range(3):
        acc = np.zeros(mesh.n_elements)
        for corners in (
            (data.coords[:, a], data.midpoints[:, (a + 2) % 3], data.centroids),
            (data.coords[:, a], data.centroids, data.midpoints[:, (a + 1) % 3]),
        ):
            tri = np.stack(corners, axis=1)
            pts = np.einsum("qk,mkx->mqx", rule.points, tri).reshape(-1, 2)
            vals = problem.source(pts).reshape(mesh.n_elements, -1)
            acc += vals @ rule.weights
        moments[:, a] = acc * (data.areas / 6.0)
    return moments


def assemble_fvm(mesh: Triangulation, dual: DualMesh, problem: ProblemSpec) -> AssembledSystem:
    """Assemble the box-method system: flux balance per interior control volume.

    For every element the three midpoint-to-centroid segments are integrated
    with 2-point Gauss; each segment contributes with opposite signs to the
    two boxes it separates.  The right-hand side integrates f over the box
    caps via the sub-triangle split.
    """
    data = element_data(mesh)
    rule = segment_rule(2)

    # flux integrals per local edge k: F[m, k, j] = int over (mid_k -> centroid)
    # of (A grad(phi_j)) . n with |segment| * n = rot(centroid - mid_k)
    n_q = rule.points.size
    flux = np.empty((mesh.n_elements, 3, 3))
    for k in range(3):
        d = data.centroids - data.midpoints[:, k]
        scaled_normal = np.stack([d[:, 1], -d[:, 0]], axis=1)
        pts = (
            data.midpoints[:, k, None, :]
            + rule.points[None, :, None] * d[:, None, :]
        ).reshape(-1, 2)
        region = np.repeat(mesh.region_tag, n_q)
        a_q = eval_coefficient(problem, pts, region=region).reshape(
            mesh.n_elements, n_q, 2, 2
        )
        a_mean = np.einsum("q,mqij->mij", rule.weights, a_q)
        flux[:, k, :] = np.einsum("mij,mej,mi->me", a_mean, data.grads, scaled_normal)

    local = np.empty((mesh.n_elements, 3, 3))
    for alpha in range(3):
        local[:, alpha, :] = flux[:, (alpha + 1) % 3, :] - flux[:, (alpha + 2) % 3, :]

    rows = np.repeat(mesh.elements, 3, axis=1).reshape(-1)
    cols = np.tile(mesh.elements, (1, 3)).reshape(-1)
    vals = local.reshape(-1)

    rhs_full = np.zeros(mesh.n_nodes)
    np.add.at(rhs_full, mesh.elements.reshape(-1), _source_moments(mesh, problem, data).reshape(-1))

    return _reduce_system(mesh, problem, rows, cols, vals, rhs_full, symmetric=False)


def assemble_fem(mesh: Triangulation, problem: ProblemSpec) -> AssembledSystem:
    """Standard P1 Galerkin system with the same Dirichlet lifting."""
    data = element_data(mesh)

    rule_a = tri_rule(2)
    pts = np.einsum("qk,mkx->mqx", rule_a.points, data.coords).reshape(-1, 2)
    region = np.repeat(mesh.region_tag, rule_a.points.shape[0])
    a_q = eval_coefficient(problem, pts, region=region).reshape(
        mesh.n_elements, -1, 2, 2
    )
    a_mean = np.einsum("q,mqij->mij", rule_a.weights, a_q)
    local = np.einsum("mai,mij,mbj,m->mab", data.grads, a_mean, data.grads, data.areas)

    rule_f = tri_rule(5)
    pts = np.einsum("qk,mkx->mqx", rule_f.points, data.coords).reshape(-1, 2)
    f_q = problem.source(pts).reshape(mesh.n_elements, -1)
    load = np.einsum("mq,q,qa,m->ma", f_q, rule_f.weights, rule_f.points, data.areas)

    rows = np.repeat(mesh.elements, 3, axis=1).reshape(-1)
    cols = np.tile(mesh.elements, (1, 3)).reshape(-1)
    rhs_full = np.zeros(mesh.n_nodes)
    np.add.at(rhs_full, mesh.elements.reshape(-1), load.reshape(-1))

    return _reduce_system(
        mesh, problem, rows, cols, local.reshape(-1), rhs_full, symmetric=True
    )


def solve_system(
    system: AssembledSystem, method: str = "auto", tol: float = 1e-10, max_iters=None
):
    """Solve the reduced system and rebuild the full nodal vector.

    ``auto`` picks conjugate gradients for symmetric systems and BiCGStab
    otherwise, falling back to dense LU for small systems when the iteration
    fails.  The report carries the relative residual of the reduced system.
    """
    n = system.rhs.size
    start = time.perf_counter()
    if method == "auto":
        method = "cg" if system.symmetric else "general"

    if method == "lu" or n == 0:
        x = solve_dense_lu(system.matrix, system.rhs) if n else np.zeros(0)
        norm_b = np.linalg.norm(system.rhs)
        res = (
            np.linalg.norm(system.rhs - system.matrix.matvec(x)) / norm_b
            if norm_b > 0
            else 0.0
        )
        report = LinearSolveReport("dense-lu", 0, float(res), time.perf_counter() - start)
    else:
        solver = solve_cg if method == "cg" else solve_general
        try:
            x, report = solver(system.matrix, system.rhs, tol=tol, max_iters=max_iters)
        except (NoConvergence, BreakdownDetected):
            if n > _DENSE_FALLBACK_LIMIT:
                raise
            x = solve_dense_lu(system.matrix, system.rhs)
            norm_b = np.linalg.norm(system.rhs)
            res = (
                np.linalg.norm(system.rhs - system.matrix.matvec(x)) / norm_b
                if norm_b > 0
                else 0.0
            )
            report = LinearSolveReport(
                "dense-lu-fallback", 0, float(res), time.perf_counter() - start
            )

    nodal = system.lifted_dirichlet.copy()
    nodal[system.node_map] = x
    return nodal, report


def discrete_gradients(mesh: Triangulation, nodal: np.ndarray) -> np.ndarray:
    """Elementwise (constant) gradient of a P1 nodal function."""
    data = element_data(mesh)
    return np.einsum("maj,ma->mj", data.grads, nodal[mesh.elements])


def bilinear_energy(mesh, problem, u_nodal, v_nodal) -> float:
    """Energy bilinear form of two P1 functions (degree-2 coefficient rule)."""
    data = element_data(mesh)
    gu = np.einsum("maj,ma->mj", data.grads, np.asarray(u_nodal)[mesh.elements])
    gv = np.einsum("maj,ma->mj", data.grads, np.asarray(v_nodal)[mesh.elements])
    rule = tri_rule(2)
    pts = np.einsum("qk,mkx->mqx", rule.points, data.coords).reshape(-1, 2)
    region = np.repeat(mesh.region_tag, rule.points.shape[0])
    a_q = eval_coefficient(problem, pts, region=region).reshape(mesh.n_elements, -1, 2, 2)
    a_mean = np.einsum("q,mqij->mij", rule.weights, a_q)
    return float(np.einsum("mi,mij,mj,m->", gu, a_mean, gv, data.areas))


def energy_norm(mesh, problem, nodal) -> float:
    """Discrete energy norm |||v||| of a P1 nodal function."""
    return float(np.sqrt(max(bilinear_energy(mesh, problem, nodal, nodal), 0.0)))


def _exact_gradient(problem: ProblemSpec):
    if problem.exact_grad is not None:
        return problem.exact_grad
    if problem.exact is None:
        raise MissingExact("problem has no exact solution")
    h = problem.fd_step

    def grad(points):
        out = np.empty((points.shape[0], 2))
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            out[:, k] = (
                -problem.exact(points + 2 * e)
                + 8 * problem.exact(points + e)
                - 8 * problem.exact(points - e)
                + problem.exact(points - 2 * e)
            ) / (12 * h)
        return out

    return grad


def energy_error(mesh: Triangulation, problem: ProblemSpec, nodal) -> float:
    """Energy norm of u - u_h with the degree-5 rule per element."""
    grad_u = _exact_gradient(problem)
    data = element_data(mesh)
    gh = np.einsum("maj,ma->mj", data.grads, np.asarray(nodal)[mesh.elements])
    rule = tri_rule(5)
    n_q = rule.points.shape[0]
    pts = np.einsum("qk,mkx->mqx", rule.points, data.coords).reshape(-1, 2)
    region = np.repeat(mesh.region_tag, n_q)
    a_q = eval_coefficient(problem, pts, region=region)
    diff = grad_u(pts) - np.repeat(gh, n_q, axis=0)
    dens = np.einsum("ni,nij,nj->n", diff, a_q, diff).reshape(mesh.n_elements, n_q)
    total = float(((dens @ rule.weights) * data.areas).sum())
    return float(np.sqrt(max(total, 0.0)))


class DefectRatio(NamedTuple):
    value: float
    zero_oscillation: bool


def galerkin_defect(mesh, problem, u_fvm, u_fem, test_vector) -> DefectRatio:
    """Observed quasi-orthogonality constant |A(u_fem - u_fvm, v)| / (|||v||| osc).

    Since the FEM solution is energy-orthogonal to the exact error on the
    discrete space, A(u_fem - u_fvm, v) equals A(u - u_fvm, v) exactly.  When
    the oscillations vanish, the defect per unit test norm is returned with
    the flag set.
    """
    from afvm.estimate import compute_estimator

    numerator = abs(bilinear_energy(mesh, problem, np.asarray(u_fem) - np.asarray(u_fvm), test_vector))
    norm_v = energy_norm(mesh, problem, test_vector)
    if norm_v == 0.0:
        return DefectRatio(0.0, False)
    est = compute_estimator(mesh, problem, u_fvm)
    osc = float(np.sqrt(est.osc_sq.sum()))
    if osc == 0.0:
        return DefectRatio(numerator / norm_v, True)
    return DefectRatio(numerator / (norm_v * osc), False)


def box_residual_defects(mesh, dual: DualMesh, problem, nodal):
    """Discrete balance defect of every interior control volume.

    For the solved system, the integral of (f + div A grad u_h) over a box
    minus the normal-jump integrals over the facet pieces inside the box
    vanishes.  Returns (node ids, defects, scales) where scale is the sum of
    the two term magnitudes.
    """
    data = element_data(mesh)
    gh = np.einsum("maj,ma->mj", data.grads, np.asarray(nodal)[mesh.elements])
    vol = np.zeros(mesh.n_nodes)
    rule = tri_rule(5)

    # volume part: f + div(A grad u_h) over both cap sub-triangles
    for a in range(3):
        for corners in (
            (data.coords[:, a], data.midpoints[:, (a + 2) % 3], data.centroids),
            (data.coords[:, a], data.centroids, data.midpoints[:, (a + 1) % 3]),
        ):
            tri = np.stack(corners, axis=1)
            pts = np.einsum("qk,mkx->mqx", rule.points, tri).reshape(-1, 2)
            region = np.repeat(mesh.region_tag, rule.points.shape[0])
            fvals = problem.source(pts)
            dvals = coefficient_divergence(problem, pts, region=region)
            resid = (fvals + np.einsum("nj,nj->n", dvals, np.repeat(gh, rule.points.shape[0], axis=0))).reshape(
                mesh.n_elements, -1
            )
            np.add.at(vol, mesh.elements[:, a], (resid @ rule.weights) * data.areas / 6.0)

    # jump part: for each interior facet, integrate the normal jump over the
    # two halves and attribute each half to its nearest endpoint's box
    jump = np.zeros(mesh.n_nodes)
    interior_edges = np.flatnonzero(~mesh.boundary_edge)
    srule = segment_rule(2)
    t1 = mesh.edge_elements[interior_edges, 0]
    t2 = mesh.edge_elements[interior_edges, 1]
    v_a = mesh.edges[interior_edges, 0]
    v_b = mesh.edges[interior_edges, 1]
    pa = mesh.vertices[v_a]
    pb = mesh.vertices[v_b]
    local1 = np.argmax(mesh.element_edges[t1] == interior_edges[:, None], axis=1)
    tang = data.coords[t1, (local1 + 2) % 3] - data.coords[t1, (local1 + 1) % 3]
    normal1 = np.stack([tang[:, 1], -tang[:, 0]], axis=1)
    normal1 /= np.linalg.norm(normal1, axis=1)[:, None]
    half_len = 0.5 * np.linalg.norm(pb - pa, axis=1)
    mid = 0.5 * (pa + pb)
    for endpoint, nodes in ((pa, v_a), (pb, v_b)):
        pts = (
            endpoint[:, None, :]
            + srule.points[None, :, None] * (mid - endpoint)[:, None, :]
        ).reshape(-1, 2)
        n_q = srule.points.size
        a1 = eval_coefficient(problem, pts, region=np.repeat(mesh.region_tag[t1], n_q))
        a2 = eval_coefficient(problem, pts, region=np.repeat(mesh.region_tag[t2], n_q))
        flux1 = np.einsum("nij,nj->ni", a1, np.repeat(gh[t1], n_q, axis=0))
        flux2 = np.einsum("nij,nj->ni", a2, np.repeat(gh[t2], n_q, axis=0))
        jq = np.einsum("ni,ni->n", flux1 - flux2, np.repeat(normal1, n_q, axis=0)).reshape(
            -1, n_q
        )
        np.add.at(jump, nodes, (jq @ srule.weights) * half_len)

    ids = mesh.interior_nodes()
    defects = vol[ids] - jump[ids]
    scales = np.abs(vol[ids]) + np.abs(jump[ids])
    return ids, defects, scales


def dump_matrix_coo(system: AssembledSystem, path):
    """Write the reduced matrix as '<row> <col> <value>' lines, 0-based."""
    m = system.matrix
    with open(path, "w", encoding="utf-8") as handle:
        for i in range(m.shape[0]):
            for idx in range(m.indptr[i], m.indptr[i + 1]):
                handle.write(f"{i} {m.indices[idx]} {float(m.data[idx])!r}\n")
