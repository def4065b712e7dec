"""Two-stage Doerfler marking and the adaptive / uniform refinement drivers.

Marking first selects a minimal set covering the fraction theta of the total
squared estimator, then extends it (if needed) until the marked set also
covers the fraction theta_prime of the squared oscillations.  Sorting is
stable with ties broken by element id, so runs are reproducible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from afvm.assemble import (
    assemble_fem,
    assemble_fvm,
    energy_error,
    galerkin_defect,
    solve_system,
)
from afvm.dual import build_dual
from afvm.estimate import compute_estimator
from afvm.mesh import shape_regularity
from afvm.problems import ProblemSpec
from afvm.refine import refine, refine_uniform


class InsufficientData(Exception):
    """Too few records for the requested rate fit."""


class SolverFailure(Exception):
    """A level's linear solve failed; partial records are attached."""

    def __init__(self, level, records, cause):
        super().__init__(f"linear solve failed on level {level}: {cause}")
        self.level = level
        self.records = records


@dataclass(frozen=True)
class MarkResult:
    """Marked sets of one level plus the ratios reported alongside them."""

    marked_eta: np.ndarray
    marked: np.ndarray
    ratio_card: float
    osc_fraction_eta: float
    osc_fraction: float


@dataclass
class AdaptiveRecord:
    """Measurements of one level of the refinement loop."""

    level: int
    n_elements: int
    n_nodes: int
    eta: float
    osc: float
    energy_error: float = float("nan")
    fem_energy_error: float = float("nan")
    ratio_card: float = float("nan")
    osc_fraction_eta: float = float("nan")
    sigma: float = float("nan")
    solve_iters: int = 0
    wall_ms_solve: float = 0.0
    wall_ms_estimate: float = 0.0
    wall_ms_refine: float = 0.0
    defect: float = float("nan")
    n_marked: int = 0
    n_marked_eta: int = 0
    solve_residual: float = float("nan")
    extra: dict = field(default_factory=dict, repr=False)


def doerfler_mark(indicators_sq, theta: float) -> np.ndarray:
    """Minimal set of elements whose squared indicators sum to theta * total.

    Indicators are sorted descending with ties broken by element id; an
    all-zero input returns the empty set (nothing left to refine).
    """
    indicators_sq = np.asarray(indicators_sq, dtype=float)
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    if np.any(indicators_sq < 0.0):
        raise ValueError("indicators must be nonnegative")
    order = np.argsort(-indicators_sq, kind="stable")
    csum = np.cumsum(indicators_sq[order])
    total = float(csum[-1])
    if total == 0.0:
        return np.empty(0, dtype=np.int64)
    # total taken from the cumulative sum itself so theta = 1 is reachable
    k = int(np.searchsorted(csum, theta * total, side="left")) + 1
    return np.sort(order[:k])


def two_stage_mark(eta_sq, osc_sq, theta: float, theta_prime: float) -> MarkResult:
    """Doerfler marking for the estimator, minimally extended for oscillations."""
    eta_sq = np.asarray(eta_sq, dtype=float)
    osc_sq = np.asarray(osc_sq, dtype=float)
    if not 0.0 < theta_prime <= theta <= 1.0:
        raise ValueError("need 0 < theta_prime <= theta <= 1")
    marked_eta = doerfler_mark(eta_sq, theta)
    osc_total = osc_sq.sum()
    if osc_total == 0.0:
        frac = 1.0
        return MarkResult(marked_eta, marked_eta, 1.0, frac, frac)

    osc_eta = float(osc_sq[marked_eta].sum())
    marked = marked_eta
    if osc_eta < theta_prime * osc_total:
        in_eta = np.zeros(eta_sq.size, dtype=bool)
        in_eta[marked_eta] = True
        rest = np.flatnonzero(~in_eta)
        order = rest[np.argsort(-osc_sq[rest], kind="stable")]
        csum = osc_eta + np.cumsum(osc_sq[order])
        k = min(int(np.searchsorted(csum, theta_prime * osc_total, side="left")) + 1, order.size)
        marked = np.sort(np.concatenate([marked_eta, order[:k]]))
    return MarkResult(
        marked_eta=marked_eta,
        marked=marked,
        ratio_card=len(marked) / max(len(marked_eta), 1),
        osc_fraction_eta=float(osc_eta / osc_total),
        osc_fraction=float(osc_sq[marked].sum() / osc_total),
    )


def _measure_level(mesh, problem, level, theta, theta_prime, fem_compare, solver_tol):
    """Solve, estimate, and mark on one mesh; returns (record, mark_result)."""
    record = AdaptiveRecord(
        level=level,
        n_elements=mesh.n_elements,
        n_nodes=mesh.n_nodes,
        eta=0.0,
        osc=0.0,
        sigma=shape_regularity(mesh),
    )
    dual = build_dual(mesh)
    t0 = time.perf_counter()
    system = assemble_fvm(mesh, dual, problem)
    try:
        u_fvm, report = solve_system(system, method="general", tol=solver_tol)
    except Exception as exc:  # noqa: BLE001 - converted to a typed failure
        raise SolverFailure(level, [], exc) from exc
    record.wall_ms_solve = 1e3 * (time.perf_counter() - t0)
    record.solve_iters = report.iterations
    record.solve_residual = report.residual

    t0 = time.perf_counter()
    est = compute_estimator(mesh, problem, u_fvm)
    record.wall_ms_estimate = 1e3 * (time.perf_counter() - t0)
    record.eta = est.eta
    record.osc = est.osc

    if problem.exact is not None:
        record.energy_error = energy_error(mesh, problem, u_fvm)
    if fem_compare:
        fem_system = assemble_fem(mesh, problem)
        try:
            u_fem, _ = solve_system(fem_system, method="cg", tol=solver_tol)
        except Exception as exc:  # noqa: BLE001
            raise SolverFailure(level, [], exc) from exc
        if problem.exact is not None:
            record.fem_energy_error = energy_error(mesh, problem, u_fem)
        record.defect = galerkin_defect(mesh, problem, u_fvm, u_fem, u_fem - u_fvm).value

    mark = (
        two_stage_mark(est.eta_sq, est.osc_sq, theta, theta_prime)
        if est.eta_total_sq > 0.0
        else MarkResult(np.empty(0, np.int64), np.empty(0, np.int64), 1.0, 1.0, 1.0)
    )
    record.ratio_card = mark.ratio_card
    record.osc_fraction_eta = mark.osc_fraction_eta
    record.n_marked = len(mark.marked)
    record.n_marked_eta = len(mark.marked_eta)
    return record, mark


def run_adaptive(
    problem: ProblemSpec,
    theta: float = 0.5,
    theta_prime: float = 0.5,
    *,
    max_elements: int | None = None,
    max_levels: int | None = None,
    eta_tol: float | None = None,
    fem_compare: bool | None = None,
    solver_tol: float = 1e-10,
) -> list[AdaptiveRecord]:
    """Run the adaptive loop until the first stopping criterion fires.

    Without explicit criteria the loop stops at 3e6 elements.  Marking is
    performed (and its ratios recorded) on every level including the last.
    """
    if not 0.0 < theta_prime <= theta <= 1.0:
        raise ValueError("need 0 < theta_prime <= theta <= 1")
    if max_elements is None and max_levels is None and eta_tol is None:
        max_elements = 3_000_000
    if fem_compare is None:
        fem_compare = problem.exact is not None

    mesh = problem.initial_mesh
    records: list[AdaptiveRecord] = []
    level = 0
    while True:
        try:
            record, mark = _measure_level(
                mesh, problem, level, theta, theta_prime, fem_compare, solver_tol
            )
        except SolverFailure as failure:
            raise SolverFailure(level, records, failure.__cause__) from failure
        records.append(record)

        if eta_tol is not None and record.eta <= eta_tol:
            break
        if max_levels is not None and level + 1 >= max_levels:
            break
        if max_elements is not None and mesh.n_elements >= max_elements:
            break
        if len(mark.marked) == 0:
            break

        t0 = time.perf_counter()
        mesh = refine(mesh, mark.marked).new_mesh
        record.wall_ms_refine = 1e3 * (time.perf_counter() - t0)
        level += 1
    return records


def run_uniform(
    problem: ProblemSpec,
    n_levels: int,
    *,
    fem_compare: bool | None = None,
    solver_tol: float = 1e-10,
) -> list[AdaptiveRecord]:
    """Uniform refinement baseline with the same per-level measurements."""
    if fem_compare is None:
        fem_compare = problem.exact is not None
    mesh = problem.initial_mesh
    records: list[AdaptiveRecord] = []
    for level in range(n_levels):
        try:
            record, _ = _measure_level(mesh, problem, level, 0.5, 0.5, fem_compare, solver_tol)
        except SolverFailure as failure:
            raise SolverFailure(level, records, failure.__cause__) from failure
        records.append(record)
        if level + 1 < n_levels:
            t0 = time.perf_counter()
            mesh = refine_uniform(mesh).new_mesh
            record.wall_ms_refine = 1e3 * (time.perf_counter() - t0)
    return records


def fit_rate(records, field_name: str, window: int) -> float:
    """Least-squares slope of log(field) against log(n_elements).

    Fitted over the last ``window`` records; needs at least 3 points with
    positive field values.
    """
    tail = list(records)[-window:]
    if len(tail) < 3:
        raise InsufficientData(f"need >= 3 records, got {len(tail)}")
    x = np.array([r.n_elements for r in tail], dtype=float)
    y = np.array([getattr(r, field_name) for r in tail], dtype=float)
    good = np.isfinite(y) & (y > 0.0)
    if good.sum() < 3:
        raise InsufficientData(f"need >= 3 positive values of {field_name}")
    lx = np.log(x[good])
    ly = np.log(y[good])
    lx -= lx.mean()
    denom = (lx**2).sum()
    if denom == 0.0:
        raise InsufficientData("element counts do not vary inside the window")
    return float((lx * (ly - ly.mean())).sum() / denom)
