"""Command line driver: run an experiment, emit records.csv and summary.json.

Exit codes: 0 success, 2 invalid configuration, 3 solver failure.  The CSV is
the data contract consumed by the plotting frontend; floats are written in
shortest round-trip form and absent quantities as the literal ``nan``.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from afvm.adaptive import (
    AdaptiveRecord,
    SolverFailure,
    fit_rate,
    run_adaptive,
    run_uniform,
)
from afvm.assemble import assemble_fvm, dump_matrix_coo
from afvm.dual import build_dual
from afvm.problems import (
    NonSymmetricCoefficient,
    ParseError,
    ProblemSpec,
    UnknownBuiltin,
    problem_from_json,
    problem_lshape_singular,
    problem_square_smooth,
)

CSV_COLUMNS = (
    "level",
    "n_elements",
    "n_nodes",
    "eta",
    "osc",
    "energy_error",
    "fem_energy_error",
    "ratio_card",
    "osc_fraction_eta",
    "sigma",
    "solve_iters",
    "wall_ms_solve",
    "wall_ms_estimate",
    "wall_ms_refine",
)

_INT_COLUMNS = {"level", "n_elements", "n_nodes", "solve_iters"}

# expected fitted slopes per (problem label, mode); used for summary checks
_RATE_RANGES = {
    ("square-smooth", "adaptive"): {"eta": (-0.60, -0.45), "energy_error": (-0.60, -0.45)},
    ("square-smooth", "uniform"): {"eta": (-0.60, -0.45), "energy_error": (-0.60, -0.45)},
    ("lshape-singular", "adaptive"): {"eta": (-0.60, -0.45), "energy_error": (-0.60, -0.45)},
    ("lshape-singular", "uniform"): {"energy_error": (-0.38, -0.29)},
}


def write_records_csv(records, path) -> None:
    """Write one row per level with the fixed column set (LF endings, UTF-8)."""
    if not records:
        raise ValueError("no records to write")
    lines = [",".join(CSV_COLUMNS)]
    for r in records:
        cells = []
        for name in CSV_COLUMNS:
            value = getattr(r, name)
            cells.append(str(int(value)) if name in _INT_COLUMNS else repr(float(value)))
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")


def read_records_csv(path) -> list[AdaptiveRecord]:
    """Parse a records.csv back into AdaptiveRecord objects."""
    with open(path, encoding="utf-8") as handle:
        lines = [line.rstrip("\n") for line in handle if line.strip()]
    header = lines[0].split(",")
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header in {path}")
    records = []
    for line in lines[1:]:
        cells = line.split(",")
        kwargs = {}
        for name, cell in zip(CSV_COLUMNS, cells):
            kwargs[name] = int(cell) if name in _INT_COLUMNS else float(cell)
        records.append(AdaptiveRecord(**kwargs))
    return records


def _geometric_contraction(values) -> float:
    """Geometric mean of successive ratios from the fourth entry onwards."""
    import numpy as np

    v = np.asarray(values, dtype=float)
    v = v[3:]
    if v.size < 2 or np.any(v <= 0):
        return float("nan")
    ratios = v[1:] / v[:-1]
    return float(np.exp(np.log(ratios).mean()))


def _drift(values, base_index: int = 5):
    """Largest deviation factor of later values from the base level's value."""
    import numpy as np

    v = np.asarray(values, dtype=float)
    good = np.isfinite(v) & (v > 0)
    if base_index >= v.size or not good[base_index] or not good[base_index:].all():
        return float("nan")
    rel = v[base_index:] / v[base_index]
    return float(np.maximum(rel, 1.0 / rel).max())


def build_summary(records, problem_label: str, mode: str, config: dict) -> dict:
    """Fitted rates, observed constants, and pass/fail checks for one run."""
    import numpy as np

    window = min(8, len(records))
    rates = {}
    for fld in ("eta", "osc", "energy_error", "fem_energy_error"):
        try:
            rates[fld] = fit_rate(records, fld, window)
        except Exception:
            rates[fld] = None

    ratio_cards = [r.ratio_card for r in records]
    osc_fracs = [r.osc_fraction_eta for r in records]
    etas = [r.eta for r in records]
    errors = np.array([r.energy_error for r in records], dtype=float)
    oscs = np.array([r.osc for r in records], dtype=float)
    eta_arr = np.array(etas, dtype=float)

    constants = {
        "max_ratio_card": max(ratio_cards) if ratio_cards else None,
        "min_osc_fraction_eta": min(osc_fracs) if osc_fracs else None,
        "eta_contraction_geomean": _geometric_contraction(etas),
        "max_defect": max(
            (r.defect for r in records if math.isfinite(r.defect)), default=None
        ),
        "max_sigma": max(r.sigma for r in records),
    }
    with np.errstate(invalid="ignore", divide="ignore"):
        reliability = errors / eta_arr
        efficiency = eta_arr / np.sqrt(errors**2 + oscs**2)
    constants["reliability_drift"] = _drift(reliability)
    constants["efficiency_drift"] = _drift(efficiency)
    defects = np.array([r.defect for r in records], dtype=float)
    constants["defect_drift"] = _drift(defects, base_index=4)

    checks = {}
    ranges = _RATE_RANGES.get((problem_label, mode), {})
    for fld, (lo, hi) in ranges.items():
        slope = rates.get(fld)
        checks[f"{fld}_slope_in_range"] = {
            "value": slope,
            "range": [lo, hi],
            "passed": slope is not None and lo <= slope <= hi,
        }
    if mode == "adaptive":
        checks["osc_slope_higher_order"] = {
            "value": rates.get("osc"),
            "threshold": -0.80,
            "passed": rates.get("osc") is not None and rates["osc"] <= -0.80,
        }
        checks["marking_ratio_bound"] = {
            "value": constants["max_ratio_card"],
            "threshold": 2.0,
            "passed": constants["max_ratio_card"] is not None
            and constants["max_ratio_card"] <= 2.0,
        }
        checks["osc_fraction_bound"] = {
            "value": constants["min_osc_fraction_eta"],
            "threshold": 0.02,
            "passed": constants["min_osc_fraction_eta"] is not None
            and constants["min_osc_fraction_eta"] >= 0.02,
        }
        geo = constants["eta_contraction_geomean"]
        checks["estimator_linear_convergence"] = {
            "value": geo,
            "threshold": 0.98,
            "passed": math.isfinite(geo) and geo <= 0.98,
        }
    for name, key in (
        ("reliability_bounded", "reliability_drift"),
        ("efficiency_bounded", "efficiency_drift"),
    ):
        drift = constants[key]
        checks[name] = {
            "value": drift,
            "threshold": 3.0,
            "passed": math.isfinite(drift) and drift <= 3.0,
        }
    if math.isfinite(constants["defect_drift"] or float("nan")):
        checks["defect_no_drift"] = {
            "value": constants["defect_drift"],
            "threshold": 2.0,
            "passed": constants["defect_drift"] <= 2.0,
        }

    return {
        "problem": problem_label,
        "mode": mode,
        "config": config,
        "n_levels": len(records),
        "final_n_elements": records[-1].n_elements if records else 0,
        "rate_window": window,
        "rates": rates,
        "constants": constants,
        "checks": checks,
    }


def _load_problem(selector: str) -> ProblemSpec:
    if selector == "square-smooth":
        return problem_square_smooth()
    if selector == "lshape-singular":
        return problem_lshape_singular()
    return problem_from_json(selector)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="afvm",
        description="Adaptive vertex-centered finite volume experiments",
    )
    parser.add_argument("--problem", default="square-smooth", help="builtin name or config path")
    parser.add_argument("--theta", type=float, default=0.5)
    parser.add_argument("--theta-prime", type=float, default=0.5)
    parser.add_argument("--mode", choices=("adaptive", "uniform"), default="adaptive")
    parser.add_argument("--max-elements", type=int, default=None)
    parser.add_argument("--levels", type=int, default=None)
    parser.add_argument("--eta-tol", type=float, default=None)
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument(
        "--fem-compare",
        dest="fem_compare",
        action="store_true",
        default=None,
        help="solve the FEM companion system too (default: when exact solution exists)",
    )
    parser.add_argument("--no-fem-compare", dest="fem_compare", action="store_false")
    parser.add_argument("--matrix-dump", action="store_true", help="dump the level-0 matrix")
    args = parser.parse_args(argv)

    if not 0.0 < args.theta <= 1.0:
        print("error: theta must lie in (0,1]", file=sys.stderr)
        return 2
    if not 0.0 < args.theta_prime <= args.theta:
        print("error: theta-prime must lie in (0, theta]", file=sys.stderr)
        return 2
    if args.mode == "uniform" and args.levels is None:
        print("error: uniform mode needs --levels", file=sys.stderr)
        return 2
    if args.levels is not None and args.levels < 1:
        print("error: --levels must be positive", file=sys.stderr)
        return 2

    try:
        problem = _load_problem(args.problem)
    except (ParseError, UnknownBuiltin, NonSymmetricCoefficient, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory: {exc}", file=sys.stderr)
        return 2

    if args.matrix_dump:
        system = assemble_fvm(problem.initial_mesh, build_dual(problem.initial_mesh), problem)
        dump_matrix_coo(system, out_dir / "fvm_matrix_level0.txt")

    try:
        if args.mode == "adaptive":
            records = run_adaptive(
                problem,
                args.theta,
                args.theta_prime,
                max_elements=args.max_elements,
                max_levels=args.levels,
                eta_tol=args.eta_tol,
                fem_compare=args.fem_compare,
            )
        else:
            records = run_uniform(problem, args.levels, fem_compare=args.fem_compare)
    except SolverFailure as failure:
        if failure.records:
            write_records_csv(failure.records, out_dir / "records.csv")
        print(f"error: {failure}", file=sys.stderr)
        return 3

    write_records_csv(records, out_dir / "records.csv")
    config = {
        "problem": args.problem,
        "theta": args.theta,
        "theta_prime": args.theta_prime,
        "mode": args.mode,
        "max_elements": args.max_elements,
        "levels": args.levels,
        "eta_tol": args.eta_tol,
    }
    summary = build_summary(records, problem.label, args.mode, config)
    with open(out_dir / "summary.json", "w", encoding="utf-8") as handle:
        json.dump(summary, handle, indent=2, default=_json_default)
        handle.write("\n")
    return 0


def _json_default(obj):
    import numpy as np

    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
