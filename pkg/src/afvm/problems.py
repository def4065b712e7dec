"""Problem definitions: diffusion coefficient, source, boundary data, exact solution.

All field callables are vectorized: a coefficient maps (n, 2) points to
(n, 2, 2) symmetric matrices, scalar fields map (n, 2) to (n,).  The two
built-in benchmarks carry analytic solutions and coefficient derivatives;
their right-hand sides are produced by :func:`derive_source`, which
differentiates the flux numerically so that no hand-derived closed form is
needed (a closed-form source can still be supplied for custom problems).
"""

from __future__ import annotations

import ast
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from afvm.mesh import Triangulation, build_triangulation, mesh_from_json


class ParseError(Exception):
    """A problem config or expression could not be parsed."""


class UnknownBuiltin(Exception):
    """The requested builtin problem name does not exist."""


class NonSymmetricCoefficient(Exception):
    """The configured coefficient matrix is not symmetric."""


class EvaluationOutsideDomain(Exception):
    """A field evaluation produced non-finite values."""


@dataclass
class ProblemSpec:
    """A diffusion problem -div(A grad u) = f with Dirichlet data.

    ``coefficient_kind`` is ``"analytic"`` (A evaluable at any point) or
    ``"elementwise_constant"`` (A constant per mesh region, looked up through
    ``region_coefficients`` by the element's region tag).
    """

    label: str
    initial_mesh: Triangulation
    coefficient: Optional[Callable]
    source: Callable
    dirichlet: Callable
    coefficient_kind: str = "analytic"
    exact: Optional[Callable] = None
    exact_grad: Optional[Callable] = None
    coefficient_grad: Optional[Callable] = None
    region_coefficients: Optional[np.ndarray] = None
    lambda_bounds: Optional[tuple] = None
    fd_step: float = field(default=0.0)

    def __post_init__(self):
        if self.fd_step <= 0.0:
            span = self.initial_mesh.vertices.max(axis=0) - self.initial_mesh.vertices.min(axis=0)
            self.fd_step = 1e-4 * float(np.hypot(span[0], span[1]))


def eval_coefficient(problem: ProblemSpec, points, region=None) -> np.ndarray:
    """Coefficient matrices at points; ``region`` selects the one-sided value
    for elementwise-constant coefficients (per-point region tags)."""
    points = np.asarray(points, dtype=float)
    if problem.coefficient_kind == "elementwise_constant":
        if region is None:
            raise ValueError("elementwise-constant coefficient needs region tags")
        return problem.region_coefficients[np.asarray(region, dtype=np.int64)]
    return problem.coefficient(points)


def coefficient_divergence(problem: ProblemSpec, points, region=None) -> np.ndarray:
    """Row divergence of A: column k holds d1 A[0,k] + d2 A[1,k].

    Contracting this with the (constant) gradient of a P1 function gives
    div(A grad v) on an element.  Uses analytic coefficient derivatives when
    the problem provides them, otherwise the same fourth-order differencing
    as the source derivation.
    """
    points = np.asarray(points, dtype=float)
    if problem.coefficient_kind == "elementwise_constant":
        return np.zeros((points.shape[0], 2))
    if problem.coefficient_grad is not None:
        g = problem.coefficient_grad(points)
        return np.stack(
            [g[:, 0, 0, 0] + g[:, 1, 1, 0], g[:, 0, 0, 1] + g[:, 1, 1, 1]], axis=1
        )
    h = problem.fd_step
    out = np.zeros((points.shape[0], 2))
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        a2 = problem.coefficient(points + 2 * e)
        a1 = problem.coefficient(points + e)
        m1 = problem.coefficient(points - e)
        m2 = problem.coefficient(points - 2 * e)
        dk = (-a2 + 8 * a1 - 8 * m1 + m2) / (12 * h)
        out[:, 0] += dk[:, k, 0]
        out[:, 1] += dk[:, k, 1]
    return out


def _diff4(values_plus2, values_plus1, values_minus1, values_minus2, h):
    return (-values_plus2 + 8 * values_plus1 - 8 * values_minus1 + values_minus2) / (12 * h)


def derive_source(exact_u, coefficient, x, *, exact_grad=None, step=None):
    """f = -div(A grad u) by fourth-order central differences of the flux.

    ``x`` may be a single point or an (n, 2) batch.  The default step is 1e-4
    times the benchmark domain diameter 2*sqrt(2); pass ``step`` explicitly
    for differently sized domains.  When ``exact_grad`` is omitted the
    gradient itself is differenced from ``exact_u`` with the same scheme.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if step is None:
        step = 1e-4 * 2.0 * np.sqrt(2.0)

    if exact_grad is None:

        def grad(points):
            out = np.empty((points.shape[0], 2))
            for k in range(2):
                e = np.zeros(2)
                e[k] = step
                out[:, k] = _diff4(
                    exact_u(points + 2 * e),
                    exact_u(points + e),
                    exact_u(points - e),
                    exact_u(points - 2 * e),
                    step,
                )
            return out

    else:
        grad = exact_grad

    def flux(points):
        a = coefficient(points)
        g = grad(points)
        return np.einsum("nij,nj->ni", a, g)

    f = np.zeros(pts.shape[0])
    for k in range(2):
        e = np.zeros(2)
        e[k] = step
        dk = _diff4(flux(pts + 2 * e), flux(pts + e), flux(pts - e), flux(pts - 2 * e), step)
        f -= dk[:, k]
    if not np.all(np.isfinite(f)):
        raise EvaluationOutsideDomain("source differencing hit a non-evaluable point")
    return float(f[0]) if single else f


def _crisscross_mesh(squares) -> Triangulation:
    """Union of unit squares, each split into four triangles by its center."""
    index: dict[tuple, int] = {}
    vertices: list[tuple] = []

    def vid(x, y):
        key = (float(x), float(y))
        if key not in index:
            index[key] = len(vertices)
            vertices.append(key)
        return index[key]

    elements = []
    for (x0, y0) in squares:
        c00 = vid(x0, y0)
        c10 = vid(x0 + 1, y0)
        c11 = vid(x0 + 1, y0 + 1)
        c01 = vid(x0, y0 + 1)
        m = vid(x0 + 0.5, y0 + 0.5)
        elements += [(c00, c10, m), (c10, c11, m), (c11, c01, m), (c01, c00, m)]
    return build_triangulation(np.array(vertices), np.array(elements))


def square_initial_mesh() -> Triangulation:
    """16 uniform triangles on (-1,1)^2 (four unit squares, criss-crossed)."""
    return _crisscross_mesh([(-1, -1), (0, -1), (-1, 0), (0, 0)])


def lshape_initial_mesh() -> Triangulation:
    """12 triangles on (-1,1)^2 minus the quadrant [0,1]x[-1,0]."""
    return _crisscross_mesh([(-1, -1), (-1, 0), (0, 0)])


def problem_square_smooth() -> ProblemSpec:
    """Smooth benchmark on the square with a variable full diffusion matrix."""

    def exact(points):
        s = points[:, 0] ** 2 + points[:, 1] ** 2
        return (1.0 - 10.0 * s) * np.exp(-5.0 * s)

    def exact_grad(points):
        s = points[:, 0] ** 2 + points[:, 1] ** 2
        factor = (100.0 * s - 30.0) * np.exp(-5.0 * s)
        return factor[:, None] * points

    def coefficient(points):
        x1, x2 = points[:, 0], points[:, 1]
        a = np.empty((points.shape[0], 2, 2))
        a[:, 0, 0] = 10.0 + np.cos(x1)
        a[:, 0, 1] = 9.0 * x1 * x2
        a[:, 1, 0] = a[:, 0, 1]
        a[:, 1, 1] = 10.0 + np.sin(x2)
        return a

    def coefficient_grad(points):
        x1, x2 = points[:, 0], points[:, 1]
        g = np.zeros((points.shape[0], 2, 2, 2))
        g[:, 0, 0, 0] = -np.sin(x1)
        g[:, 0, 0, 1] = 9.0 * x2
        g[:, 0, 1, 0] = 9.0 * x2
        g[:, 1, 0, 1] = 9.0 * x1
        g[:, 1, 1, 0] = 9.0 * x1
        g[:, 1, 1, 1] = np.cos(x2)
        return g

    mesh = square_initial_mesh()
    step = 1e-4 * 2.0 * np.sqrt(2.0)

    def source(points):
        return derive_source(exact, coefficient, points, exact_grad=exact_grad, step=step)

    return ProblemSpec(
        label="square-smooth",
        initial_mesh=mesh,
        coefficient=coefficient,
        coefficient_grad=coefficient_grad,
        source=source,
        dirichlet=exact,
        exact=exact,
        exact_grad=exact_grad,
        lambda_bounds=(0.82293, 10.84096),
    )


def _lshape_polar(points):
    """Polar coordinates with the angle branch cut inside the removed quadrant.

    The angle lies in [-pi/4, 7pi/4); inside the domain it covers [0, 3pi/2].
    Placing the cut on the removed quadrant's bisector keeps the solution
    formula smooth across both reentrant legs, so difference stencils that
    poke slightly past a leg still see the right analytic continuation.
    """
    r = np.hypot(points[:, 0], points[:, 1])
    phi = np.arctan2(points[:, 1], points[:, 0])
    phi = np.where(phi < -0.25 * np.pi, phi + 2.0 * np.pi, phi)
    return r, phi


def problem_lshape_singular() -> ProblemSpec:
    """L-shape benchmark whose solution has the generic corner singularity."""

    def exact(points):
        r, phi = _lshape_polar(points)
        return np.cbrt(r * r) * np.sin(2.0 * phi / 3.0)

    def exact_grad(points):
        r, phi = _lshape_polar(points)
        with np.errstate(divide="ignore"):
            scale = np.where(r > 0.0, 2.0 / (3.0 * np.cbrt(r)), 0.0)
        return scale[:, None] * np.stack(
            [-np.sin(phi / 3.0), np.cos(phi / 3.0)], axis=1
        )

    def coefficient(points):
        x1, x2 = points[:, 0], points[:, 1]
        s = x1 * x1 + x2 * x2
        a = np.empty((points.shape[0], 2, 2))
        a[:, 0, 0] = 5.0 + s * np.cos(x1)
        a[:, 0, 1] = s * s
        a[:, 1, 0] = a[:, 0, 1]
        a[:, 1, 1] = 5.0 + s * np.sin(x2)
        return a

    def coefficient_grad(points):
        x1, x2 = points[:, 0], points[:, 1]
        s = x1 * x1 + x2 * x2
        g = np.zeros((points.shape[0], 2, 2, 2))
        g[:, 0, 0, 0] = 2.0 * x1 * np.cos(x1) - s * np.sin(x1)
        g[:, 1, 0, 0] = 2.0 * x2 * np.cos(x1)
        g[:, 0, 0, 1] = 4.0 * s * x1
        g[:, 0, 1, 0] = g[:, 0, 0, 1]
        g[:, 1, 0, 1] = 4.0 * s * x2
        g[:, 1, 1, 0] = g[:, 1, 0, 1]
        g[:, 0, 1, 1] = 2.0 * x1 * np.sin(x2)
        g[:, 1, 1, 1] = 2.0 * x2 * np.sin(x2) + s * np.cos(x2)
        return g

    mesh = lshape_initial_mesh()

    def source(points):
        # Closed form instead of flux differencing: near the reentrant corner
        # the gradient scales like r^(-1/3), so difference stencils of any
        # fixed step break down once adaptive refinement shrinks the corner
        # elements below the step.  The polar second derivatives are simple,
        # and the identity part of A drops out (the solution is harmonic).
        points = np.atleast_2d(np.asarray(points, dtype=float))
        x1, x2 = points[:, 0], points[:, 1]
        r, phi = _lshape_polar(points)
        s = r * r
        with np.errstate(divide="ignore", invalid="ignore"):
            inv13 = np.where(r > 0.0, r ** (-1.0 / 3.0), 0.0)
            inv43 = np.where(r > 0.0, r ** (-4.0 / 3.0), 0.0)
        ux = -(2.0 / 3.0) * inv13 * np.sin(phi / 3.0)
        uy = (2.0 / 3.0) * inv13 * np.cos(phi / 3.0)
        uxx = (2.0 / 9.0) * inv43 * np.sin(4.0 * phi / 3.0)
        uxy = -(2.0 / 9.0) * inv43 * np.cos(4.0 * phi / 3.0)
        a_diff = s * (np.cos(x1) - np.sin(x2))  # A11 - A22; u_yy = -u_xx
        a12 = s * s
        d1 = 2.0 * x1 * np.cos(x1) - s * np.sin(x1) + 4.0 * s * x2
        d2 = 4.0 * s * x1 + 2.0 * x2 * np.sin(x2) + s * np.cos(x2)
        return -(a_diff * uxx + 2.0 * a12 * uxy + d1 * ux + d2 * uy)

    return ProblemSpec(
        label="lshape-singular",
        initial_mesh=mesh,
        coefficient=coefficient,
        coefficient_grad=coefficient_grad,
        source=source,
        dirichlet=exact,
        exact=exact,
        exact_grad=exact_grad,
        lambda_bounds=(0.46689, 5.14751),
    )


def problem_elementwise_constant(mesh, region_matrices, source, dirichlet) -> ProblemSpec:
    """Problem with A constant per mesh region (tag indexes the matrix table)."""
    region_matrices = np.asarray(region_matrices, dtype=float)
    if not np.allclose(region_matrices, region_matrices.transpose(0, 2, 1)):
        raise NonSymmetricCoefficient("per-region matrices must be symmetric")
    return ProblemSpec(
        label="elementwise-constant",
        initial_mesh=mesh,
        coefficient=None,
        coefficient_kind="elementwise_constant",
        region_coefficients=region_matrices,
        source=source,
        dirichlet=dirichlet,
    )


def coefficient_eigenvalue_range(problem: ProblemSpec, n: int = 401) -> tuple[float, float]:
    """Extrema over an n-by-n bounding-box grid of A's smallest eigenvalue.

    The declared ``lambda_bounds`` of the built-in problems follow this
    sampling convention.
    """
    lo = problem.initial_mesh.vertices.min(axis=0)
    hi = problem.initial_mesh.vertices.max(axis=0)
    x = np.linspace(lo[0], hi[0], n)
    y = np.linspace(lo[1], hi[1], n)
    xx, yy = np.meshgrid(x, y, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    a = problem.coefficient(pts)
    tr = a[:, 0, 0] + a[:, 1, 1]
    disc = np.sqrt((a[:, 0, 0] - a[:, 1, 1]) ** 2 + 4.0 * a[:, 0, 1] ** 2)
    lam_min = 0.5 * (tr - disc)
    return float(lam_min.min()), float(lam_min.max())


_ALLOWED_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "pow": np.power}
_ALLOWED_NAMES = ("x1", "x2", "r", "phi")
_ALLOWED_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)


def compile_expression(text: str) -> Callable:
    """Compile a small arithmetic expression over x1, x2, r, phi.

    Supported: numbers, + - * / **, unary minus, and sin/cos/exp/pow calls.
    The returned callable maps (n, 2) points to (n,) values; r and phi are the
    polar coordinates with phi in [0, 2*pi).
    """
    try:
        tree = ast.parse(str(text), mode="eval")
    except SyntaxError as exc:
        raise ParseError(f"bad expression {text!r}: {exc}") from exc

    def check(node):
        if isinstance(node, ast.Expression):
            check(node.body)
        elif isinstance(node, ast.BinOp) and isinstance(node.op, _ALLOWED_BINOPS):
            check(node.left)
            check(node.right)
        elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            check(node.operand)
        elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            pass
        elif isinstance(node, ast.Name) and node.id in _ALLOWED_NAMES:
            pass
        elif (
            isinstance(node, ast.Call)
            and isinstance(node.func, ast.Name)
            and node.func.id in _ALLOWED_FUNCS
            and not node.keywords
        ):
            for arg in node.args:
                check(arg)
        else:
            raise ParseError(f"unsupported syntax in expression {text!r}")

    check(tree)
    code = compile(tree, "<expression>", "eval")

    def evaluate(points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        x1, x2 = points[:, 0], points[:, 1]
        r = np.hypot(x1, x2)
        phi = np.mod(np.arctan2(x2, x1), 2.0 * np.pi)
        env = {"x1": x1, "x2": x2, "r": r, "phi": phi, **_ALLOWED_FUNCS}
        out = eval(code, {"__builtins__": {}}, env)
        return np.broadcast_to(np.asarray(out, dtype=float), x1.shape).copy()

    return evaluate


_BUILTINS = {
    "square-smooth": problem_square_smooth,
    "lshape-singular": problem_lshape_singular,
}


def problem_from_json(path) -> ProblemSpec:
    """Load a problem from a config file (builtin alias or expression-based)."""
    with open(path, encoding="utf-8") as handle:
        try:
            config = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
    return problem_from_config(config)


def problem_from_config(config: dict) -> ProblemSpec:
    if "builtin" in config:
        name = config["builtin"]
        if name not in _BUILTINS:
            raise UnknownBuiltin(f"unknown builtin problem {name!r}")
        return _BUILTINS[name]()

    for key in ("mesh", "coefficient"):
        if key not in config:
            raise ParseError(f"problem config needs a {key!r} entry")
    mesh = mesh_from_json(config["mesh"]) if isinstance(config["mesh"], (dict, str)) else config["mesh"]
    entries = config["coefficient"]
    if not (isinstance(entries, list) and len(entries) == 2 and all(len(row) == 2 for row in entries)):
        raise ParseError("coefficient must be a 2x2 matrix of expressions")
    funcs = [[compile_expression(entries[i][j]) for j in range(2)] for i in range(2)]

    # symmetry check on a probe grid over the mesh bounding box
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    g = np.linspace(0.0, 1.0, 7)
    xx, yy = np.meshgrid(lo[0] + g * (hi[0] - lo[0]), lo[1] + g * (hi[1] - lo[1]))
    probe = np.column_stack([xx.ravel(), yy.ravel()])
    if not np.allclose(funcs[0][1](probe), funcs[1][0](probe), rtol=1e-12, atol=1e-12):
        raise NonSymmetricCoefficient("coefficient entries (0,1) and (1,0) differ")

    def coefficient(points):
        points = np.asarray(points, dtype=float)
        a = np.empty((points.shape[0], 2, 2))
        a[:, 0, 0] = funcs[0][0](points)
        a[:, 0, 1] = funcs[0][1](points)
        a[:, 1, 0] = a[:, 0, 1]
        a[:, 1, 1] = funcs[1][1](points)
        return a

    exact = compile_expression(config["exact"]) if config.get("exact") else None
    dirichlet = compile_expression(config.get("dirichlet", "0"))

    span = mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)
    step = 1e-4 * float(np.hypot(span[0], span[1]))
    source_cfg = config.get("source", "derived")
    if source_cfg == "derived":
        if exact is None:
            raise ParseError("source 'derived' requires an exact solution")

        def source(points):
            return derive_source(exact, coefficient, points, step=step)

    else:
        source = compile_expression(source_cfg)

    return ProblemSpec(
        label=str(config.get("label", "custom")),
        initial_mesh=mesh,
        coefficient=coefficient,
        source=source,
        dirichlet=dirichlet,
        exact=exact,
    )
