import json

import numpy as np
import pytest

from afvm.problems import (
    NonSymmetricCoefficient,
    ParseError,
    UnknownBuiltin,
    coefficient_divergence,
    coefficient_eigenvalue_range,
    compile_expression,
    derive_source,
    problem_from_config,
    problem_from_json,
    problem_lshape_singular,
    problem_square_smooth,
)
from afvm.mesh import mesh_to_json

IDENTITY = lambda pts: np.broadcast_to(np.eye(2), (pts.shape[0], 2, 2)).copy()


def test_square_exact_values():
    p = problem_square_smooth()
    assert p.exact(np.array([[0.0, 0.0]]))[0] == pytest.approx(1.0, abs=1e-15)
    a = p.coefficient(np.array([[0.0, 0.0]]))[0]
    assert np.allclose(a, [[11.0, 0.0], [0.0, 10.0]])
    assert p.initial_mesh.n_elements == 16


def test_square_eigenvalue_bounds():
    p = problem_square_smooth()
    lo, hi = coefficient_eigenvalue_range(p)
    assert lo == pytest.approx(p.lambda_bounds[0], abs=1e-3)
    assert hi == pytest.approx(p.lambda_bounds[1], abs=1e-3)


def test_lshape_exact_values():
    q = problem_lshape_singular()
    assert q.exact(np.array([[-1.0, 0.0]]))[0] == pytest.approx(np.sqrt(3) / 2, rel=1e-14)
    assert q.exact(np.array([[0.0, 0.0]]))[0] == 0.0
    assert q.initial_mesh.n_elements == 12


def test_lshape_eigenvalue_bounds():
    q = problem_lshape_singular()
    lo, hi = coefficient_eigenvalue_range(q)
    assert lo == pytest.approx(q.lambda_bounds[0], abs=1e-3)
    assert hi == pytest.approx(q.lambda_bounds[1], abs=1e-3)


def test_coefficients_symmetric_positive_definite_at_random_points():
    rng = np.random.default_rng(31)
    for problem in (problem_square_smooth(), problem_lshape_singular()):
        pts = rng.uniform(-1, 1, size=(100_000, 2))
        a = problem.coefficient(pts)
        assert np.array_equal(a[:, 0, 1], a[:, 1, 0])
        tr = a[:, 0, 0] + a[:, 1, 1]
        disc = np.sqrt((a[:, 0, 0] - a[:, 1, 1]) ** 2 + 4 * a[:, 0, 1] ** 2)
        lam_min = 0.5 * (tr - disc)
        assert lam_min.min() >= problem.lambda_bounds[0] - 1e-6
        assert lam_min.max() <= problem.lambda_bounds[1] + 1e-3


def test_derive_source_quadratic():
    f = derive_source(lambda x: x[:, 0] ** 2, IDENTITY, np.array([0.3, -0.4]))
    assert f == pytest.approx(-2.0, abs=1e-8)


def test_derive_source_harmonic():
    f = derive_source(lambda x: x[:, 0], IDENTITY, np.array([0.2, 0.1]))
    assert f == pytest.approx(0.0, abs=1e-9)


def test_derive_source_anisotropic():
    diag = lambda pts: np.broadcast_to(np.diag([2.0, 3.0]), (pts.shape[0], 2, 2)).copy()
    f = derive_source(lambda x: x[:, 0] ** 2 + x[:, 1] ** 2, diag, np.array([0.1, 0.7]))
    assert f == pytest.approx(-10.0, abs=1e-7)


def test_derive_source_matches_closed_form():
    u = lambda x: np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])
    pts = np.array([[0.3, 0.4], [0.1, 0.9], [-0.5, 0.25], [0.77, -0.33]])
    fd = derive_source(u, IDENTITY, pts)
    exact = 2 * np.pi**2 * u(pts)
    assert np.abs((fd - exact) / exact).max() <= 1e-8


def test_lshape_source_agrees_with_flux_differencing():
    q = problem_lshape_singular()
    rng = np.random.default_rng(2)
    pts = []
    while len(pts) < 100:
        x = rng.uniform(-0.95, 0.95, 2)
        if (x[0] > 0 and x[1] < 0) or np.hypot(*x) < 0.05:
            continue
        pts.append(x)
    pts = np.array(pts)
    fd = derive_source(q.exact, q.coefficient, pts, exact_grad=q.exact_grad)
    analytic = q.source(pts)
    assert np.abs(fd - analytic).max() <= 1e-8 * max(1.0, np.abs(analytic).max())


def test_square_source_from_flux_differencing():
    p = problem_square_smooth()
    pts = np.array([[0.0, 0.0], [0.5, -0.25]])
    direct = derive_source(p.exact, p.coefficient, pts, exact_grad=p.exact_grad)
    assert np.allclose(p.source(pts), direct, rtol=1e-12)


def test_coefficient_divergence_analytic_vs_differenced():
    p = problem_square_smooth()
    pts = np.array([[0.3, 0.4], [-0.6, 0.2]])
    analytic = coefficient_divergence(p, pts)
    stripped = type(p)(
        label=p.label,
        initial_mesh=p.initial_mesh,
        coefficient=p.coefficient,
        source=p.source,
        dirichlet=p.dirichlet,
    )
    differenced = coefficient_divergence(stripped, pts)
    assert np.abs(analytic - differenced).max() <= 1e-8


def test_builtin_aliases(tmp_path):
    for name in ("square-smooth", "lshape-singular"):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"builtin": name}))
        p = problem_from_json(path)
        assert p.label == name


def test_unknown_builtin(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"builtin": "nope"}))
    with pytest.raises(UnknownBuiltin):
        problem_from_json(path)


def test_nonsymmetric_coefficient_rejected():
    from afvm.problems import square_initial_mesh

    config = {
        "mesh": json.loads(mesh_to_json(square_initial_mesh())),
        "coefficient": [["1", "2"], ["0", "1"]],
        "source": "1",
    }
    with pytest.raises(NonSymmetricCoefficient):
        problem_from_config(config)


def test_expression_problem_round_trip():
    from afvm.problems import square_initial_mesh

    config = {
        "mesh": json.loads(mesh_to_json(square_initial_mesh())),
        "coefficient": [["1", "0"], ["0", "1"]],
        "exact": "sin(3.141592653589793*x1)*sin(3.141592653589793*x2)",
        "source": "derived",
        "dirichlet": "0",
    }
    p = problem_from_config(config)
    pts = np.array([[0.25, 0.5]])
    expected = 2 * np.pi**2 * np.sin(np.pi * 0.25) * np.sin(np.pi * 0.5)
    assert p.source(pts)[0] == pytest.approx(expected, rel=1e-7)


def test_expression_grammar():
    f = compile_expression("pow(r, 2) * cos(phi) + exp(-x1) - x2/2")
    pts = np.array([[1.0, 0.0]])
    assert f(pts)[0] == pytest.approx(1.0 + np.exp(-1.0), rel=1e-14)
    with pytest.raises(ParseError):
        compile_expression("__import__('os')")
    with pytest.raises(ParseError):
        compile_expression("x3 + 1")
    with pytest.raises(ParseError):
        compile_expression("sin(")
