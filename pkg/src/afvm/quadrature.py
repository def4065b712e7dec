"""Fixed-order quadrature on triangles and segments, plus integral means.

Triangle rules are given in barycentric coordinates with weights summing to
one (so the integral is weight-sum times the triangle area): degree 1 is the
centroid rule, degree 2 the symmetric 3-point rule, degree 5 the 7-point
rule.  Segments use 1/2/3-point Gauss-Legendre, exact up to degree
2*npoints - 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UnsupportedDegree(Exception):
    """No rule of the requested exactness degree is available."""


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray


def _tri_rule(degree: int) -> QuadratureRule:
    if degree == 1:
        pts = np.array([[1 / 3, 1 / 3, 1 / 3]])
        w = np.array([1.0])
    elif degree == 2:
        pts = np.array(
            [
                [2 / 3, 1 / 6, 1 / 6],
                [1 / 6, 2 / 3, 1 / 6],
                [1 / 6, 1 / 6, 2 / 3],
            ]
        )
        w = np.full(3, 1 / 3)
    elif degree == 5:
        s15 = np.sqrt(15.0)
        b1 = (6.0 - s15) / 21.0
        a1 = 1.0 - 2.0 * b1
        b2 = (6.0 + s15) / 21.0
        a2 = 1.0 - 2.0 * b2
        w1 = (155.0 - s15) / 1200.0
        w2 = (155.0 + s15) / 1200.0
        pts = np.array(
            [
                [1 / 3, 1 / 3, 1 / 3],
                [a1, b1, b1],
                [b1, a1, b1],
                [b1, b1, a1],
                [a2, b2, b2],
                [b2, a2, b2],
                [b2, b2, a2],
            ]
        )
        w = np.array([9 / 40, w1, w1, w1, w2, w2, w2])
    else:
        raise UnsupportedDegree(f"no triangle rule of degree {degree}")
    return QuadratureRule(points=pts, weights=w)


def _gauss01(npoints: int) -> QuadratureRule:
    """Gauss-Legendre nodes/weights on [0, 1], weights summing to one."""
    if npoints == 1:
        t = np.array([0.5])
        w = np.array([1.0])
    elif npoints == 2:
        c = 0.5 / np.sqrt(3.0)
        t = np.array([0.5 - c, 0.5 + c])
        w = np.array([0.5, 0.5])
    elif npoints == 3:
        c = 0.5 * np.sqrt(0.6)
        t = np.array([0.5 - c, 0.5, 0.5 + c])
        w = np.array([5 / 18, 8 / 18, 5 / 18])
    else:
        raise UnsupportedDegree(f"no {npoints}-point segment rule")
    return QuadratureRule(points=t, weights=w)


_TRI_CACHE = {d: _tri_rule(d) for d in (1, 2, 5)}
_SEG_CACHE = {n: _gauss01(n) for n in (1, 2, 3)}


def tri_rule(degree: int) -> QuadratureRule:
    try:
        return _TRI_CACHE[degree]
    except KeyError:
        raise UnsupportedDegree(f"no triangle rule of degree {degree}") from None


def segment_rule(npoints: int) -> QuadratureRule:
    try:
        return _SEG_CACHE[npoints]
    except KeyError:
        raise UnsupportedDegree(f"no {npoints}-point segment rule") from None


def _tri_area(triangle: np.ndarray) -> float:
    d1 = triangle[1] - triangle[0]
    d2 = triangle[2] - triangle[0]
    return 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])


def integrate_triangle(f, triangle, degree: int) -> float:
    """Integrate ``f`` over the triangle; exact up to the rule's degree.

    ``f`` is called with an (n, 2) array of points and must return (n,).
    """
    triangle = np.asarray(triangle, dtype=float)
    rule = tri_rule(degree)
    pts = rule.points @ triangle
    vals = np.asarray(f(pts), dtype=float)
    return float(_tri_area(triangle) * (rule.weights * vals).sum())


def integrate_segment(f, endpoints, npoints: int) -> float:
    """Integrate ``f`` along a straight segment with Gauss quadrature."""
    endpoints = np.asarray(endpoints, dtype=float)
    rule = segment_rule(npoints)
    pts = endpoints[0] + rule.points[:, None] * (endpoints[1] - endpoints[0])
    vals = np.asarray(f(pts), dtype=float)
    length = float(np.linalg.norm(endpoints[1] - endpoints[0]))
    return float(length * (rule.weights * vals).sum())


def integral_mean(f, domain, degree: int = 5) -> float:
    """Mean value of ``f`` over a triangle ((3,2) array) or segment ((2,2))."""
    domain = np.asarray(domain, dtype=float)
    if domain.shape == (3, 2):
        area = _tri_area(domain)
        return integrate_triangle(f, domain, degree) / area
    if domain.shape == (2, 2):
        npoints = {1: 1, 2: 2, 3: 2, 4: 3, 5: 3}.get(degree)
        if npoints is None:
            raise UnsupportedDegree(f"no segment rule for degree {degree}")
        length = float(np.linalg.norm(domain[1] - domain[0]))
        return integrate_segment(f, domain, npoints) / length
    raise ValueError("domain must be a (3,2) triangle or (2,2) segment")
