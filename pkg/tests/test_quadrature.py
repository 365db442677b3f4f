import math

import numpy as np
import pytest
import sympy as sp

from qtdg.quadrature import (
    UnsupportedOrderError,
    gauss_segment,
    npts_for_degree,
    rule_polygon,
    rule_triangle,
    segment_points,
    triangle_points,
)

EPS = 1e-13


def test_gauss_segment_basics():
    x, w = gauss_segment(5)
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.all((x > 0) & (x < 1))
    assert np.all(w > 0)


@pytest.mark.parametrize("n", range(1, 21))
def test_gauss_segment_exactness(n):
    x, w = gauss_segment(n)
    for k in range(2 * n):  # exact through degree 2n-1
        assert w @ x**k == pytest.approx(1.0 / (k + 1), rel=1e-13, abs=1e-14)


def test_gauss_segment_bounds():
    with pytest.raises(UnsupportedOrderError):
        gauss_segment(0)
    with pytest.raises(UnsupportedOrderError):
        gauss_segment(21)
    with pytest.raises(UnsupportedOrderError):
        npts_for_degree(40)


@pytest.mark.parametrize("degree", [0, 1, 2, 3, 4, 6, 8, 10, 16])
def test_triangle_exactness_reference(degree):
    # oracle: int over the unit right triangle of x^a y^b = a! b! / (a+b+2)!
    bary, w = rule_triangle(degree)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.all(w > 0)
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    pts = bary @ verts
    area = 0.5
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = (
                math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
            )
            got = area * (w @ (pts[:, 0] ** a * pts[:, 1] ** b))
            assert got == pytest.approx(exact, rel=1e-12, abs=1e-15)


def test_triangle_x2y2_equals_1_over_180():
    bary, w = rule_triangle(4)
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    pts = bary @ verts
    got = 0.5 * (w @ (pts[:, 0] ** 2 * pts[:, 1] ** 2))
    assert got == pytest.approx(1.0 / 180.0, rel=1e-13)


def test_triangle_points_physical():
    verts = np.array([[1.0, 1.0], [3.0, 1.5], [1.5, 4.0]])
    pts, w = triangle_points(verts, 3)
    area = 0.5 * abs(
        (verts[1, 0] - verts[0, 0]) * (verts[2, 1] - verts[0, 1])
        - (verts[2, 0] - verts[0, 0]) * (verts[1, 1] - verts[0, 1])
    )
    assert w.sum() == pytest.approx(area, rel=1e-14)
    # affine-exactness: integrate x + 2y against sympy over the same triangle
    x, y = sp.symbols("x y")
    exact = _sympy_triangle_integral(verts, x + 2 * y, (x, y))
    assert pts[:, 0] @ w + 2 * (pts[:, 1] @ w) == pytest.approx(exact, rel=1e-13)


def _sympy_triangle_integral(verts, expr, symbols):
    # independent affine-map route: pull back to the reference triangle
    x, y = symbols
    u, v = sp.symbols("u v")
    v0, v1, v2 = [sp.Matrix(vv.tolist()) for vv in verts]
    p = v0 + u * (v1 - v0) + v * (v2 - v0)
    jac = sp.Abs((v1 - v0)[0] * (v2 - v0)[1] - (v2 - v0)[0] * (v1 - v0)[1])
    pulled = expr.subs({x: p[0], y: p[1]}) * jac
    inner = sp.integrate(pulled, (v, 0, 1 - u))
    return float(sp.integrate(inner, (u, 0, 1)))


@pytest.mark.parametrize("degree", [1, 2, 4, 6])
def test_polygon_unit_square(degree):
    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    pts, w = rule_polygon(square, degree)
    assert w.sum() == pytest.approx(1.0, rel=1e-14)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            got = w @ (pts[:, 0] ** a * pts[:, 1] ** b)
            assert got == pytest.approx(1.0 / ((a + 1) * (b + 1)), rel=1e-12, abs=1e-14)


def test_polygon_matches_sympy_on_convex_pentagon():
    verts = np.array(
        [[0.0, 0.0], [2.0, 0.2], [2.5, 1.5], [1.0, 2.5], [-0.5, 1.2]]
    )
    pts, w = rule_polygon(verts, 4)
    x, y = sp.symbols("x y")
    expr = x**2 * y + 3 * y**2 - x + 1
    exact = 0.0
    for a in range(1, verts.shape[0] - 1):  # fan from vertex 0: independent split
        tri = np.array([verts[0], verts[a], verts[a + 1]])
        exact += _sympy_triangle_integral(tri, expr, (x, y))
    got = w @ (pts[:, 0] ** 2 * pts[:, 1] + 3 * pts[:, 1] ** 2 - pts[:, 0] + 1)
    assert got == pytest.approx(exact, rel=1e-12)


def test_segment_points():
    a, b = np.array([1.0, 2.0]), np.array([4.0, 6.0])
    pts, w = segment_points(a, b, 5)
    assert w.sum() == pytest.approx(5.0, rel=1e-14)
    # integrate the linear function x + y exactly: parametrize and compare
    t = sp.symbols("t")
    exact = float(sp.integrate((1 + 3 * t) + (2 + 4 * t), (t, 0, 1)) * 5)
    assert (pts.sum(axis=1) @ w) == pytest.approx(exact, rel=1e-14)
