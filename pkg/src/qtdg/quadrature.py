"""Quadrature rules: Gauss segments, triangles, convex polygons.

Conventions:
* ``gauss_segment(n)`` lives on [0, 1] with weights summing to 1.
* ``rule_triangle(degree)`` returns barycentric nodes and weights summing to
  1; the integral over a physical triangle T is |T| * sum w_i f(lam_i @ verts).
  The rule is a collapsed (Duffy) tensor-product Gauss rule, positive weights,
  exact to the requested total degree.
* ``rule_polygon(vertices, degree)`` fans a convex polygon from its centroid
  and returns physical points with weights summing to the polygon area.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

_MAX_PTS = 20


class UnsupportedOrderError(ValueError):
    """Requested rule is outside the supported point/degree range."""


@lru_cache(maxsize=None)
def gauss_segment(npts):
    """npts-point Gauss-Legendre rule on [0,1]; exact to degree 2*npts - 1."""
    if not 1 <= npts <= _MAX_PTS:
        raise UnsupportedOrderError(f"gauss_segment supports 1..{_MAX_PTS} points")
    t, w = np.polynomial.legendre.leggauss(npts)
    return (t + 1.0) / 2.0, w / 2.0


def npts_for_degree(degree):
    """Smallest Gauss point count exact for polynomials of `degree`."""
    n = max((degree + 2) // 2, 1)
    if n > _MAX_PTS:
        raise UnsupportedOrderError(f"degree {degree} needs {n} > {_MAX_PTS} points")
    return n


@lru_cache(maxsize=None)
def rule_triangle(degree):
    """Barycentric nodes/weights exact for total degree `degree`, weights > 0.

    Duffy collapse of a tensor Gauss rule: x = u, y = v*(1-u) maps the unit
    square onto the reference triangle with Jacobian (1-u), which raises the
    u-degree by one; the v/u point counts are chosen accordingly.
    """
    if degree < 0:
        raise UnsupportedOrderError("degree must be >= 0")
    nu = npts_for_degree(degree + 1)
    nv = npts_for_degree(degree)
    u, wu = gauss_segment(nu)
    v, wv = gauss_segment(nv)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    x = uu.ravel()
    y = (vv * (1.0 - uu)).ravel()
    w = (np.outer(wu * (1.0 - u), wv)).ravel()
    w = w / w.sum()  # normalize: reference triangle has area 1/2
    bary = np.column_stack([1.0 - x - y, x, y])
    return bary, w


def triangle_points(vertices, degree):
    """Physical points/weights for one triangle; weights sum to its area."""
    verts = np.asarray(vertices, dtype=np.float64)
    bary, w = rule_triangle(degree)
    pts = bary @ verts
    area = 0.5 * abs(
        (verts[1, 0] - verts[0, 0]) * (verts[2, 1] - verts[0, 1])
        - (verts[2, 0] - verts[0, 0]) * (verts[1, 1] - verts[0, 1])
    )
    return pts, w * area


def rule_polygon(vertices, degree):
    """Centroid-fan rule for a convex polygon; weights sum to the area."""
    verts = np.asarray(vertices, dtype=np.float64)
    if verts.shape[0] < 3:
        raise ValueError("a polygon needs at least 3 vertices")
    centroid = verts.mean(axis=0)
    pts, wts = [], []
    k = verts.shape[0]
    for a in range(k):
        tri = np.array([centroid, verts[a], verts[(a + 1) % k]])
        p, w = triangle_points(tri, degree)
        pts.append(p)
        wts.append(w)
    return np.vstack(pts), np.concatenate(wts)


def segment_points(a, b, degree):
    """Physical Gauss points on the segment [a, b]; weights sum to |b - a|."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    t, w = gauss_segment(npts_for_degree(degree))
    pts = a[None, :] + t[:, None] * (b - a)[None, :]
    return pts, w * float(np.linalg.norm(b - a))
