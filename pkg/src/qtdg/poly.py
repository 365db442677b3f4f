"""Polynomials in scaled monomial form.

A polynomial is stored as v(x) = sum_k a_k ((x - center)/h)^k with the dense
coefficient vector indexed by the graded order of multiindex.enumerate_upto.
With this normalization D^k v(center) = k! a_k / h^{|k|}, so Taylor data and
coefficients convert by pure scaling (see taylor_from_jet).
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .multiindex import (
    dim_full,
    enumerate_upto,
    exponent_array,
    mi_binomial,
    mi_factorial,
    monomial_links,
    position_map,
)


class ScaledMonomialPoly:
    """Dense scaled-monomial polynomial of total degree <= degree."""

    def __init__(self, d, degree, center, scale, coeffs):
        if scale <= 0.0:
            raise ValueError("scale must be positive")
        self.d = d
        self.degree = degree
        self.center = np.asarray(center, dtype=np.float64).reshape(d)
        self.scale = float(scale)
        coeffs = np.asarray(coeffs, dtype=np.float64).reshape(-1)
        if coeffs.shape[0] != dim_full(d, degree):
            raise ValueError(
                f"expected {dim_full(d, degree)} coefficients for degree {degree}, "
                f"got {coeffs.shape[0]}"
            )
        self.coeffs = coeffs

    # -- evaluation ---------------------------------------------------------

    def _scaled(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[1] != self.d:
            raise ValueError(f"points must have dimension {self.d}")
        return (pts - self.center) / self.scale, single

    def eval(self, pts):
        """Values at pts of shape (d,) or (N, d)."""
        scaled, single = self._scaled(pts)
        parent, axis, _, _ = monomial_links(self.d, self.degree)
        vals = _kernels.monomial_values(scaled, parent, axis) @ self.coeffs
        return float(vals[0]) if single else vals

    def eval_grad(self, pts):
        """Gradients at pts: shape (d,) or (N, d)."""
        scaled, single = self._scaled(pts)
        parent, axis, down, kval = monomial_links(self.d, self.degree)
        _, derivs = _kernels.monomial_tables(scaled, parent, axis, down, kval)
        grad = np.einsum("nmd,m->nd", derivs, self.coeffs) / self.scale
        return grad[0] if single else grad

    # -- derivatives --------------------------------------------------------

    def derivative(self, i):
        """The polynomial D^i v (degree drops by |i|)."""
        i = tuple(int(v) for v in i)
        if len(i) != self.d or any(v < 0 for v in i):
            raise ValueError(f"bad multi-index {i}")
        q = self.degree - sum(i)
        if q < 0:
            return ScaledMonomialPoly(self.d, 0, self.center, self.scale, [0.0])
        pos_low = position_map(self.d, q)
        out = np.zeros(dim_full(self.d, q))
        hpow = self.scale ** sum(i)
        for k, a in zip(enumerate_upto(self.d, self.degree), self.coeffs):
            if any(kk < ii for kk, ii in zip(k, i)):
                continue
            tgt = tuple(kk - ii for kk, ii in zip(k, i))
            fall = 1.0
            for kk, ii in zip(k, i):
                for r in range(ii):
                    fall *= kk - r
            out[pos_low[tgt]] += a * fall / hpow
        return ScaledMonomialPoly(self.d, q, self.center, self.scale, out)

    def derivative_at_center(self, i):
        """D^i v(center) = i! a_i / h^{|i|}; 0 for |i| > degree."""
        i = tuple(int(v) for v in i)
        if sum(i) > self.degree:
            return 0.0
        a = self.coeffs[position_map(self.d, self.degree)[i]]
        return mi_factorial(i) * float(a) / self.scale ** sum(i)

    # -- misc ----------------------------------------------------------------

    def dump(self):
        """Debug listing, one 'k1 k2 ... : a_k' line per multi-index."""
        lines = []
        for k, a in zip(enumerate_upto(self.d, self.degree), self.coeffs):
            lines.append(" ".join(str(v) for v in k) + f" : {float(a)!r}")
        return "\n".join(lines)

    def __repr__(self):
        return (
            f"ScaledMonomialPoly(d={self.d}, degree={self.degree}, "
            f"center={tuple(self.center)}, scale={self.scale})"
        )


def taylor_from_jet(jet, scale):
    """Degree-(jet.order) Taylor polynomial of the jet, scaled by `scale`.

    a_k = scale^{|k|} * jet.coeffs[k]; the polynomial then satisfies
    D^k v(center) = D^k f(center) for every stored order.
    """
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    exps = exponent_array(jet.d, jet.order)
    powers = scale ** exps.sum(axis=1)
    return ScaledMonomialPoly(jet.d, jet.order, jet.center, scale, jet.coeffs * powers)


def apply_operator_derivatives(v, op, i):
    """D^i (Mv)(x^E) for M = sum_j alpha_j D^j, via the Leibniz expansion.

    v must be centered at the operator's expansion point (op.center) with
    matching scale irrelevant; |i| must not exceed the stored jet order of the
    alpha coefficients.
    """
    i = tuple(int(x) for x in i)
    if not np.allclose(v.center, op.center):
        raise ValueError("polynomial and operator must share the expansion center")
    total = 0.0
    for j, jet in op.alpha.items():
        for r in _sub_indices(i):
            c = mi_binomial(i, r)
            dv = v.derivative_at_center(
                tuple(ii - rr + jj for ii, rr, jj in zip(i, r, j))
            )
            if c and dv:
                total += c * jet.derivative(r) * dv
    return total


def _sub_indices(i):
    out = [()]
    for ik in i:
        out = [t + (v,) for t in out for v in range(ik + 1)]
    return out
