"""Quasi-Trefftz polynomial spaces for operators M = sum_{|j|<=m} alpha_j D^j.

A degree-p quasi-Trefftz polynomial matches the source's derivatives at the
expansion point: D^i(Mv)(x^E) = D^i f(x^E) for all |i| <= p - m.  Its scaled
monomial coefficients split into

* a Cauchy block: a_k for k1 < m, fixed by m trace polynomials psi_r on the
  hyperplane x1 = x1^E (psi_r prescribes the r-th x1-derivative), and
* the remaining coefficients a_{i + m e1}, obtained by an explicit recursion
  sweeping the multi-indices i in ``algorithm1_order``; solvability only needs
  alpha_{m e1}(x^E) != 0.

``qt_construct`` is the readable single-element reference implementation;
``qt_construct_many`` runs the identical recursion vectorized over a batch of
expansion points (one numpy contraction per recursion step) and feeds the DG
space builder.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial

import numpy as np

from .coeffjet import Jet, algebra, jet_eval_many, parse
from .multiindex import (
    algorithm1_order,
    dim_full,
    dim_qt,
    enumerate_upto,
    mi_binomial,
    mi_factorial,
    position_map,
)
from .poly import ScaledMonomialPoly, apply_operator_derivatives


class DegenerateOperatorError(ValueError):
    """alpha_{m e1} vanishes at the expansion point (or K11 <= 0)."""


# ---------------------------------------------------------------------------
# operator and Cauchy data carriers


class OperatorJets:
    """Taylor jets of the coefficients alpha_j (|j| <= m) at one point.

    alpha maps multi-index tuples to Jet objects of a common order (>= the
    p - m needed by the construction); missing entries are zero coefficients.
    """

    def __init__(self, d, m, center, scale, alpha):
        if m < 1:
            raise ValueError("operator order m must be >= 1")
        if scale <= 0.0:
            raise ValueError("scale must be positive")
        self.d = d
        self.m = m
        self.center = np.asarray(center, dtype=np.float64).reshape(d)
        self.scale = float(scale)
        self.alpha = {tuple(j): jet for j, jet in alpha.items()}
        for j in self.alpha:
            if len(j) != d or sum(j) > m:
                raise ValueError(f"bad operator multi-index {j}")
        self.principal = (m,) + (0,) * (d - 1)
        star = self.alpha_value(self.principal)
        if star == 0.0:
            raise DegenerateOperatorError(
                "alpha_{m e1} vanishes at the expansion point"
            )

    @property
    def order(self):
        return min(jet.order for jet in self.alpha.values())

    def alpha_value(self, j):
        jet = self.alpha.get(tuple(j))
        return jet.value() if jet is not None else 0.0

    def alpha_derivative(self, j, r):
        jet = self.alpha.get(tuple(j))
        return jet.derivative(r) if jet is not None else 0.0


@dataclass
class CauchyData:
    """m trace polynomials psi_r on the hyperplane x1 = x1^E.

    data[r] maps (d-1)-variate multi-indices s to the coefficient of the
    scaled monomial ((x' - x'^E)/h)^s in psi_r; deg psi_r <= p - r.
    """

    d: int
    m: int
    p: int
    data: list = field(default_factory=list)

    def __post_init__(self):
        if not self.data:
            self.data = [{} for _ in range(self.m)]
        if len(self.data) != self.m:
            raise ValueError(f"need {self.m} trace polynomials, got {len(self.data)}")
        for r, poly in enumerate(self.data):
            for s in poly:
                if len(s) != self.d - 1:
                    raise ValueError(f"trace multi-index {s} must have length d-1")
                if sum(s) > self.p - r:
                    raise ValueError(
                        f"psi_{r} degree {sum(s)} exceeds the bound {self.p - r}"
                    )

    @classmethod
    def zero(cls, d, m, p):
        return cls(d, m, p)

    @classmethod
    def monomial(cls, d, m, p, r, s, value=1.0):
        """psi_r = value * scaled monomial s, all other traces zero."""
        data = [{} for _ in range(m)]
        data[r] = {tuple(s): value}
        return cls(d, m, p, data)


def qt_index_set(d, p, m):
    """Basis labels (r, s): r = 0..m-1, s over enumerate_upto(d-1, p-r)."""
    labels = []
    for r in range(m):
        labels.extend((r, s) for s in enumerate_upto(d - 1, p - r))
    assert len(labels) == dim_qt(d, p, m)
    return labels


# ---------------------------------------------------------------------------
# diffusion-advection-reaction -> alpha form


def _as_ast(expr, d):
    if expr is None:
        return None
    if isinstance(expr, str):
        return parse(expr, d)
    return expr


def dar_to_alpha_tables(K, beta, sigma, centers, p):
    """Batched alpha-form of L v = div(-K grad v + beta v) + sigma v.

    K: d x d nested sequence of expressions/strings (entries may be None for
    zero), beta: length-d sequence or None, sigma: expression or None.
    Returns (jlist, tabs, q): the multi-indices |j| <= 2 in graded order and
    their Taylor coefficient tables of shape (len(jlist), M_q, B) at order
    q = p - 2.

    Expanding the divergence gives, with e_a the unit multi-indices,
    alpha_{e_a + e_b} = -(K_ab + K_ba) for a != b, alpha_{2 e_a} = -K_aa,
    alpha_{e_b} = -sum_a D^{e_a} K_ab + beta_b, and
    alpha_0 = sum_a D^{e_a} beta_a + sigma.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    d = centers.shape[1]
    if p < 2:
        raise ValueError("dar operators need p >= 2")
    q = p - 2
    big = algebra(d, q + 1)
    mq = dim_full(d, q)
    nb = centers.shape[0]

    def tab_of(expr, order):
        ast = _as_ast(expr, d)
        if ast is None:
            return None
        return jet_eval_many(ast, centers, order)

    K = [[_as_ast(K[a][b], d) for b in range(d)] for a in range(d)]
    beta = [None] * d if beta is None else [_as_ast(b, d) for b in beta]
    if len(beta) != d:
        raise ValueError("beta must have one component per dimension")
    sigma = _as_ast(sigma, d)

    ktabs = [[tab_of(K[a][b], q + 1) for b in range(d)] for a in range(d)]
    btabs = [tab_of(b, q + 1) for b in beta]
    stab = tab_of(sigma, q)

    jlist = enumerate_upto(d, 2)
    tabs = np.zeros((len(jlist), mq, nb))
    jpos = {j: idx for idx, j in enumerate(jlist)}

    def add(j, table):
        if table is not None:
            tabs[jpos[j], :, :] += table[:mq]

    for a in range(d):
        for b in range(d):
            if ktabs[a][b] is None:
                continue
            j = tuple(
                (1 if c == a else 0) + (1 if c == b else 0) for c in range(d)
            )
            add(j, -ktabs[a][b])
            # -D^{e_a} K_ab  contributes to alpha_{e_b}
            add(tuple(1 if c == b else 0 for c in range(d)), -big.derive(ktabs[a][b], a))
    for b in range(d):
        if btabs[b] is not None:
            add(tuple(1 if c == b else 0 for c in range(d)), btabs[b][:mq])
            add((0,) * d, big.derive(btabs[b], b))
    add((0,) * d, stab)

    k11 = tabs[jpos[(2,) + (0,) * (d - 1)], 0, :]
    if np.any(-k11 <= 0.0):
        raise DegenerateOperatorError("K11 <= 0 at an expansion point")
    return jlist, tabs, q


def dar_to_alpha(K, beta, sigma, center, p, scale=1.0):
    """OperatorJets (m=2) of the dar operator at a single expansion point."""
    center = np.asarray(center, dtype=np.float64).reshape(-1)
    jlist, tabs, q = dar_to_alpha_tables(K, beta, sigma, center[None, :], p)
    d = center.shape[0]
    alpha = {}
    for idx, j in enumerate(jlist):
        col = tabs[idx, :, 0]
        if np.any(col != 0.0):
            alpha[j] = Jet(d, q, center, col)
    return OperatorJets(d, 2, center, scale, alpha)


# ---------------------------------------------------------------------------
# the coefficient recursion (reference, single element)


def qt_construct(op, f_jet, p, cauchy):
    """Degree-p quasi-Trefftz polynomial from Cauchy data and source jet.

    Reference implementation: explicit sweep in algorithm1_order, one
    coefficient per step.  f_jet = None means a zero source.
    """
    d, m, h = op.d, op.m, op.scale
    if p < m:
        raise ValueError(f"need p >= m, got p={p}, m={m}")
    if cauchy.d != d or cauchy.m != m or cauchy.p != p:
        raise ValueError("Cauchy data does not match the operator/degree")
    if op.order < p - m:
        raise ValueError(
            f"operator jets of order {op.order} are too short for p={p}"
        )
    if f_jet is not None:
        if f_jet.order < p - m:
            raise ValueError("source jet order must be at least p - m")
        if not np.allclose(f_jet.center, op.center):
            raise ValueError("source jet must be expanded at the operator center")

    pos = position_map(d, p)
    coeffs = np.zeros(dim_full(d, p))

    for r in range(m):
        for s, c in cauchy.data[r].items():
            coeffs[pos[(r,) + tuple(s)]] = c * h**r / factorial(r)

    star = op.alpha_value(op.principal)
    jset = enumerate_upto(d, m)
    for i in algorithm1_order(d, p, m):
        rhs = f_jet.derivative(i) if f_jet is not None else 0.0
        for j in jset:
            if op.alpha.get(j) is None:
                continue
            for ell in _sub_indices(i):
                if j == op.principal and ell == i:
                    continue
                diff = tuple(a - b for a, b in zip(i, ell))
                src = tuple(a + b for a, b in zip(ell, j))
                rhs -= (
                    mi_binomial(i, diff)
                    * op.alpha_derivative(j, diff)
                    * mi_factorial(src)
                    / h ** sum(src)
                    * coeffs[pos[src]]
                )
        target = tuple(a + b for a, b in zip(i, op.principal))
        coeffs[pos[target]] = (
            h ** (sum(i) + m) / (star * mi_factorial(target)) * rhs
        )
    return ScaledMonomialPoly(d, p, op.center, h, coeffs)


def _sub_indices(i):
    out = [()]
    for ik in i:
        out = [t + (v,) for t in out for v in range(ik + 1)]
    return out


def qt_basis(op, p):
    """Basis of the homogeneous space QT^p_0: one element per (r, s) label.

    Cauchy data are monomial traces normalized so that the leading scaled
    coefficient of b_{(r,s)} is exactly 1 (psi_r = (r!/h^r) x scaled monomial
    s).  This keeps all basis functions uniformly scaled as h -> 0, which the
    conditioning of the assembled DG matrices depends on.
    """
    return [
        qt_construct(
            op,
            None,
            p,
            CauchyData.monomial(
                op.d, op.m, p, r, s, value=factorial(r) / op.scale**r
            ),
        )
        for r, s in qt_index_set(op.d, p, op.m)
    ]


def qt_particular(op, f_jet, p):
    """The particular member of QT^p_f with zero Cauchy data."""
    return qt_construct(op, f_jet, p, CauchyData.zero(op.d, op.m, p))


def qt_residual(v, op, f_jet, p):
    """max_{|i| <= p-m} |D^i(Mv - f)(x^E)| / max(1, |D^i f(x^E)|)."""
    worst = 0.0
    for i in enumerate_upto(op.d, p - op.m):
        want = f_jet.derivative(i) if f_jet is not None else 0.0
        got = apply_operator_derivatives(v, op, i)
        worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    return worst


def apply_operator_to_jet(op, u_jet):
    """The jet of Mu at op.center, order min(op.order, u_jet.order - m)."""
    if not np.allclose(u_jet.center, op.center):
        raise ValueError("jet must be expanded at the operator center")
    q = min(op.order, u_jet.order - op.m)
    if q < 0:
        raise ValueError("u jet order must be at least the operator order")
    alg = algebra(op.d, q)
    out = np.zeros(dim_full(op.d, q))
    for j, jet in op.alpha.items():
        du = u_jet.derive_multi(j).truncate(q)
        out += alg.mul(jet.truncate(q).coeffs[:, None], du.coeffs[:, None])[:, 0]
    return Jet(op.d, q, op.center, out)


# ---------------------------------------------------------------------------
# vectorized construction over many expansion points


@lru_cache(maxsize=None)
def _recursion_plan(d, p, m):
    """Flattened index arrays driving one recursion step per numpy call."""
    pos = position_map(d, p)
    order_q = enumerate_upto(d, p - m)
    pos_q = position_map(d, p - m)
    jset = enumerate_upto(d, m)
    principal = (m,) + (0,) * (d - 1)

    targets, fpos, tfact, thpow = [], [], [], []
    offsets = [0]
    pair_src, pair_alpha, pair_dpos, pair_int, pair_hpow = [], [], [], [], []
    for i in algorithm1_order(d, p, m):
        targets.append(pos[tuple(a + b for a, b in zip(i, principal))])
        fpos.append(pos_q[i])
        tfact.append(mi_factorial(tuple(a + b for a, b in zip(i, principal))))
        thpow.append(sum(i) + m)
        for jidx, j in enumerate(jset):
            for ell in _sub_indices(i):
                if j == principal and ell == i:
                    continue
                diff = tuple(a - b for a, b in zip(i, ell))
                src = tuple(a + b for a, b in zip(ell, j))
                pair_src.append(pos[src])
                pair_alpha.append(jidx)
                pair_dpos.append(pos_q[diff])
                pair_int.append(mi_binomial(i, diff) * mi_factorial(src))
                pair_hpow.append(sum(src))
        offsets.append(len(pair_src))
    ints = dict(
        targets=np.array(targets, dtype=np.intp),
        fpos=np.array(fpos, dtype=np.intp),
        tfact=np.array(tfact, dtype=np.float64),
        thpow=np.array(thpow, dtype=np.float64),
        offsets=np.array(offsets, dtype=np.intp),
        pair_src=np.array(pair_src, dtype=np.intp),
        pair_alpha=np.array(pair_alpha, dtype=np.intp),
        pair_dpos=np.array(pair_dpos, dtype=np.intp),
        pair_int=np.array(pair_int, dtype=np.float64),
        pair_hpow=np.array(pair_hpow, dtype=np.float64),
        star_idx=jset.index(principal),
        fact_q=np.array([mi_factorial(i) for i in order_q], dtype=np.float64),
    )
    return ints


def qt_construct_many(d, p, m, alpha_tabs, h, f_tab, init):
    """Run the coefficient recursion for a batch of expansion points.

    alpha_tabs : (J, M_q, B) Taylor tables of the alpha_j (graded j order)
    h          : (B,) element length scales
    f_tab      : (M_q, B) Taylor table of the source, or None
    init       : (S, B, R) coefficient array with the Cauchy block already
                 set for each of the R right-hand sides; filled in place.
    """
    plan = _recursion_plan(d, p, m)
    h = np.asarray(h, dtype=np.float64)
    dvals = alpha_tabs * plan["fact_q"][None, :, None]  # D^ell alpha_j values
    star = dvals[plan["star_idx"], 0, :]
    if np.any(star == 0.0):
        raise DegenerateOperatorError("alpha_{m e1} vanishes at an expansion point")
    cpair = (
        plan["pair_int"][:, None]
        * dvals[plan["pair_alpha"], plan["pair_dpos"], :]
        * h[None, :] ** (-plan["pair_hpow"][:, None])
    )  # (P, B)
    if f_tab is not None:
        fvals = plan["fact_q"][plan["fpos"], None] * f_tab[plan["fpos"], :]  # (T, B)
    offsets = plan["offsets"]
    for t in range(plan["targets"].shape[0]):
        lo, hi = offsets[t], offsets[t + 1]
        rhs = np.einsum(
            "pb,pbr->br", cpair[lo:hi], init[plan["pair_src"][lo:hi], :, :]
        )
        if f_tab is not None:
            rhs = fvals[t][:, None] - rhs
        else:
            rhs = -rhs
        scale = h ** plan["thpow"][t] / (star * plan["tfact"][t])
        init[plan["targets"][t], :, :] = scale[:, None] * rhs
    return init


def qt_cauchy_init(d, p, m, h, n_rhs=None):
    """(S, B, R) array with the monomial-seeded Cauchy blocks set.

    With n_rhs=None, R = dim_qt and right-hand side (r, s) carries the basis
    seed of qt_basis: leading scaled-monomial coefficient 1 at position
    (r, s), i.e. psi_r = (r!/h^r) x scaled monomial s.  With n_rhs given,
    that many zero-seeded columns are returned instead.
    """
    h = np.asarray(h, dtype=np.float64)
    b = h.shape[0]
    s_dim = dim_full(d, p)
    if n_rhs is not None:
        return np.zeros((s_dim, b, n_rhs))
    labels = qt_index_set(d, p, m)
    init = np.zeros((s_dim, b, len(labels)))
    pos = position_map(d, p)
    for col, (r, s) in enumerate(labels):
        init[pos[(r,) + tuple(s)], :, col] = 1.0
    return init
