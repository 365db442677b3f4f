"""Interior-penalty DG for 2D diffusion-advection-reaction problems.

Discretizes  div(-K grad u + beta u) + sigma u = f  with Dirichlet data g_D,
Neumann data g_N = -(K grad u) . n and upwind advective fluxes, on either the
full piecewise-polynomial space or the quasi-Trefftz subspace built from the
coefficient jets at each element centroid.

Conventions: on an interior facet the stored normal points from the `left`
to the `right` element; the scalar jump is [v] = v_left - v_right (the vector
jump [v] n), the average {v} = (v_left + v_right)/2, and on the boundary
[v] = v n, {v} = v.  Matrix entries are A[i, j] = A_h(b_j, b_i) (row = test).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .coeffjet import ExprAst, ExprError, algebra, evaluate, jet_eval, jet_eval_many, parse
from .mesh2d import classify_boundary, quality
from .multiindex import dim_full, mi_factorial, monomial_links, position_map
from .qtrefftz import (
    CauchyData,
    dar_to_alpha,
    dar_to_alpha_tables,
    qt_basis,
    qt_cauchy_init,
    qt_construct,
    qt_construct_many,
    qt_index_set,
)
from .quadrature import gauss_segment, npts_for_degree, rule_polygon, rule_triangle
from .sparsela import CsrMatrix, cond2_estimate, solve


class ConfigError(ValueError):
    """Invalid problem configuration."""


class PenaltyTooSmallWarning(UserWarning):
    """The penalty parameter is at or below the provable stability threshold."""


# ---------------------------------------------------------------------------
# problem configuration


def _ast_of(value, what, d=2):
    if value is None or isinstance(value, ExprAst):
        return value
    if isinstance(value, (int, float)):
        value = repr(float(value))
    try:
        return parse(value, d)
    except ExprError as err:
        raise ConfigError(f"{what}: {err}") from err


def _rules_of(value, what):
    """Normalize boundary data: expression or ordered [{box, value}] rules."""
    if value is None:
        return None
    if isinstance(value, (str, int, float, ExprAst)):
        return [(None, _ast_of(value, what))]
    rules = []
    for k, rule in enumerate(value):
        if not isinstance(rule, dict) or "value" not in rule:
            raise ConfigError(f"{what}[{k}]: rules need a 'value' entry")
        extra = set(rule) - {"box", "value"}
        if extra:
            raise ConfigError(f"{what}[{k}]: unknown keys {sorted(extra)}")
        box = rule.get("box")
        if box is not None:
            if len(box) != 4:
                raise ConfigError(
                    f"{what}[{k}]: box must be [x1min, x1max, x2min, x2max]"
                )
            box = [None if b is None else float(b) for b in box]
        rules.append((box, _ast_of(rule["value"], f"{what}[{k}].value")))
    return rules


class BvpConfig:
    """Coefficients, data and discretization constants of one boundary-value
    problem.

    K may be a single expression (isotropic K*I) or a 2x2 nested list with
    None for zero entries; beta a length-2 list or None; sigma/f/exact
    optional expressions.  When `exact` is given, missing f/g_D/g_N are
    manufactured from it.  g_dirichlet/g_neumann accept one expression or an
    ordered list of {box: [x1min, x1max, x2min, x2max], value: expr} rules
    (None bounds are unbounded, first matching rule wins, default 0).
    dirichlet_tags = None puts the whole boundary in the Dirichlet part.
    """

    def __init__(
        self,
        K,
        beta=None,
        sigma=None,
        f=None,
        exact=None,
        g_dirichlet=None,
        g_neumann=None,
        dirichlet_tags=None,
        k_min=1.0,
        sigma0="auto",
        kf_rule="kmin",
        gamma=None,
    ):
        if isinstance(K, (str, int, float, ExprAst)):
            K = [[K, None], [None, K]]
        if len(K) != 2 or any(len(row) != 2 for row in K):
            raise ConfigError("K must be an expression or a 2x2 nested list")
        self.K = [[_ast_of(K[a][b], f"K[{a}][{b}]") for b in range(2)] for a in range(2)]
        if self.K[0][0] is None:
            raise ConfigError("K[0][0] must be a non-zero expression")
        if beta is not None:
            if len(beta) != 2:
                raise ConfigError("beta must have two components")
            beta = [_ast_of(b, f"beta[{k}]") for k, b in enumerate(beta)]
        self.beta = beta
        self.sigma = _ast_of(sigma, "sigma")
        self.f = _ast_of(f, "f")
        self.exact = _ast_of(exact, "exact")
        self.g_dirichlet = _rules_of(g_dirichlet, "g_dirichlet")
        self.g_neumann = _rules_of(g_neumann, "g_neumann")
        self.dirichlet_tags = (
            None if dirichlet_tags is None else frozenset(dirichlet_tags)
        )
        try:
            self.k_min = float(k_min)
        except (TypeError, ValueError):
            raise ConfigError(f"k_min must be a number, got {k_min!r}") from None
        if not self.k_min > 0.0:
            raise ConfigError(f"k_min must be positive, got {self.k_min}")
        if sigma0 == "auto":
            self.sigma0 = "auto"
        else:
            self.sigma0 = float(sigma0)
            if self.sigma0 < 0.0:
                raise ConfigError(f"sigma0 must be >= 0, got {self.sigma0}")
        if kf_rule not in ("kmin", "facet_max"):
            raise ConfigError(f"kf_rule must be 'kmin' or 'facet_max', got {kf_rule!r}")
        self.kf_rule = kf_rule
        self.gamma = None if gamma is None else float(gamma)
        if self.gamma is not None and self.gamma < 0.0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")

    _KEYS = (
        "K",
        "beta",
        "sigma",
        "f",
        "exact",
        "g_dirichlet",
        "g_neumann",
        "dirichlet_tags",
        "k_min",
        "sigma0",
        "kf_rule",
        "gamma",
    )

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(cls._KEYS)
        if unknown:
            raise ConfigError(f"unknown problem keys: {sorted(unknown)}")
        if "K" not in data:
            raise ConfigError("problem configuration needs a diffusion tensor K")
        return cls(**data)

    def has_source(self):
        return self.f is not None or self.exact is not None


def _resolve_gamma(bvp, p, gamma=None):
    if gamma is None:
        gamma = bvp.gamma
    if gamma is None:
        gamma = 50.0 * p * p
    if gamma < 0.0:
        raise ConfigError(f"gamma must be >= 0, got {gamma}")
    return float(gamma)


# ---------------------------------------------------------------------------
# pointwise coefficient fields


def _scalar_values(ast, pts):
    if ast is None:
        return np.zeros(pts.shape[0])
    return np.broadcast_to(evaluate(ast, pts), (pts.shape[0],)).astype(np.float64)


def _k_tensor(bvp, pts):
    K = np.zeros((pts.shape[0], 2, 2))
    for a in range(2):
        for b in range(2):
            if bvp.K[a][b] is not None:
                K[:, a, b] = _scalar_values(bvp.K[a][b], pts)
    skew = np.abs(K[:, 0, 1] - K[:, 1, 0]).max() if pts.shape[0] else 0.0
    scale = 1.0 + (np.abs(K).max() if pts.shape[0] else 0.0)
    if skew > 1e-9 * scale:
        raise ConfigError(f"K is not symmetric (max |K12 - K21| = {skew:.3e})")
    return K


def _beta_values(bvp, pts):
    out = np.zeros((pts.shape[0], 2))
    if bvp.beta is not None:
        for a in range(2):
            if bvp.beta[a] is not None:
                out[:, a] = _scalar_values(bvp.beta[a], pts)
    return out


def _f_values(bvp, pts):
    """Source values: the expression, or div(-K grad u + beta u) + sigma u."""
    if bvp.f is not None:
        return _scalar_values(bvp.f, pts)
    if bvp.exact is None:
        return np.zeros(pts.shape[0])
    jlist, tabs, _ = dar_to_alpha_tables(bvp.K, bvp.beta, bvp.sigma, pts, 2)
    u2 = jet_eval_many(bvp.exact, pts, 2)
    pos = position_map(2, 2)
    f = np.zeros(pts.shape[0])
    for idx, j in enumerate(jlist):
        f += mi_factorial(j) * tabs[idx, 0, :] * u2[pos[j], :]
    return f


def _rule_values(rules, pts):
    vals = np.zeros(pts.shape[0])
    unset = np.ones(pts.shape[0], dtype=bool)
    for box, ast in rules:
        if box is None:
            match = unset.copy()
        else:
            match = unset.copy()
            los = (box[0], box[2])
            his = (box[1], box[3])
            for a in range(2):
                if los[a] is not None:
                    match &= pts[:, a] >= los[a] - 1e-9 * (1.0 + abs(los[a]))
                if his[a] is not None:
                    match &= pts[:, a] <= his[a] + 1e-9 * (1.0 + abs(his[a]))
        if np.any(match):
            vals[match] = np.broadcast_to(evaluate(ast, pts[match]), (match.sum(),))
        unset &= ~match
    return vals


def _gd_values(bvp, pts):
    if bvp.g_dirichlet is not None:
        return _rule_values(bvp.g_dirichlet, pts)
    if bvp.exact is not None:
        return _scalar_values(bvp.exact, pts)
    return np.zeros(pts.shape[0])


def _gn_values(bvp, pts, normals):
    if bvp.g_neumann is not None:
        return _rule_values(bvp.g_neumann, pts)
    if bvp.exact is not None:
        K = _k_tensor(bvp, pts)
        u1 = jet_eval_many(bvp.exact, pts, 1)
        grad = u1[1:3].T
        return -np.einsum("na,nab,nb->n", normals, K, grad)
    return np.zeros(pts.shape[0])


def _exact_values_grad(bvp, pts):
    if bvp.exact is None:
        raise ConfigError("this computation needs an 'exact' solution expression")
    u1 = jet_eval_many(bvp.exact, pts, 1)
    return u1[0], u1[1:3].T


def _resolve_sigma0(bvp, pts):
    """sigma0 = user value, or min over `pts` of sigma + div(beta)/2 (>= 0)."""
    if bvp.sigma0 != "auto":
        return float(bvp.sigma0)
    s = _scalar_values(bvp.sigma, pts)
    if bvp.beta is not None:
        for a in range(2):
            if bvp.beta[a] is not None:
                s = s + 0.5 * jet_eval_many(bvp.beta[a], pts, 1)[1 + a]
    return max(float(s.min()) if pts.shape[0] else 0.0, 0.0)


# ---------------------------------------------------------------------------
# discrete spaces


@dataclass
class DGSpace:
    """Broken polynomial space: per-element monomial coefficients of each
    local basis function (C[e, l, :]) plus an optional lifting polynomial."""

    mesh: object
    p: int
    kind: str
    n_loc: int
    M: int
    C: np.ndarray  # (ne, n_loc, M)
    lifting: np.ndarray  # (ne, M) or None
    centers: np.ndarray
    h: np.ndarray

    @property
    def ndof(self):
        return self.mesh.n_elements * self.n_loc


def _source_jets(bvp, centers, q, jlist, tabs):
    """Taylor tables (M_q, ne) of f manufactured from the exact solution."""
    mq = dim_full(2, q)
    U = jet_eval_many(bvp.exact, centers, q + 2)
    out = np.zeros((mq, centers.shape[0]))
    alg = algebra(2, q)
    for idx, j in enumerate(jlist):
        if not np.any(tabs[idx]):
            continue
        t, order = U, q + 2
        for a in range(2):
            for _ in range(j[a]):
                t = algebra(2, order).derive(t, a)
                order -= 1
        out += alg.mul(tabs[idx], t[:mq])
    return out


def build_space(mesh, bvp, p, kind="qt", audit=False):
    """Construct the (ne x n_loc)-dimensional broken space of degree p.

    kind="full" is the complete polynomial space; kind="qt" solves the
    coefficient recursion per element (and builds the source lifting when
    the problem has one).  audit=True re-derives a few elements with the
    reference single-element construction and verifies agreement.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if kind not in ("qt", "full"):
        raise ValueError(f"kind must be 'qt' or 'full', got {kind!r}")
    ne = mesh.n_elements
    M = dim_full(2, p)
    centers = mesh.centroids.copy()
    h = mesh.diameters.copy()
    lifting = None
    if kind == "full":
        # scaled monomials, L2-normalized per element: without the diagonal
        # normalization the local Gram spread hides the h^-2 growth of the
        # system condition number behind a large h-independent plateau
        C = np.tile(np.eye(M)[None, :, :], (ne, 1, 1))
        probe = DGSpace(mesh, p, kind, M, M, C, None, centers, h)
        w, pts = _volume_rule(mesh, 2 * p + 2)
        vals, _ = _mono_tables(probe, pts, np.arange(ne))
        norms = np.sqrt(np.einsum("eq,eqi,eqi->ei", w, vals, vals))
        C[:, np.arange(M), np.arange(M)] = 1.0 / norms
    else:
        if p < 2:
            raise ConfigError("quasi-Trefftz spaces need p >= 2")
        jlist, tabs, q = dar_to_alpha_tables(bvp.K, bvp.beta, bvp.sigma, centers, p)
        init = qt_cauchy_init(2, p, 2, h)
        qt_construct_many(2, p, 2, tabs, h, None, init)
        C = np.ascontiguousarray(init.transpose(1, 2, 0))
        if bvp.has_source():
            if bvp.f is not None:
                f_tab = jet_eval_many(bvp.f, centers, q)
            else:
                f_tab = _source_jets(bvp, centers, q, jlist, tabs)
            if np.any(f_tab):
                part = qt_cauchy_init(2, p, 2, h, n_rhs=1)
                qt_construct_many(2, p, 2, tabs, h, f_tab, part)
                lifting = np.ascontiguousarray(part[:, :, 0].T)
    space = DGSpace(mesh, p, kind, C.shape[1], M, C, lifting, centers, h)
    if audit and kind == "qt":
        _audit_space(space, bvp)
    return space


def _audit_space(space, bvp, n_sample=4, tol=1e-9):
    """Check sampled elements against the reference per-element construction."""
    rng = np.random.default_rng(0)
    ne = space.mesh.n_elements
    sample = rng.choice(ne, size=min(n_sample, ne), replace=False)
    p = space.p
    labels = qt_index_set(2, p, 2)
    for e in sample:
        op = dar_to_alpha(
            bvp.K, bvp.beta, bvp.sigma, space.centers[e], p, scale=space.h[e]
        )
        ref_basis = qt_basis(op, p)
        for col, (r, s) in enumerate(labels):
            ref = ref_basis[col]
            err = np.abs(space.C[e, col] - ref.coeffs).max()
            if err > tol * max(1.0, np.abs(ref.coeffs).max()):
                raise AssertionError(
                    f"space audit failed on element {e}, basis ({r},{s}): {err:.3e}"
                )
        if space.lifting is not None and bvp.f is not None:
            f_jet = jet_eval(bvp.f, space.centers[e], p - 2)
            ref = qt_construct(op, f_jet, p, CauchyData.zero(2, 2, p))
            err = np.abs(space.lifting[e] - ref.coeffs).max()
            if err > tol * max(1.0, np.abs(ref.coeffs).max()):
                raise AssertionError(f"lifting audit failed on element {e}: {err:.3e}")


# ---------------------------------------------------------------------------
# quadrature layout and monomial tables


def _volume_rule(mesh, degree):
    """Padded per-element rule: weights (ne, nq), points (ne, nq, 2)."""
    ne = mesh.n_elements
    if all(len(el) == 3 for el in mesh.elements):
        bary, wref = rule_triangle(degree)
        verts = mesh.vertices[np.array(mesh.elements)]  # (ne, 3, 2)
        pts = np.einsum("qb,ebx->eqx", bary, verts)
        w = wref[None, :] * mesh.areas[:, None]
        return w, pts
    rules = [
        rule_polygon(mesh.element_vertices(e), degree) for e in range(ne)
    ]
    nq = max(r[0].shape[0] for r in rules)
    pts = np.tile(mesh.centroids[:, None, :], (1, nq, 1))
    w = np.zeros((ne, nq))
    for e, (p_e, w_e) in enumerate(rules):
        pts[e, : p_e.shape[0]] = p_e
        w[e, : w_e.shape[0]] = w_e
    return w, pts


def _facet_rule(mesh, fids, degree):
    t, wref = gauss_segment(npts_for_degree(degree))
    nq = t.shape[0]
    nf = len(fids)
    if nf == 0:
        return np.zeros((0, nq)), np.zeros((0, nq, 2))
    a = mesh.vertices[[mesh.facets[f].va for f in fids]]
    b = mesh.vertices[[mesh.facets[f].vb for f in fids]]
    pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    lengths = np.array([mesh.facets[f].length for f in fids])
    return wref[None, :] * lengths[:, None], pts


def _mono_tables(space, pts, elems):
    """Monomial values/physical gradients at pts (n, nq, 2) in elements elems."""
    n, nq = pts.shape[0], pts.shape[1]
    h = space.h[elems]
    scaled = (pts - space.centers[elems][:, None, :]) / h[:, None, None]
    parent, axis, down, kval = monomial_links(2, space.p)
    vals, derivs = _kernels.monomial_tables(
        scaled.reshape(-1, 2), parent, axis, down, kval
    )
    vals = vals.reshape(n, nq, space.M)
    derivs = derivs.reshape(n, nq, space.M, 2) / h[:, None, None, None]
    return vals, derivs


def _facet_k(bvp, Kf):
    """Per-facet diffusion scale K_F for the penalty coefficient."""
    if bvp.kf_rule == "kmin" or Kf.shape[0] == 0:
        return np.full(Kf.shape[0], bvp.k_min)
    return _spectral_2x2(Kf).max(axis=1)


def _spectral_2x2(K):
    a, c = K[..., 0, 0], K[..., 1, 1]
    b = 0.5 * (K[..., 0, 1] + K[..., 1, 0])
    mid, rad = 0.5 * (a + c), np.sqrt(0.25 * (a - c) ** 2 + b**2)
    return np.maximum(np.abs(mid + rad), np.abs(mid - rad))


# ---------------------------------------------------------------------------
# the assembler


class _Assembler:
    """Shared quadrature layout, coefficient fields and monomial tables."""

    def __init__(self, space, bvp, gamma, degree):
        self.space, self.bvp, self.gamma = space, bvp, gamma
        mesh = space.mesh
        self.mesh = mesh
        if bvp.dirichlet_tags is not None:
            untagged = [
                f for f in mesh.boundary_facets() if mesh.facets[f].tag is None
            ]
            if untagged:
                raise ConfigError(
                    f"{len(untagged)} untagged boundary facet(s); tag the mesh or "
                    "use dirichlet_tags=None"
                )
        self.btags = classify_boundary(mesh, bvp.beta, bvp.dirichlet_tags)
        ne = mesh.n_elements

        self.vw, self.vpts = _volume_rule(mesh, degree)
        flat = self.vpts.reshape(-1, 2)
        nq = self.vpts.shape[1]
        self.Kv = _k_tensor(bvp, flat).reshape(ne, nq, 2, 2)
        self.bv = _beta_values(bvp, flat).reshape(ne, nq, 2)
        self.sv = _scalar_values(bvp.sigma, flat).reshape(ne, nq)
        self.fv = _f_values(bvp, flat).reshape(ne, nq)
        self.vol_vals, self.vol_derivs = _mono_tables(
            space, self.vpts, np.arange(ne)
        )

        ifids = mesh.interior_facets()
        self.iL = np.array([mesh.facets[f].left for f in ifids], dtype=np.intp)
        self.iR = np.array([mesh.facets[f].right for f in ifids], dtype=np.intp)
        self.i_n = np.array([mesh.facets[f].normal for f in ifids]).reshape(-1, 2)
        i_len = np.array([mesh.facets[f].length for f in ifids])
        self.iw, self.ipts = _facet_rule(mesh, ifids, degree)
        nqf = self.ipts.shape[1]
        flat = self.ipts.reshape(-1, 2)
        self.iK = _k_tensor(bvp, flat).reshape(len(ifids), nqf, 2, 2)
        self.i_bn = np.einsum(
            "fqa,fa->fq", _beta_values(bvp, flat).reshape(len(ifids), nqf, 2), self.i_n
        )
        self.i_pen = np.zeros(0) if not ifids else gamma * _facet_k(bvp, self.iK) / i_len
        self.ivalsL, self.idL = _mono_tables(space, self.ipts, self.iL)
        self.ivalsR, self.idR = _mono_tables(space, self.ipts, self.iR)

        bfids = mesh.boundary_facets()
        self.bE = np.array([mesh.facets[f].left for f in bfids], dtype=np.intp)
        self.b_n = np.array([mesh.facets[f].normal for f in bfids]).reshape(-1, 2)
        b_len = np.array([mesh.facets[f].length for f in bfids])
        self.bw, self.bpts = _facet_rule(mesh, bfids, degree)
        flat = self.bpts.reshape(-1, 2)
        self.bK = _k_tensor(bvp, flat).reshape(len(bfids), nqf, 2, 2)
        self.b_bn = np.einsum(
            "fqa,fa->fq", _beta_values(bvp, flat).reshape(len(bfids), nqf, 2), self.b_n
        )
        self.b_pen = (
            np.zeros(0) if not bfids else gamma * _facet_k(bvp, self.bK) / b_len
        )
        self.bvals, self.bd = _mono_tables(space, self.bpts, self.bE)
        self.misD = np.array([f in self.btags.dirichlet for f in bfids], dtype=bool)
        self.misN = ~self.misD
        self.misOut = np.array([f in self.btags.outflow for f in bfids], dtype=bool)
        self.misIn = np.array(
            [f in self.btags.inflow and f in self.btags.dirichlet for f in bfids],
            dtype=bool,
        )
        self.gD = _gd_values(bvp, flat).reshape(len(bfids), nqf)
        normals_rep = np.repeat(self.b_n, nqf, axis=0)
        self.gN = _gn_values(bvp, flat, normals_rep).reshape(len(bfids), nqf)

    # -- contractions -------------------------------------------------------

    def _vol_basis(self, C):
        N = np.einsum("eqm,eim->eqi", self.vol_vals, C)
        G = np.einsum("eqmd,eim->eqid", self.vol_derivs, C)
        return N, G

    def _side_basis(self, vals, derivs, C, elems):
        N = np.einsum("fqm,fim->fqi", vals, C[elems])
        G = np.einsum("fqmd,fim->fqid", derivs, C[elems])
        return N, G

    # -- the three assemblies -------------------------------------------------

    def matrix(self, C_test, C_trial):
        nt, nl = C_test.shape[1], C_trial.shape[1]
        ne = self.mesh.n_elements
        rows, cols, vals = [], [], []

        def scatter(et, el, block):
            r = et[:, None, None] * nt + np.arange(nt)[None, :, None]
            c = el[:, None, None] * nl + np.arange(nl)[None, None, :]
            rows.append(np.broadcast_to(r, block.shape).ravel())
            cols.append(np.broadcast_to(c, block.shape).ravel())
            vals.append(block.ravel())

        Nt, Gt = self._vol_basis(C_test)
        Nl, Gl = self._vol_basis(C_trial)
        block = np.einsum("eq,eqia,eqab,eqjb->eij", self.vw, Gt, self.Kv, Gl)
        block -= np.einsum("eq,eqia,eqa,eqj->eij", self.vw, Gt, self.bv, Nl)
        block += np.einsum("eq,eqi,eq,eqj->eij", self.vw, Nt, self.sv, Nl)
        scatter(np.arange(ne), np.arange(ne), block)

        if self.iL.size:
            Nt_s, Qt_s, Nl_s, Ql_s = [], [], [], []
            for vals_r, der_r, elems in (
                (self.ivalsL, self.idL, self.iL),
                (self.ivalsR, self.idR, self.iR),
            ):
                n, g = self._side_basis(vals_r, der_r, C_test, elems)
                Nt_s.append(n)
                Qt_s.append(np.einsum("fa,fqab,fqib->fqi", self.i_n, self.iK, g))
                n, g = self._side_basis(vals_r, der_r, C_trial, elems)
                Nl_s.append(n)
                Ql_s.append(np.einsum("fa,fqab,fqib->fqi", self.i_n, self.iK, g))
            elems = (self.iL, self.iR)
            jump_coef = self.i_pen[:, None] + 0.5 * np.abs(self.i_bn)
            for sv in (0, 1):
                sgn_v = 1.0 if sv == 0 else -1.0
                for sw in (0, 1):
                    sgn_w = 1.0 if sw == 0 else -1.0
                    coef = sgn_v * sgn_w * jump_coef + sgn_v * 0.5 * self.i_bn
                    block = np.einsum(
                        "fq,fq,fqi,fqj->fij", self.iw, coef, Nt_s[sv], Nl_s[sw]
                    )
                    block -= 0.5 * sgn_v * np.einsum(
                        "fq,fqi,fqj->fij", self.iw, Nt_s[sv], Ql_s[sw]
                    )
                    block -= 0.5 * sgn_w * np.einsum(
                        "fq,fqi,fqj->fij", self.iw, Qt_s[sv], Nl_s[sw]
                    )
                    scatter(elems[sv], elems[sw], block)

        if self.bE.size:
            Ntb, Gtb = self._side_basis(self.bvals, self.bd, C_test, self.bE)
            Nlb, Glb = self._side_basis(self.bvals, self.bd, C_trial, self.bE)
            Qtb = np.einsum("fa,fqab,fqib->fqi", self.b_n, self.bK, Gtb)
            Qlb = np.einsum("fa,fqab,fqib->fqi", self.b_n, self.bK, Glb)
            m = self.misD
            if np.any(m):
                block = np.einsum(
                    "f,fq,fqi,fqj->fij", self.b_pen[m], self.bw[m], Ntb[m], Nlb[m]
                )
                block -= np.einsum("fq,fqi,fqj->fij", self.bw[m], Ntb[m], Qlb[m])
                block -= np.einsum("fq,fqi,fqj->fij", self.bw[m], Qtb[m], Nlb[m])
                scatter(self.bE[m], self.bE[m], block)
            m = self.misOut
            if np.any(m):
                block = np.einsum(
                    "fq,fq,fqi,fqj->fij", self.bw[m], self.b_bn[m], Ntb[m], Nlb[m]
                )
                scatter(self.bE[m], self.bE[m], block)

        ndof_t, ndof_l = ne * nt, ne * nl
        return CsrMatrix.from_coo(
            np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
            (ndof_t, ndof_l),
        )

    def rhs(self, C_test):
        nt = C_test.shape[1]
        ne = self.mesh.n_elements
        Nt, _ = self._vol_basis(C_test)
        r = np.einsum("eq,eqi,eq->ei", self.vw, Nt, self.fv).ravel()

        if self.bE.size:
            Ntb, Gtb = self._side_basis(self.bvals, self.bd, C_test, self.bE)
            Qtb = np.einsum("fa,fqab,fqib->fqi", self.b_n, self.bK, Gtb)
            dofs = self.bE[:, None] * nt + np.arange(nt)[None, :]
            m = self.misD
            if np.any(m):
                contrib = np.einsum(
                    "f,fq,fq,fqi->fi", self.b_pen[m], self.bw[m], self.gD[m], Ntb[m]
                )
                contrib -= np.einsum("fq,fq,fqi->fi", self.bw[m], self.gD[m], Qtb[m])
                np.add.at(r, dofs[m], contrib)
            m = self.misIn
            if np.any(m):
                contrib = -np.einsum(
                    "fq,fq,fq,fqi->fi", self.bw[m], self.gD[m], self.b_bn[m], Ntb[m]
                )
                np.add.at(r, dofs[m], contrib)
            m = self.misN
            if np.any(m):
                contrib = -np.einsum("fq,fq,fqi->fi", self.bw[m], self.gN[m], Ntb[m])
                np.add.at(r, dofs[m], contrib)
        return r

    def gram(self, C, sigma0):
        """Gram matrix of the mesh-dependent norm on the discrete space:
        diffusion energy + jump penalties + sigma0 L2 + upwind facet terms."""
        nt = C.shape[1]
        ne = self.mesh.n_elements
        rows, cols, vals = [], [], []

        def scatter(et, el, block):
            r = et[:, None, None] * nt + np.arange(nt)[None, :, None]
            c = el[:, None, None] * nt + np.arange(nt)[None, None, :]
            rows.append(np.broadcast_to(r, block.shape).ravel())
            cols.append(np.broadcast_to(c, block.shape).ravel())
            vals.append(block.ravel())

        N, G = self._vol_basis(C)
        block = np.einsum("eq,eqia,eqab,eqjb->eij", self.vw, G, self.Kv, G)
        block += sigma0 * np.einsum("eq,eqi,eqj->eij", self.vw, N, N)
        scatter(np.arange(ne), np.arange(ne), block)

        if self.iL.size:
            Ns = [
                self._side_basis(self.ivalsL, self.idL, C, self.iL)[0],
                self._side_basis(self.ivalsR, self.idR, C, self.iR)[0],
            ]
            elems = (self.iL, self.iR)
            coef = self.i_pen[:, None] + 0.5 * np.abs(self.i_bn)
            for sv in (0, 1):
                for sw in (0, 1):
                    sgn = (1.0 if sv == 0 else -1.0) * (1.0 if sw == 0 else -1.0)
                    block = sgn * np.einsum(
                        "fq,fq,fqi,fqj->fij", self.iw, coef, Ns[sv], Ns[sw]
                    )
                    scatter(elems[sv], elems[sw], block)

        if self.bE.size:
            Nb = self._side_basis(self.bvals, self.bd, C, self.bE)[0]
            coef = 0.5 * np.abs(self.b_bn) + np.where(self.misD, self.b_pen, 0.0)[
                :, None
            ]
            block = np.einsum("fq,fq,fqi,fqj->fij", self.bw, coef, Nb, Nb)
            scatter(self.bE, self.bE, block)

        ndof = ne * nt
        return CsrMatrix.from_coo(
            np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
            (ndof, ndof),
        )


# ---------------------------------------------------------------------------
# systems and solutions


@dataclass
class DGSystem:
    A: CsrMatrix
    b: np.ndarray
    space: DGSpace
    bvp: BvpConfig
    gamma: float
    degree: int


def assemble(space, bvp, quad_bump=0, gamma=None):
    """Assemble the DG system (lifting-corrected when the space carries one)."""
    gamma = _resolve_gamma(bvp, space.p, gamma)
    if gamma == 0.0:
        warnings.warn(
            "assembling with zero penalty; the discrete problem loses coercivity",
            PenaltyTooSmallWarning,
        )
    degree = 2 * space.p + 2 + quad_bump
    asm = _Assembler(space, bvp, gamma, degree)
    A = asm.matrix(space.C, space.C)
    b = asm.rhs(space.C)
    if space.lifting is not None:
        corr = asm.matrix(space.C, space.lifting[:, None, :])
        b = b - corr.matvec(np.ones(space.mesh.n_elements))
    return DGSystem(A, b, space, bvp, gamma, degree)


@dataclass
class SolutionField:
    """Discrete solution: dof vector plus total per-element monomial
    coefficients (basis combination + lifting)."""

    space: DGSpace
    dof: np.ndarray
    total: np.ndarray  # (ne, M)

    def eval_elements(self, elems, pts):
        """Values at pts (n, nq, 2) lying in elements elems (n,)."""
        space = self.space
        scaled = (pts - space.centers[elems][:, None, :]) / space.h[elems][
            :, None, None
        ]
        parent, axis, _, _ = monomial_links(2, space.p)
        vals = _kernels.monomial_values(scaled.reshape(-1, 2), parent, axis)
        vals = vals.reshape(pts.shape[0], pts.shape[1], space.M)
        return np.einsum("fqm,fm->fq", vals, self.total[elems])

    def eval(self, points, fill=np.nan):
        """Values at arbitrary points; `fill` outside the mesh."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        elems = self.space.mesh.locate(points)
        out = np.full(points.shape[0], fill)
        inside = np.where(elems >= 0)[0]
        if inside.size:
            out[inside] = self.eval_elements(
                elems[inside], points[inside][:, None, :]
            )[:, 0]
        return out

    def grad_elements(self, elems, pts):
        space = self.space
        vals, derivs = _mono_tables(space, pts, elems)
        return np.einsum("fqmd,fm->fqd", derivs, self.total[elems])

    def range(self, quad_bump=0):
        """(min, max) over volume quadrature points and element vertices."""
        mesh = self.space.mesh
        w, pts = _volume_rule(mesh, 2 * self.space.p + 2 + quad_bump)
        vals = self.eval_elements(np.arange(mesh.n_elements), pts)
        kmax = max(len(el) for el in mesh.elements)
        vpts = np.tile(mesh.centroids[:, None, :], (1, kmax, 1))
        for e, el in enumerate(mesh.elements):
            vpts[e, : len(el)] = mesh.vertices[list(el)]
        vvals = self.eval_elements(np.arange(mesh.n_elements), vpts)
        lo = min(vals.min(), vvals.min())
        hi = max(vals.max(), vvals.max())
        return float(lo), float(hi)


def solve_system(system):
    c = solve(system.A, system.b)
    space = system.space
    cre = c.reshape(space.mesh.n_elements, space.n_loc)
    total = np.einsum("elm,el->em", space.C, cre)
    if space.lifting is not None:
        total = total + space.lifting
    return SolutionField(space, c, total)


def solve_bvp(mesh, bvp, p, kind="qt", quad_bump=0, gamma=None, audit=False):
    space = build_space(mesh, bvp, p, kind=kind, audit=audit)
    return solve_system(assemble(space, bvp, quad_bump=quad_bump, gamma=gamma))


def condition_number(system, **kwargs):
    return cond2_estimate(system.A, **kwargs)


# ---------------------------------------------------------------------------
# norms and errors


def gram_dar(space, bvp, quad_bump=0, gamma=None):
    gamma = _resolve_gamma(bvp, space.p, gamma)
    asm = _Assembler(space, bvp, gamma, 2 * space.p + 2 + quad_bump)
    sigma0 = _resolve_sigma0(bvp, asm.vpts.reshape(-1, 2))
    return asm.gram(space.C, sigma0)


def l2_norm(field, quad_bump=0):
    mesh = field.space.mesh
    w, pts = _volume_rule(mesh, 2 * field.space.p + 2 + quad_bump)
    vals = field.eval_elements(np.arange(mesh.n_elements), pts)
    return float(np.sqrt(np.einsum("eq,eq->", w, vals**2)))


def l2_error(field, bvp, quad_bump=0):
    mesh = field.space.mesh
    w, pts = _volume_rule(mesh, 2 * field.space.p + 2 + quad_bump)
    if bvp.exact is None:
        raise ConfigError("l2_error needs an 'exact' solution expression")
    exact = _scalar_values(bvp.exact, pts.reshape(-1, 2)).reshape(w.shape)
    vals = field.eval_elements(np.arange(mesh.n_elements), pts)
    return float(np.sqrt(np.einsum("eq,eq->", w, (exact - vals) ** 2)))


def dar_error(field, bvp, quad_bump=0, gamma=None):
    """Mesh-dependent norm of u - u_h: diffusion energy, sigma0-weighted L2,
    jump penalties of u_h and upwind facet terms (u is smooth so only the
    discrete traces jump)."""
    space = field.space
    gamma = _resolve_gamma(bvp, space.p, gamma)
    asm = _Assembler(space, bvp, gamma, 2 * space.p + 2 + quad_bump)
    flat = asm.vpts.reshape(-1, 2)
    sigma0 = _resolve_sigma0(bvp, flat)
    u, gu = _exact_values_grad(bvp, flat)
    ne = space.mesh.n_elements
    u = u.reshape(asm.vw.shape)
    gu = gu.reshape(ne, -1, 2)
    uh = field.eval_elements(np.arange(ne), asm.vpts)
    guh = field.grad_elements(np.arange(ne), asm.vpts)
    ev, eg = u - uh, gu - guh
    total = float(
        np.einsum("eq,eqa,eqab,eqb->", asm.vw, eg, asm.Kv, eg)
        + sigma0 * np.einsum("eq,eq->", asm.vw, ev**2)
    )
    if asm.iL.size:
        jump = field.eval_elements(asm.iL, asm.ipts) - field.eval_elements(
            asm.iR, asm.ipts
        )
        coef = asm.i_pen[:, None] + 0.5 * np.abs(asm.i_bn)
        total += float(np.einsum("fq,fq,fq->", asm.iw, coef, jump**2))
    if asm.bE.size:
        ub = _scalar_values(bvp.exact, asm.bpts.reshape(-1, 2)).reshape(asm.bw.shape)
        tr = field.eval_elements(asm.bE, asm.bpts)
        coef = 0.5 * np.abs(asm.b_bn) + np.where(asm.misD, asm.b_pen, 0.0)[:, None]
        total += float(np.einsum("fq,fq,fq->", asm.bw, coef, (ub - tr) ** 2))
    return float(np.sqrt(total))


def l2_diff(coarse, fine, quad_bump=0):
    """L2 distance between solutions on a mesh and its red refinement."""
    fmesh = fine.space.mesh
    if fmesh.parent is None:
        raise ValueError("the fine mesh must be produced by refine(coarse mesh)")
    if fmesh.parent.max() + 1 > coarse.space.mesh.n_elements:
        raise ValueError("parent map does not match the coarse mesh")
    degree = 2 * max(coarse.space.p, fine.space.p) + 2 + quad_bump
    w, pts = _volume_rule(fmesh, degree)
    uf = fine.eval_elements(np.arange(fmesh.n_elements), pts)
    uc = coarse.eval_elements(fmesh.parent, pts)
    return float(np.sqrt(np.einsum("eq,eq->", w, (uf - uc) ** 2)))


# ---------------------------------------------------------------------------
# stability diagnostics


def stability_constants(mesh, bvp, p, gamma=None, quad_bump=0):
    """Sampled norms of the coefficients, the penalty threshold gamma0, the
    coercivity constant alpha = 1 - sqrt(gamma0/gamma) and the continuity
    constant of the scheme."""
    w, pts = _volume_rule(mesh, 2 * p + 2 + quad_bump)
    flat = pts.reshape(-1, 2)
    K = _k_tensor(bvp, flat)
    k_norm = float(_spectral_2x2(K).max())
    beta_norm = float(np.linalg.norm(_beta_values(bvp, flat), axis=1).max())
    sigma_norm = float(np.abs(_scalar_values(bvp.sigma, flat)).max())
    sigma0 = _resolve_sigma0(bvp, flat)
    qual = quality(mesh)
    gamma0 = (
        k_norm**2
        / bvp.k_min**2
        * qual["N_partial"]
        * (p + 1)
        * (p + 2)
        / qual["r_star"]
    )
    gam = _resolve_gamma(bvp, p, gamma)
    alpha = 1.0 - np.sqrt(gamma0 / gam) if gam > 0 else -np.inf
    if alpha <= 0.0:
        warnings.warn(
            f"gamma = {gam:g} is at or below the stability threshold "
            f"gamma0 = {gamma0:g}",
            PenaltyTooSmallWarning,
        )
    t_beta = (
        0.0
        if beta_norm == 0.0
        else (beta_norm / np.sqrt(bvp.k_min * sigma0) if sigma0 > 0 else np.inf)
    )
    t_sigma = (
        0.0 if sigma_norm == 0.0 else (sigma_norm / sigma0 if sigma0 > 0 else np.inf)
    )
    m_const = 5.0 + t_beta + t_sigma + np.sqrt(k_norm / (gam * bvp.k_min)) if gam > 0 else np.inf
    return {
        "gamma": gam,
        "gamma0": float(gamma0),
        "alpha": float(alpha),
        "M": float(m_const),
        "K_norm": k_norm,
        "beta_norm": beta_norm,
        "sigma_norm": sigma_norm,
        "sigma0": sigma0,
        "k_min": bvp.k_min,
        "r_star": qual["r_star"],
        "N_partial": qual["N_partial"],
    }


def coercivity_probe(system, gram, trials=64, seed=0):
    """min over random dof vectors of A_h(v, v) / |||v|||^2."""
    rng = np.random.default_rng(seed)
    worst = np.inf
    n = system.A.shape[0]
    for _ in range(trials):
        v = rng.standard_normal(n)
        den = float(v @ gram.matvec(v))
        if den <= 0.0:
            continue
        worst = min(worst, float(v @ system.A.matvec(v)) / den)
    return worst


def coercivity_min_eig(system, gram):
    """Smallest eigenvalue of the symmetric part of A against the norm Gram
    matrix (dense generalized eigenproblem; small systems only)."""
    import scipy.linalg

    n = system.A.shape[0]
    if n > 2500:
        raise ValueError(f"dense eigenproblem limited to 2500 dofs, got {n}")
    Ad = system.A.to_dense()
    Gd = gram.to_dense()
    vals = scipy.linalg.eigh(0.5 * (Ad + Ad.T), Gd, eigvals_only=True)
    return float(vals[0])


def upwind_flux_mismatch(beta_n, w1, w2):
    """max |{beta w} . n + |beta . n| [w]/2 - beta . n w_upwind| over inputs."""
    beta_n = np.asarray(beta_n, dtype=np.float64)
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    central = beta_n * 0.5 * (w1 + w2) + 0.5 * np.abs(beta_n) * (w1 - w2)
    upwind = beta_n * np.where(beta_n >= 0.0, w1, w2)
    return float(np.abs(central - upwind).max())
