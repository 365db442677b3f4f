"""Smooth coefficient expressions and truncated Taylor jets.

An expression over variables ``x1 .. xd`` (grammar in docs/expr.md) is parsed
into a small AST and can be evaluated two ways:

* ``evaluate(ast, pts)``: plain pointwise values (vectorized numpy), and
* ``jet_eval(ast, center, q)``: the order-q Taylor *jet* at a point, i.e. all
  scaled derivatives D^i f(center)/i! for |i| <= q, propagated through the
  expression tree by truncated series arithmetic (forward-mode, exact for the
  stored orders up to roundoff).

Jets are stored densely in the graded multi-index order of
``multiindex.enumerate_upto``; that order lists lower degrees first, so an
order-q coefficient vector is a prefix of the order-(q+1) one.

``jet_eval_many`` evaluates the jet at a whole batch of centers at once
(coefficient table of shape (M, B)); the solver leans on this heavily.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .multiindex import dim_full, enumerate_upto, mi_factorial, position_map

_FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")


# ---------------------------------------------------------------------------
# errors


class ExprError(ValueError):
    """Base class for expression handling errors; carries a text offset."""

    def __init__(self, message, position=None):
        self.position = position
        if position is not None:
            message = f"{message} (at offset {position})"
        super().__init__(message)


class ExprSyntaxError(ExprError):
    pass


class UnknownIdentifier(ExprError):
    pass


class ArityMismatch(ExprError):
    pass


class SingularPointError(ArithmeticError):
    """Jet evaluation hit a singularity (division by zero, log/sqrt <= 0)."""


class OrderExceededError(ValueError):
    """A derivative beyond the stored jet order was requested."""


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 0-based


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * / ^
    lhs: object
    rhs: object


@dataclass(frozen=True)
class Call:
    fn: str
    arg: object


@dataclass(frozen=True)
class ExprAst:
    """Parsed expression: root node, dimension d and the source text."""

    root: object
    d: int
    text: str


# ---------------------------------------------------------------------------
# tokenizer / recursive-descent parser


class _Token:
    __slots__ = ("kind", "value", "pos")

    def __init__(self, kind, value, pos):
        self.kind = kind
        self.value = value
        self.pos = pos


def _tokenize(text):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c in "+-*/^()":
            tokens.append(_Token(c, c, i))
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            lit = text[i:j]
            try:
                val = float(lit)
            except ValueError:
                raise ExprSyntaxError(f"bad number literal '{lit}'", i) from None
            tokens.append(_Token("num", val, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(_Token("ident", text[i:j], i))
            i = j
            continue
        raise ExprSyntaxError(f"unexpected character {c!r}", i)
    tokens.append(_Token("end", None, n))
    return tokens


class _Parser:
    """expr := term (('+'|'-') term)*
    term := factor (('*'|'/') factor)*
    factor := '-' factor | power
    power := atom ('^' factor)?          (right-associative, binds above '-')
    atom := number | 'pi' | variable | fn '(' expr ')' | '(' expr ')'
    """

    def __init__(self, tokens, d):
        self.toks = tokens
        self.k = 0
        self.d = d

    def peek(self):
        return self.toks[self.k]

    def take(self):
        tok = self.toks[self.k]
        self.k += 1
        return tok

    def expect(self, kind):
        tok = self.take()
        if tok.kind != kind:
            raise ExprSyntaxError(f"expected {kind!r}, found {tok.kind!r}", tok.pos)
        return tok

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ExprSyntaxError(f"unexpected token {tok.kind!r}", tok.pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek().kind in ("+", "-"):
            op = self.take().kind
            rhs = self.term()
            node = Bin(op, node, rhs)
        return node

    def term(self):
        node = self.factor()
        while self.peek().kind in ("*", "/"):
            op = self.take().kind
            rhs = self.factor()
            node = Bin(op, node, rhs)
        return node

    def factor(self):
        if self.peek().kind == "-":
            self.take()
            return Neg(self.factor())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek().kind == "^":
            self.take()
            return Bin("^", base, self.factor())
        return base

    def atom(self):
        tok = self.take()
        if tok.kind == "num":
            return Num(tok.value)
        if tok.kind == "(":
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "ident":
            name = tok.value
            if name == "pi":
                if self.peek().kind == "(":
                    raise ArityMismatch("'pi' is a constant, not a function", tok.pos)
                return Num(math.pi)
            if name in _FUNCTIONS:
                if self.peek().kind != "(":
                    raise ArityMismatch(f"function '{name}' needs an argument", tok.pos)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Call(name, arg)
            if len(name) > 1 and name[0] == "x" and name[1:].isdigit():
                idx = int(name[1:])
                if not 1 <= idx <= self.d:
                    raise UnknownIdentifier(
                        f"variable '{name}' out of range for d={self.d}", tok.pos
                    )
                if self.peek().kind == "(":
                    raise ArityMismatch(f"variable '{name}' is not callable", tok.pos)
                return Var(idx - 1)
            raise UnknownIdentifier(f"unknown identifier '{name}'", tok.pos)
        raise ExprSyntaxError(f"unexpected token {tok.kind!r}", tok.pos)


def parse(text, d):
    """Parse `text` over variables x1..xd into an ExprAst."""
    if d < 1:
        raise ValueError("d must be >= 1")
    return ExprAst(_Parser(_tokenize(text), d).parse(), d, text)


# ---------------------------------------------------------------------------
# pointwise evaluation


def evaluate(ast, pts):
    """Pointwise values of the expression at pts of shape (..., d)."""
    x = np.asarray(pts, dtype=np.float64)
    if x.shape[-1] != ast.d:
        raise ValueError(f"points have dimension {x.shape[-1]}, expression has d={ast.d}")
    with np.errstate(all="ignore"):
        return _eval_node(ast.root, x)


def _eval_node(node, x):
    if isinstance(node, Num):
        return np.full(x.shape[:-1], node.value)
    if isinstance(node, Var):
        return x[..., node.index].copy()
    if isinstance(node, Neg):
        return -_eval_node(node.arg, x)
    if isinstance(node, Bin):
        a = _eval_node(node.lhs, x)
        b = _eval_node(node.rhs, x)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            return a / b
        return np.power(a, b)
    return getattr(np, node.fn)(_eval_node(node.arg, x))


# ---------------------------------------------------------------------------
# truncated series algebra on (M, B) coefficient tables


@lru_cache(maxsize=None)
def algebra(d, q):
    return _Algebra(d, q)


class _Algebra:
    """Arithmetic on order-q jet coefficient tables of shape (M, B)."""

    def __init__(self, d, q):
        self.d = d
        self.q = q
        self.M = dim_full(d, q)
        exps = enumerate_upto(d, q)
        pos = position_map(d, q)
        self.exps = exps
        self.pos = pos
        self.degrees = np.array([sum(i) for i in exps])
        tgt, ia, ib = [], [], []
        for a, i in enumerate(exps):
            da = sum(i)
            for b, j in enumerate(exps):
                if da + sum(j) > q:
                    continue
                tgt.append(pos[tuple(ii + jj for ii, jj in zip(i, j))])
                ia.append(a)
                ib.append(b)
        self.mul_tgt = np.array(tgt, dtype=np.intp)
        self.mul_a = np.array(ia, dtype=np.intp)
        self.mul_b = np.array(ib, dtype=np.intp)
        # up[t, a] = position of exps[t] + e_a, defined for |exps[t]| <= q-1
        m_low = dim_full(d, q - 1) if q >= 1 else 0
        self.up = np.zeros((m_low, d), dtype=np.intp)
        for t in range(m_low):
            i = exps[t]
            for a in range(d):
                self.up[t, a] = pos[i[:a] + (i[a] + 1,) + i[a + 1 :]]
        self.factorials = np.array([mi_factorial(i) for i in exps], dtype=np.float64)

    # -- basic ops ---------------------------------------------------------

    def const(self, value, b):
        out = np.zeros((self.M, b))
        out[0] = value
        return out

    def var(self, k, centers):
        out = np.zeros((self.M, centers.shape[0]))
        out[0] = centers[:, k]
        if self.q >= 1:
            out[1 + k] = 1.0
        return out

    def mul(self, a, b):
        out = np.zeros_like(a)
        np.add.at(out, self.mul_tgt, a[self.mul_a] * b[self.mul_b])
        return out

    def compose(self, series, u):
        """sum_n series[n] * (u - u0)^n, truncated; series[n] shape (B,)."""
        du = u.copy()
        du[0] = 0.0
        out = np.zeros_like(u)
        out[0] = series[self.q]
        for n in range(self.q - 1, -1, -1):
            out = self.mul(out, du)
            out[0] += series[n]
        return out

    def powi(self, u, n):
        if n == 0:
            return self.const(1.0, u.shape[1])
        out = None
        base = u
        while n > 0:
            if n & 1:
                out = base.copy() if out is None else self.mul(out, base)
            n >>= 1
            if n:
                base = self.mul(base, base)
        return out

    # -- elementary function series around u0 ------------------------------

    def _series_exp(self, u0):
        g = [np.exp(u0)]
        for n in range(1, self.q + 1):
            g.append(g[-1] / n)  # g[n] = exp(u0)/n!
        return g

    def _series_log(self, u0):
        self._require_positive(u0, "log")
        g = [np.log(u0)]
        for n in range(1, self.q + 1):
            g.append((-1.0) ** (n + 1) / (n * u0**n))
        return g

    def _series_sqrt(self, u0):
        self._require_positive(u0, "sqrt")
        g = [np.sqrt(u0)]
        for n in range(1, self.q + 1):
            g.append(g[-1] * (1.5 - n) / (n * u0))
        return g

    def _series_powc(self, u0, c):
        self._require_positive(u0, "non-integer power")
        g = [u0**c]
        for n in range(1, self.q + 1):
            g.append(g[-1] * (c - n + 1) / (n * u0))
        return g

    def _series_recip(self, u0):
        if np.any(u0 == 0.0):
            raise SingularPointError("division by a factor vanishing at the center")
        g = [1.0 / u0]
        for n in range(1, self.q + 1):
            g.append(-g[-1] / u0)
        return g

    def _series_trig(self, fn, u0):
        s, c = np.sin(u0), np.cos(u0)
        cycle = (s, c, -s, -c) if fn == "sin" else (c, -s, -c, s)
        g = []
        fact = 1.0
        for n in range(self.q + 1):
            fact = fact * n if n else 1.0
            g.append(cycle[n % 4] / fact)
        return g

    @staticmethod
    def _require_positive(u0, what):
        if np.any(u0 <= 0.0):
            bad = float(np.asarray(u0).ravel()[int(np.argmin(u0))])
            raise SingularPointError(f"{what} of non-positive value {bad:g} at a center")

    def elem(self, fn, u):
        u0 = u[0]
        if fn == "exp":
            return self.compose(self._series_exp(u0), u)
        if fn == "log":
            return self.compose(self._series_log(u0), u)
        if fn == "sqrt":
            return self.compose(self._series_sqrt(u0), u)
        return self.compose(self._series_trig(fn, u0), u)

    def recip(self, u):
        return self.compose(self._series_recip(u[0]), u)

    def power(self, u, v):
        """u^v for jet tables; v must be constant as a function of x."""
        if v.shape[0] > 1 and np.any(v[1:] != 0.0):
            # genuinely variable exponent: u^v = exp(v log u)
            return self.elem("exp", self.mul(v, self.elem("log", u)))
        c = v[0]
        cval = float(c.flat[0])
        if np.any(c != cval):
            return self.elem("exp", self.mul(v, self.elem("log", u)))
        if abs(cval - round(cval)) < 1e-12:
            n = int(round(cval))
            if n >= 0:
                return self.powi(u, n)
            return self.recip(self.powi(u, -n))
        return self.compose(self._series_powc(u[0], cval), u)

    # -- derivative (shift) -------------------------------------------------

    def derive(self, tab, a):
        """Table of the order-(q-1) jet of the partial derivative along axis a."""
        if self.q < 1:
            raise OrderExceededError("cannot differentiate an order-0 jet")
        m_low = self.up.shape[0]
        scale = np.array([self.exps[self.up[t, a]][a] for t in range(m_low)], dtype=np.float64)
        return tab[self.up[:, a]] * scale[:, None]


def _jet_node(node, alg, centers):
    if isinstance(node, Num):
        return alg.const(node.value, centers.shape[0])
    if isinstance(node, Var):
        return alg.var(node.index, centers)
    if isinstance(node, Neg):
        return -_jet_node(node.arg, alg, centers)
    if isinstance(node, Bin):
        a = _jet_node(node.lhs, alg, centers)
        b = _jet_node(node.rhs, alg, centers)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return alg.mul(a, b)
        if node.op == "/":
            return alg.mul(a, alg.recip(b))
        return alg.power(a, b)
    return alg.elem(node.fn, _jet_node(node.arg, alg, centers))


def jet_eval_many(ast, centers, q):
    """Order-q jets at many centers: coefficient table of shape (M, B)."""
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    if centers.shape[1] != ast.d:
        raise ValueError(f"centers have dimension {centers.shape[1]}, expected {ast.d}")
    if q < 0:
        raise ValueError("jet order must be >= 0")
    return _jet_node(ast.root, algebra(ast.d, q), centers)


# ---------------------------------------------------------------------------
# the public single-center carrier


class Jet:
    """Taylor data of order `order` at `center`: coeffs[pos(i)] = D^i f / i!."""

    def __init__(self, d, order, center, coeffs):
        self.d = d
        self.order = order
        self.center = np.asarray(center, dtype=np.float64).reshape(d)
        coeffs = np.asarray(coeffs, dtype=np.float64).reshape(-1)
        if coeffs.shape[0] != dim_full(d, order):
            raise ValueError("coefficient vector length does not match the jet order")
        self.coeffs = coeffs

    def value(self):
        return float(self.coeffs[0])

    def derivative(self, i):
        """D^i f(center); raises OrderExceededError for |i| > order."""
        i = tuple(int(v) for v in i)
        if len(i) != self.d or any(v < 0 for v in i):
            raise ValueError(f"bad multi-index {i} for d={self.d}")
        if sum(i) > self.order:
            raise OrderExceededError(
                f"derivative order |i|={sum(i)} exceeds jet order {self.order}"
            )
        return mi_factorial(i) * float(self.coeffs[position_map(self.d, self.order)[i]])

    def truncate(self, q):
        if q > self.order:
            raise OrderExceededError(f"cannot extend order {self.order} jet to {q}")
        return Jet(self.d, q, self.center, self.coeffs[: dim_full(self.d, q)])

    def derive(self, axis):
        """Jet of the partial derivative along `axis`, order drops by one."""
        alg = algebra(self.d, self.order)
        return Jet(self.d, self.order - 1, self.center, alg.derive(self.coeffs[:, None], axis)[:, 0])

    def derive_multi(self, j):
        out = self
        for a, cnt in enumerate(j):
            for _ in range(int(cnt)):
                out = out.derive(a)
        return out

    def _binary(self, other, op):
        if np.isscalar(other):
            out = self.coeffs.copy()
            if op == "add":
                out[0] += other
            else:
                out = out * other
            return Jet(self.d, self.order, self.center, out)
        if not np.allclose(other.center, self.center):
            raise ValueError("jet arithmetic requires matching centers")
        q = min(self.order, other.order)
        a, b = self.truncate(q), other.truncate(q)
        if op == "add":
            return Jet(self.d, q, self.center, a.coeffs + b.coeffs)
        alg = algebra(self.d, q)
        return Jet(self.d, q, self.center, alg.mul(a.coeffs[:, None], b.coeffs[:, None])[:, 0])

    def __add__(self, other):
        return self._binary(other, "add")

    __radd__ = __add__

    def __sub__(self, other):
        return self + (other * -1.0 if isinstance(other, Jet) else -other)

    def __mul__(self, other):
        return self._binary(other, "mul")

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __repr__(self):
        return f"Jet(d={self.d}, order={self.order}, center={tuple(self.center)})"


def jet_eval(ast, center, q):
    """Order-q Taylor jet of the expression at a single center."""
    tab = jet_eval_many(ast, np.asarray(center, dtype=np.float64).reshape(1, -1), q)
    return Jet(ast.d, q, center, tab[:, 0])


def jet_derivative(jet, i):
    """D^i f at the jet center (free-function form of Jet.derivative)."""
    return jet.derivative(i)


def jet_constant(d, order, center, value):
    """The jet of a constant function (handy for zero data)."""
    coeffs = np.zeros(dim_full(d, order))
    coeffs[0] = value
    return Jet(d, order, center, coeffs)
