import math

import numpy as np
import pytest

from qtdg.coeffjet import (
    ArityMismatch,
    ExprSyntaxError,
    Jet,
    OrderExceededError,
    SingularPointError,
    UnknownIdentifier,
    evaluate,
    jet_constant,
    jet_derivative,
    jet_eval,
    jet_eval_many,
    parse,
)
from qtdg.multiindex import enumerate_upto

from .oracles import fd_derivative, sympy_derivative


def ev(text, d, pt):
    return float(evaluate(parse(text, d), np.asarray(pt, dtype=float)))


# ---------------------------------------------------------------------------
# parsing


def test_parse_accepts_reference_expression():
    ast = parse("sin(pi*x1)*exp(x2)", 2)
    assert ast.d == 2
    assert ev("sin(pi*x1)*exp(x2)", 2, (0.5, 0.0)) == pytest.approx(1.0)


def test_parse_error_positions():
    with pytest.raises(ExprSyntaxError) as err:
        parse("x1^", 2)
    assert err.value.position == 3
    with pytest.raises(ExprSyntaxError):
        parse("(x1+1", 2)
    with pytest.raises(ExprSyntaxError):
        parse("x1 x2", 2)
    with pytest.raises(ExprSyntaxError):
        parse("sin(x1, x2)", 2)


def test_unknown_identifiers():
    with pytest.raises(UnknownIdentifier):
        parse("x3+1", 2)
    with pytest.raises(UnknownIdentifier):
        parse("tan(x1)", 2)
    with pytest.raises(UnknownIdentifier):
        parse("y", 2)


def test_arity_mismatch():
    with pytest.raises(ArityMismatch):
        parse("sin", 2)
    with pytest.raises(ArityMismatch):
        parse("sin + 1", 2)
    with pytest.raises(ArityMismatch):
        parse("x1(2)", 2)
    with pytest.raises(ArityMismatch):
        parse("pi(1)", 2)


def test_precedence_and_associativity():
    assert ev("2+3*4", 1, (0.0,)) == 14.0
    assert ev("(2+3)*4", 1, (0.0,)) == 20.0
    assert ev("1-2-3", 1, (0.0,)) == -4.0
    assert ev("6/3/2", 1, (0.0,)) == 1.0
    assert ev("2^3^2", 1, (0.0,)) == 512.0
    assert ev("-2^2", 1, (0.0,)) == -4.0
    assert ev("-x1^2", 1, (3.0,)) == -9.0
    assert ev("x1^-2", 1, (2.0,)) == 0.25
    assert ev("2*-3", 1, (0.0,)) == -6.0


def test_number_literals():
    assert ev(".5+1e-3", 1, (0.0,)) == pytest.approx(0.501)
    assert ev("2.5E+2", 1, (0.0,)) == 250.0
    assert ev("pi", 1, (0.0,)) == pytest.approx(math.pi)


def test_evaluate_vectorized():
    ast = parse("x1*x2+1", 2)
    pts = np.array([[1.0, 2.0], [3.0, 4.0], [0.0, 0.0]])
    np.testing.assert_allclose(evaluate(ast, pts), [3.0, 13.0, 1.0])
    grid = np.random.default_rng(0).random((4, 5, 2))
    assert evaluate(ast, grid).shape == (4, 5)


# ---------------------------------------------------------------------------
# jets


def test_reciprocal_jet_reference_values():
    ast = parse("1/(1+x1+x2)", 2)
    jet = jet_eval(ast, (0.0, 0.0), 3)
    assert jet.value() == pytest.approx(1.0)
    assert jet.derivative((1, 0)) == pytest.approx(-1.0, abs=1e-14)
    # cross-check against finite differences
    fn = lambda p: ev("1/(1+x1+x2)", 2, p)
    for i in [(1, 0), (0, 1), (1, 1), (2, 0), (2, 1)]:
        fd = fd_derivative(fn, (0.0, 0.0), i)
        assert jet.derivative(i) == pytest.approx(fd, rel=1e-7, abs=1e-7)


def test_sin_third_derivative():
    jet = jet_eval(parse("sin(x1)", 1), (0.0,), 4)
    assert jet.derivative((3,)) == pytest.approx(-1.0)
    assert jet.derivative((4,)) == pytest.approx(0.0, abs=1e-15)


def test_polynomial_jets_are_exact():
    # jets of polynomials terminate: compare with sympy exact expansion
    text = "x1^3*x2 - 2*x1*x2^2 + 0.5*x2 - 4"
    jet = jet_eval(parse(text, 2), (1.5, -0.5), 4)
    for i in enumerate_upto(2, 4):
        exact = sympy_derivative(text, 2, (1.5, -0.5), i)
        assert jet.derivative(i) == pytest.approx(exact, rel=1e-13, abs=1e-13)


SYMPY_CASES = [
    ("exp(x1*x2)", 2, (0.3, -0.7)),
    ("log(1+x1^2+x2^2)", 2, (0.4, 0.2)),
    ("sqrt(1+x1*x2)", 2, (0.5, 0.25)),
    ("sin(x1)*cos(x2)", 2, (0.9, -1.3)),
    ("1/(2+sin(x1+x2))", 2, (0.1, 0.7)),
    ("exp(sin(x1)+cos(x2))", 2, (-0.2, 0.6)),
    ("x1^2.5", 1, (1.7,)),
    ("(1+x1+x2+x3)^-1", 3, (0.1, 0.2, 0.3)),
    ("sqrt(exp(x1)+x2^2)", 2, (0.25, -0.5)),
    ("cos(pi*x1*x2)/(2+x1)", 2, (0.35, 0.15)),
]


@pytest.mark.parametrize("text,d,center", SYMPY_CASES)
def test_jets_match_sympy(text, d, center):
    jet = jet_eval(parse(text, d), center, 4)
    for i in enumerate_upto(d, 4):
        exact = sympy_derivative(text, d, center, i)
        assert jet.derivative(i) == pytest.approx(exact, rel=1e-10, abs=1e-10)


def test_jet_eval_many_matches_single():
    ast = parse("exp(x1)*sin(x2)+x1/(2+x2)", 2)
    centers = np.array([[0.0, 0.0], [0.5, -0.3], [1.0, 2.0], [-0.7, 0.1]])
    table = jet_eval_many(ast, centers, 3)
    for b in range(centers.shape[0]):
        single = jet_eval(ast, centers[b], 3)
        np.testing.assert_allclose(table[:, b], single.coeffs, rtol=1e-14, atol=1e-14)


def test_leibniz_product_of_jets():
    f = parse("exp(x1)*cos(x2)", 2)
    g = parse("1/(1+x1^2+x2^2)", 2)
    fg = parse("(exp(x1)*cos(x2))*(1/(1+x1^2+x2^2))", 2)
    c = (0.2, -0.4)
    prod = jet_eval(f, c, 4) * jet_eval(g, c, 4)
    direct = jet_eval(fg, c, 4)
    np.testing.assert_allclose(prod.coeffs, direct.coeffs, rtol=1e-13, atol=1e-14)


def test_jet_derive_shifts_taylor_data():
    ast = parse("sin(x1*x2)", 2)
    jet = jet_eval(ast, (0.7, 0.3), 5)
    dx = jet.derive(0)
    assert dx.order == 4
    for i in enumerate_upto(2, 4):
        up = (i[0] + 1, i[1])
        assert dx.derivative(i) == pytest.approx(jet.derivative(up), rel=1e-12, abs=1e-12)


def test_integer_powers_at_singular_centers():
    # integer powers must work where log would not
    jet = jet_eval(parse("x1^3", 1), (0.0,), 3)
    assert jet.derivative((3,)) == pytest.approx(6.0)
    jet = jet_eval(parse("(x1-x2)^2", 2), (1.0, 1.0), 2)
    assert jet.derivative((2, 0)) == pytest.approx(2.0)
    assert jet.derivative((1, 1)) == pytest.approx(-2.0)


def test_singular_points_raise():
    with pytest.raises(SingularPointError):
        jet_eval(parse("1/x1", 2), (0.0, 1.0), 2)
    with pytest.raises(SingularPointError):
        jet_eval(parse("log(x1)", 1), (0.0,), 2)
    with pytest.raises(SingularPointError):
        jet_eval(parse("log(x1)", 1), (-2.0,), 2)
    with pytest.raises(SingularPointError):
        jet_eval(parse("sqrt(x1)", 1), (0.0,), 2)
    with pytest.raises(SingularPointError):
        jet_eval(parse("x1^0.5", 1), (-1.0,), 2)


def test_order_exceeded():
    jet = jet_eval(parse("x1+x2", 2), (0.0, 0.0), 2)
    with pytest.raises(OrderExceededError):
        jet.derivative((2, 1))
    with pytest.raises(OrderExceededError):
        jet.truncate(3)


def test_jet_truncate_is_prefix():
    jet = jet_eval(parse("exp(x1+2*x2)", 2), (0.1, 0.2), 4)
    low = jet.truncate(2)
    np.testing.assert_array_equal(low.coeffs, jet.coeffs[: low.coeffs.size])


def test_jet_constant_and_free_function():
    z = jet_constant(2, 3, (0.0, 0.0), 5.0)
    assert z.value() == 5.0
    assert jet_derivative(z, (1, 0)) == 0.0
    assert jet_derivative(z, (0, 0)) == 5.0
