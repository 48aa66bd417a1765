import math

import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from srtube import contact_core as cc
from srtube import field_expr as fe
from srtube.field_expr import Add, Call, Const, Div, Mul, Neg, Pow, Sub, Var


def test_parse_paraboloid():
    e = fe.parse("z - (x^2+y^2)/2")
    assert e == Sub(Var("z"), Div(Add(Pow(Var("x"), Const(2.0)), Pow(Var("y"), Const(2.0))), Const(2.0)))


@pytest.mark.parametrize("src, expected", [
    ("w", Var("w")),
    ("y - z", Sub(Var("y"), Var("z"))),
    ("2^3^2", Pow(Const(2.0), Pow(Const(3.0), Const(2.0)))),
    ("x**2", Pow(Var("x"), Const(2.0))),
    ("-3^2", Neg(Pow(Const(3.0), Const(2.0)))),
    ("-3*x", Mul(Const(-3.0), Var("x"))),
    ("2*pi", Mul(Const(2.0), Const(math.pi))),
    ("exp(-x)", Call("exp", Neg(Var("x")))),
])
def test_parse_shapes(src, expected):
    assert fe.parse(src) == expected


@pytest.mark.parametrize("src, span, kind", [
    ("x + q", (4, 5), "unknown identifier"),
    ("foo(x)", (0, 3), "unknown identifier"),
    ("sin(x, y)", (0, 9), "arity"),
    ("sqrt()", (0, 6), "arity"),
    ("(x + y", (0, 6), "unbalanced"),
    ("x + y)", (5, 6), "unbalanced"),
    ("x +", (3, 3), "end of input"),
    ("3 $ 4", (2, 3), "unexpected character"),
])
def test_parse_errors_carry_span(src, span, kind):
    with pytest.raises(fe.ParseError, match=kind) as info:
        fe.parse(src)
    assert info.value.span == span
    assert info.value.source == src


_leaf = st.one_of(
    st.sampled_from([Var(v) for v in fe.VARIABLES]),
    st.floats(-50, 50, allow_nan=False).map(Const),
    st.integers(0, 5).map(lambda i: Const(float(i))),
)


def _extend(children):
    binary = st.sampled_from([Add, Sub, Mul, Div, Pow])
    return st.one_of(
        st.builds(lambda op, a, b: op(a, b), binary, children, children),
        st.builds(Neg, children),
        st.builds(Call, st.sampled_from(fe.FUNCTIONS), children),
    )


exprs = st.recursive(_leaf, _extend, max_leaves=12)


@settings(max_examples=300, deadline=None)
@given(exprs)
def test_print_parse_roundtrip(e):
    assert fe.parse(fe.to_source(e)) == e


def _sym(src):
    return sympy.sympify(src.replace("^", "**"), locals={v: sympy.Symbol(v) for v in "xyzw"})


@pytest.mark.parametrize("src", [
    "z - (x^2+y^2)/2",
    "x*y^3 - 2*z*w + 7",
    "sin(x*y) + cos(z)^2",
    "exp(x/3 + z/2) * (1 + y^2)",
    "sqrt(1 + x^2 + y^2) - log(2 + z^2)",
    "(x - y)/(3 + z^2)",
    "(x^2 + y^2)^1.5",
])
def test_derivatives_match_sympy(src, rng):
    e = fe.parse(src)
    s = _sym(src)
    syms = sympy.symbols("x y z w")
    pts = rng.uniform(-1, 1, size=(20, 4))
    val, grad, hess = fe.derivatives(e, pts, order=2)
    f = sympy.lambdify(syms, s)
    g = [sympy.lambdify(syms, sympy.diff(s, v)) for v in syms]
    h = [[sympy.lambdify(syms, sympy.diff(s, a, b)) for b in syms] for a in syms]
    for k, p in enumerate(pts):
        assert val[k] == pytest.approx(float(f(*p)), rel=1e-12, abs=1e-12)
        for i in range(4):
            assert grad[k, i] == pytest.approx(float(g[i](*p)), rel=1e-12, abs=1e-12)
            for j in range(4):
                assert hess[k, i, j] == pytest.approx(float(h[i][j](*p)), rel=1e-11, abs=1e-11)


@pytest.mark.parametrize("src, point", [
    ("sqrt(x)", (-1.0, 0, 0)),
    ("log(x)", (0.0, 0, 0)),
    ("log(x)", (-2.0, 0, 0)),
    ("1/x", (0.0, 0, 0)),
    ("1/(x - y)", (0.5, 0.5, 0)),
    ("x^0.5", (-4.0, 0, 0)),
    ("x^(-1)", (0.0, 0, 0)),
])
def test_domain_errors(src, point):
    with pytest.raises(fe.DomainError):
        fe.evaluate(fe.parse(src), point)


def test_integer_power_of_negative_base():
    assert fe.evaluate(fe.parse("x^3"), (-2.0, 0, 0)) == -8.0


def test_batch_evaluation_reports_domain_error_anywhere():
    pts = np.array([[1.0, 0, 0], [4.0, 0, 0], [-1.0, 0, 0]])
    with pytest.raises(fe.DomainError):
        fe.evaluate(fe.parse("sqrt(x)"), pts)


def test_heisenberg_jet_of_z():
    jet = cc.eval_jet(fe.parse("z"), cc.heisenberg(), (1.0, 2.0, 0.0))
    # storage order (X1, X2, X0): X1 z = y/2, X2 z = -x/2, X0 z = 1
    assert np.allclose(jet.d1, [1.0, -0.5, 1.0], atol=1e-15)


def test_heisenberg_jet_of_x(rng):
    model = cc.heisenberg()
    for p in rng.uniform(-2, 2, size=(10, 3)):
        jet = cc.eval_jet(fe.parse("x"), model, p)
        assert np.allclose(jet.d1, [1.0, 0.0, 0.0], atol=1e-15)
        assert np.allclose(jet.d2, 0.0, atol=1e-15)


def test_su2_jet_of_w():
    p = np.array([0.0, 1.0, 0.0, 0.0])
    jet = cc.eval_jet(fe.parse("w"), cc.su2(1.0), p)
    # X1 w = k y, X2 w = -k x, X0 w = 2 k^2 z
    assert np.allclose(jet.d1, [1.0, 0.0, 0.0], atol=1e-14)


def test_eval_jet_matches_hand_partials(rng):
    # f = x^2 y - 3 z^2 + x z; Heisenberg X1 = dx + y/2 dz, X2 = dy - x/2 dz, X0 = dz
    e = fe.parse("x^2*y - 3*z^2 + x*z")
    model = cc.heisenberg()
    for x, y, z in rng.uniform(-2, 2, size=(100, 3)):
        # X1 f = 2xy + z + xy/2 - 3yz, X2 f = x^2/2 + 3xz, X0 f = x - 6z
        X1, X2, X0 = 2.5 * x * y + z - 3 * y * z, 0.5 * x * x + 3 * x * z, x - 6 * z
        X1X1 = 3 * y - 1.5 * y * y
        X2X2 = -1.5 * x * x
        X1X2 = x + 3 * z + 1.5 * x * y
        jet = fe.eval_jet(e, model, (x, y, z))
        assert np.allclose(jet.d1, [X1, X2, X0], rtol=1e-12, atol=1e-12)
        assert jet.d2[0][0] == pytest.approx(X1X1, rel=1e-12, abs=1e-12)
        assert jet.d2[1][1] == pytest.approx(X2X2, rel=1e-12, abs=1e-12)
        assert jet.d2[0][1] == pytest.approx(X1X2, rel=1e-12, abs=1e-12)


def test_rotational_constructor():
    e = fe.rotational([0, 0, 0.5])
    pts = np.array([[1.0, 2.0, 2.5], [0.3, -0.4, 0.125]])
    assert np.allclose(fe.evaluate(e, pts), 0.0, atol=1e-15)
    cubic = fe.rotational([1.0, 0, 0, 1.0])
    assert fe.evaluate(cubic, (0.6, 0.8, 2.0)) == pytest.approx(0.0, abs=1e-15)
    assert fe.rotational([0]) == Var("z")


def test_rotational_rejects_linear_term():
    with pytest.raises(ValueError):
        fe.rotational([0, 1.0, 0.5])


def test_diff_is_structural():
    assert fe.diff(fe.parse("x*y"), "x") == Var("y")
    assert fe.diff(fe.parse("3"), "z") == Const(0.0)
    assert fe.variables(fe.parse("x + sin(w)")) == {"x", "w"}
