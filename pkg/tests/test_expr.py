import math
from fractions import Fraction

import numpy as np
import pytest

from srqc import expr as ex
from srqc.errors import DifferentiationError, DomainError, ParseError

# -- parse / evaluate examples -----------------------------------------------


def test_parse_power():
    assert ex.evaluate(ex.parse("x1^2", 3), (3, 0, 0)) == 9


def test_parse_arithmetic():
    assert ex.evaluate(ex.parse("x2 + x1*x1^2", 2), (2, 5)) == 13


def test_parse_syntax_error_offset():
    with pytest.raises(ParseError) as info:
        ex.parse("x2 +* x1", 2)
    assert info.value.offset == 3


def test_parse_offset_is_in_bytes():
    with pytest.raises(ParseError) as info:
        ex.parse("x1 + é", 2)
    assert info.value.offset == 5


def test_variable_outside_dimension():
    with pytest.raises(ParseError):
        ex.parse("x3 + x1", 2)


def test_non_integer_exponent():
    with pytest.raises(ParseError):
        ex.parse("x1^0.5", 1)
    with pytest.raises(ParseError):
        ex.parse("x1^x2", 2)


def test_rational_and_decimal_literals():
    e = ex.parse("1/3 + 0.25 + 2.5e-1", 1)
    assert ex.evaluate(e, (0.0,)) == pytest.approx(1 / 3 + 0.5, rel=1e-15)


def test_unknown_name():
    with pytest.raises(ParseError):
        ex.parse("tan(x1)", 1)


def test_params_substitute():
    e = ex.parse("x1^(2*k)", 1, params={"k": 2})
    assert ex.evaluate(e, (0.5,)) == 0.0625


def test_exp_zero():
    assert ex.evaluate(ex.parse("exp(0)", 1), (0.0,)) == 1


def test_martinet_density_value():
    e = ex.parse("1/(2*sqrt(2)*x1)", 3)
    assert ex.evaluate(e, (0.5, 0, 0)) == pytest.approx(1 / math.sqrt(2), rel=1e-15)


@pytest.mark.parametrize("text,point", [
    ("log(x1)", (-1.0,)), ("log(x1)", (0.0,)), ("sqrt(x1)", (-1.0,)),
    ("1/x1", (0.0,)), ("x1^(-2)", (0.0,)),
])
def test_domain_errors(text, point):
    with pytest.raises(DomainError):
        ex.evaluate(ex.parse(text, 1), point)


def test_compiled_reports_domain_error():
    f = ex.lambdify([ex.parse("log(x1)", 1)], 1)
    with pytest.raises(DomainError):
        f(np.array([1.0, -1.0]))


# -- abs handling --------------------------------------------------------------


def test_abs_without_sign_rejected():
    with pytest.raises(ParseError):
        ex.parse("1/abs(x1)", 2)


def test_abs_on_signed_chart():
    pos = ex.parse("abs(x1)", 1, signs={1: 1})
    neg = ex.parse("abs(x1)", 1, signs={1: -1})
    assert ex.evaluate(pos, (2.0,)) == 2.0
    assert ex.evaluate(neg, (-2.0,)) == 2.0
    assert ex.evaluate(ex.diff(pos, 1), (2.0,)) == 1.0
    assert ex.evaluate(ex.diff(neg, 1), (-2.0,)) == -1.0


def test_abs_off_declared_side():
    with pytest.raises(DomainError):
        ex.evaluate(ex.parse("abs(x1)", 1, signs={1: 1}), (-1.0,))


def test_abs_of_sign_definite_expression():
    e = ex.parse("abs(x1^2 + 1)", 1)
    assert ex.evaluate(e, (-3.0,)) == 10.0


def test_diff_undeclared_abs_rejected():
    e = ex.Abs(ex.var(1))
    with pytest.raises(DifferentiationError):
        ex.diff(e, 1)


# -- diff examples ------------------------------------------------------------------


def test_diff_square():
    assert ex.evaluate(ex.diff(ex.parse("x1^2", 1), 1), (3.0,)) == 6


def test_diff_kmartinet_power():
    e = ex.parse("x1^(2*k)", 1, params={"k": 2})
    assert ex.evaluate(ex.diff(e, 1), (0.5,)) == pytest.approx(0.5, rel=1e-15)


def test_diff_exp_inverse_square():
    e = ex.parse("exp(1/(2*x1^2))", 1)
    assert ex.evaluate(ex.diff(e, 1), (1.0,)) == pytest.approx(-math.exp(0.5), rel=1e-14)


def test_diff_other_variable_is_zero():
    e = ex.parse("sin(x1)*x1", 2)
    assert ex.diff(e, 2) == ex.ZERO


# -- random expressions --------------------------------------------------------------


def random_expr(rng, depth, dim=3):
    """Raw (unsimplified) trees that stay in-domain on [0.5, 1.5]^dim."""
    if depth == 0 or rng.random() < 0.2:
        if rng.random() < 0.7:
            return ex.Var(int(rng.integers(1, dim + 1)))
        return ex.Const(Fraction(int(rng.integers(-3, 4)), int(rng.integers(1, 4))))
    a = random_expr(rng, depth - 1, dim)
    kind = int(rng.integers(0, 11))
    if kind == 0:
        return ex.Add([a, random_expr(rng, depth - 1, dim)])
    if kind == 1:
        return ex.Mul([a, random_expr(rng, depth - 1, dim)])
    if kind == 2:
        den = ex.Add([ex.Const(2), ex.Func("cos", random_expr(rng, depth - 1, dim))])
        return ex.Div(a, den)
    if kind == 3:
        return ex.Pow(a, int(rng.integers(0, 4)))
    if kind == 4:
        return ex.Func("exp", ex.Func("sin", a))
    if kind == 5:
        return ex.Func("log", ex.Add([ex.Const(1), ex.Pow(a, 2)]))
    if kind == 6:
        return ex.Func("sqrt", ex.Add([ex.Const(1), ex.Pow(a, 2)]))
    if kind == 7:
        return ex.Func("sin", a)
    if kind == 8:
        return ex.Func("cos", a)
    if kind == 9:
        return ex.Abs(ex.Var(int(rng.integers(1, dim + 1))), 1)
    # identities for simplify to remove
    return ex.Add([ex.Mul([ex.Const(1), a]), ex.Const(0)])


def random_family(seed, count=1000, depth=6):
    rng = np.random.default_rng(seed)
    return [random_expr(rng, depth) for _ in range(count)], rng


def test_diff_matches_central_differences():
    exprs, rng = random_family(0)
    h = 1e-5
    for e in exprs:
        p = rng.uniform(0.5, 1.5, 3)
        i = int(rng.integers(1, 4))
        d = ex.evaluate(ex.diff(e, i), p)
        hi, lo = p.copy(), p.copy()
        hi[i - 1] += h
        lo[i - 1] -= h
        fd = (ex.evaluate(e, hi) - ex.evaluate(e, lo)) / (2 * h)
        assert abs(d - fd) <= 1e-6 * (1 + abs(d)), (str(e), i, p)


def test_diff_error_is_second_order():
    e = ex.parse("exp(sin(x1))*x1^3", 1)
    d = ex.evaluate(ex.diff(e, 1), (0.7,))
    errs = []
    for h in (1e-2, 5e-3):
        fd = (ex.evaluate(e, (0.7 + h,)) - ex.evaluate(e, (0.7 - h,))) / (2 * h)
        errs.append(abs(fd - d))
    assert math.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.05)


def test_simplify_preserves_values_on_a_million_points():
    exprs, rng = random_family(1)
    pts = rng.uniform(0.5, 1.5, (1000, 3))
    for e in exprs:
        a = ex.lambdify([e], 3)(*pts.T)[0]
        b = ex.lambdify([ex.simplify(e)], 3)(*pts.T)[0]
        np.testing.assert_allclose(b, a, rtol=1e-12, atol=1e-12 * np.max(np.abs(a)))


def test_simplify_idempotent():
    exprs, _ = random_family(2)
    for e in exprs:
        s = ex.simplify(e)
        assert ex.simplify(s) == s


def test_simplify_identities():
    x = ex.var(1)
    e = ex.Add([ex.Mul([ex.Const(1), x]), ex.Const(0), ex.Mul([ex.Const(0), x])])
    assert ex.simplify(e) == x
    assert ex.simplify(ex.Add([ex.Const(2), ex.Const(3)])) == ex.Const(5)
    nested = ex.Add([x, ex.Add([x, ex.Add([ex.var(2)])])])
    assert all(not isinstance(t, ex.Add) for t in ex.simplify(nested).terms)


def test_print_parse_round_trip():
    exprs, rng = random_family(3, count=200)
    pts = rng.uniform(0.5, 1.5, (100, 3))
    for e in exprs:
        back = ex.parse(ex.to_string(e), 3, signs={1: 1, 2: 1, 3: 1})
        a = ex.lambdify([e], 3)(*pts.T)[0]
        b = ex.lambdify([back], 3)(*pts.T)[0]
        np.testing.assert_allclose(b, a, rtol=1e-12, atol=1e-300)


def test_compiled_agrees_with_tree_walk():
    exprs, rng = random_family(4, count=100)
    pts = rng.uniform(0.5, 1.5, (50, 3))
    for e in exprs:
        a = np.broadcast_to(ex.evaluate(e, pts.T), (50,))
        b = ex.lambdify([e], 3)(*pts.T)[0]
        np.testing.assert_allclose(b, a, rtol=1e-13)
        assert ex.lambdify([e], 3).scalar(*pts[0])[0] == pytest.approx(a[0], rel=1e-13)


def test_expressions_are_hashable_values():
    a = ex.parse("x1*x2 + 1", 2)
    b = ex.parse("x1*x2 + 1", 2)
    assert a == b and hash(a) == hash(b)
    assert len({a, b}) == 1
