"""Exact scalar expressions on an n-dimensional coordinate chart.

Expressions are immutable trees. Operator overloads go through the light
simplifying constructors (:func:`add`, :func:`mul`, ...), while :func:`parse`
builds the raw tree as written; :func:`simplify` rebuilds any tree through the
constructors.  Variables are 1-based (``x1`` .. ``xn``).

Two evaluation paths exist: :func:`evaluate` walks the tree and reports domain
violations precisely, and :func:`lambdify` generates straight-line code with
common subexpressions shared, for the hot loops of the integrators.
"""

from __future__ import annotations

import math
import re
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .errors import DifferentiationError, DomainError, ParseError

FUNCTIONS = ("exp", "log", "sqrt", "sin", "cos")


class Expr:
    __slots__ = ("_hash",)

    def _args(self):
        raise NotImplementedError

    def __eq__(self, other):
        if self is other:
            return True
        if type(self) is not type(other) or hash(self) != hash(other):
            return False
        return self._args() == other._args()

    def __hash__(self):
        try:
            return self._hash
        except AttributeError:
            self._hash = hash((type(self).__name__, self._args()))
            return self._hash

    def __repr__(self):
        return f"Expr({to_string(self)!r})"

    def __str__(self):
        return to_string(self)

    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return add(self, neg(as_expr(other)))

    def __rsub__(self, other):
        return add(as_expr(other), neg(self))

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, n):
        if isinstance(n, Const):
            n = n.value
        if isinstance(n, float) and n.is_integer():
            n = int(n)
        if isinstance(n, Fraction) and n.denominator == 1:
            n = int(n)
        if not isinstance(n, int):
            raise TypeError("only integer exponents are supported")
        return power(self, n)


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        if isinstance(value, bool):
            value = int(value)
        if isinstance(value, int):
            value = Fraction(value)
        elif isinstance(value, (float, np.floating)):
            value = float(value)
            if not math.isfinite(value):
                raise ValueError("non-finite constant")
        elif not isinstance(value, Fraction):
            raise TypeError(f"bad constant {value!r}")
        self.value = value

    def _args(self):
        return (self.value,)

    @property
    def is_exact(self):
        return isinstance(self.value, Fraction)


class Var(Expr):
    __slots__ = ("index",)

    def __init__(self, index: int):
        if index < 1:
            raise ValueError("variables are 1-based")
        self.index = int(index)

    def _args(self):
        return (self.index,)


class Add(Expr):
    __slots__ = ("terms",)

    def __init__(self, terms):
        self.terms = tuple(terms)

    def _args(self):
        return self.terms


class Mul(Expr):
    __slots__ = ("factors",)

    def __init__(self, factors):
        self.factors = tuple(factors)

    def _args(self):
        return self.factors


class Div(Expr):
    __slots__ = ("num", "den")

    def __init__(self, num, den):
        self.num = num
        self.den = den

    def _args(self):
        return (self.num, self.den)


class Pow(Expr):
    __slots__ = ("base", "n")

    def __init__(self, base, n: int):
        self.base = base
        self.n = int(n)

    def _args(self):
        return (self.base, self.n)


class Func(Expr):
    __slots__ = ("name", "arg")

    def __init__(self, name: str, arg):
        if name not in FUNCTIONS:
            raise ValueError(f"unknown function {name}")
        self.name = name
        self.arg = arg

    def _args(self):
        return (self.name, self.arg)


class Abs(Expr):
    """``abs(arg)`` on a chart where ``arg`` has the known sign ``sign``.

    ``sign`` is +1 or -1; ``None`` means the sign was never declared, in which
    case the node still evaluates but refuses to be differentiated.
    """

    __slots__ = ("arg", "sign")

    def __init__(self, arg, sign=None):
        self.arg = arg
        self.sign = sign

    def _args(self):
        return (self.arg, self.sign)


ZERO = Const(0)
ONE = Const(1)


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    return Const(x)


def var(i: int) -> Var:
    return Var(i)


def is_const(e, value=None) -> bool:
    if not isinstance(e, Const):
        return False
    return value is None or e.value == value


# -- simplifying constructors ------------------------------------------------

def _fold(a, b, op):
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return op(a, b)
    return op(float(a), float(b))


def add(*terms) -> Expr:
    flat = []
    for t in terms:
        t = as_expr(t)
        if isinstance(t, Add):
            flat.extend(t.terms)
        else:
            flat.append(t)
    c = Fraction(0)
    rest = []
    for t in flat:
        if isinstance(t, Const):
            c = _fold(c, t.value, lambda a, b: a + b)
        else:
            rest.append(t)
    if c != 0:
        rest.append(Const(c))
    if not rest:
        return Const(c)
    if len(rest) == 1:
        return rest[0]
    return Add(rest)


def mul(*factors) -> Expr:
    flat = []
    for f in factors:
        f = as_expr(f)
        if isinstance(f, Mul):
            flat.extend(f.factors)
        else:
            flat.append(f)
    c = Fraction(1)
    rest = []
    for f in flat:
        if isinstance(f, Const):
            c = _fold(c, f.value, lambda a, b: a * b)
        else:
            rest.append(f)
    if c == 0:
        return ZERO
    if c != 1:
        rest.insert(0, Const(c))
    if not rest:
        return Const(c)
    if len(rest) == 1:
        return rest[0]
    return Mul(rest)


def neg(e) -> Expr:
    return mul(Const(-1), e)


def sub(a, b) -> Expr:
    a, b = as_expr(a), as_expr(b)
    if a == b:
        return ZERO
    return add(a, neg(b))


def div(a, b) -> Expr:
    a, b = as_expr(a), as_expr(b)
    if is_const(b, 1):
        return a
    if isinstance(b, Const) and b.value != 0:
        if isinstance(a, Const):
            return Const(_fold(a.value, b.value, lambda x, y: x / y))
        if b.is_exact:
            return mul(Const(1 / b.value), a)
    if is_const(a, 0):
        return ZERO
    return Div(a, b)


def power(b, n: int) -> Expr:
    b = as_expr(b)
    if n == 0:
        return ONE
    if n == 1:
        return b
    if isinstance(b, Const):
        if b.value != 0 or n > 0:
            if b.is_exact:
                return Const(b.value ** n)
            return Const(float(b.value) ** n)
    return Pow(b, n)


def func(name: str, arg) -> Expr:
    arg = as_expr(arg)
    if isinstance(arg, Const):
        v = arg.value
        if name == "exp" and v == 0:
            return ONE
        if name == "log" and v == 1:
            return ZERO
        if name == "sqrt" and v in (0, 1):
            return Const(v)
        if name == "sin" and v == 0:
            return ZERO
        if name == "cos" and v == 0:
            return ONE
        if not arg.is_exact:
            return Const(_SCALAR_FUNCS[name](v))
    return Func(name, arg)


def exp(e):
    return func("exp", e)


def log(e):
    return func("log", e)


def sqrt(e):
    return func("sqrt", e)


def sin(e):
    return func("sin", e)


def cos(e):
    return func("cos", e)


def absolute(e, sign=None) -> Expr:
    e = as_expr(e)
    if isinstance(e, Const):
        return Const(abs(e.value))
    return Abs(e, sign)


def simplify(e: Expr) -> Expr:
    """Constant folding, 0/1 identities and flattening, bottom-up."""
    memo = {}

    def go(e):
        key = id(e)
        if key in memo:
            return memo[key][1]
        if isinstance(e, (Const, Var)):
            r = e
        elif isinstance(e, Add):
            r = add(*[go(t) for t in e.terms])
        elif isinstance(e, Mul):
            r = mul(*[go(f) for f in e.factors])
        elif isinstance(e, Div):
            r = div(go(e.num), go(e.den))
        elif isinstance(e, Pow):
            r = power(go(e.base), e.n)
        elif isinstance(e, Func):
            r = func(e.name, go(e.arg))
        elif isinstance(e, Abs):
            r = absolute(go(e.arg), e.sign)
        else:
            raise TypeError(type(e))
        memo[key] = (e, r)
        return r

    return go(e)


# -- traversal helpers -------------------------------------------------------

def children(e: Expr):
    if isinstance(e, Add):
        return e.terms
    if isinstance(e, Mul):
        return e.factors
    if isinstance(e, Div):
        return (e.num, e.den)
    if isinstance(e, Pow):
        return (e.base,)
    if isinstance(e, (Func, Abs)):
        return (e.arg,)
    return ()


def free_vars(e: Expr) -> set:
    out, seen, stack = set(), set(), [e]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if isinstance(node, Var):
            out.add(node.index)
        stack.extend(children(node))
    return out


def substitute(e: Expr, mapping: Mapping[int, Expr]) -> Expr:
    """Replace variables by expressions, rebuilding through the constructors."""
    if isinstance(e, Var):
        return as_expr(mapping.get(e.index, e))
    if isinstance(e, Const):
        return e
    if isinstance(e, Add):
        return add(*[substitute(t, mapping) for t in e.terms])
    if isinstance(e, Mul):
        return mul(*[substitute(f, mapping) for f in e.factors])
    if isinstance(e, Div):
        return div(substitute(e.num, mapping), substitute(e.den, mapping))
    if isinstance(e, Pow):
        return power(substitute(e.base, mapping), e.n)
    if isinstance(e, Func):
        return func(e.name, substitute(e.arg, mapping))
    if isinstance(e, Abs):
        return absolute(substitute(e.arg, mapping), e.sign)
    raise TypeError(type(e))


def size(e: Expr) -> int:
    seen, stack, n = set(), [e], 0
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        n += 1
        stack.extend(children(node))
    return n


def max_var(e: Expr) -> int:
    fv = free_vars(e)
    return max(fv) if fv else 0


def infer_sign(e: Expr, signs: Mapping[int, int]):
    """Structural sign of ``e`` given declared variable signs, or None."""
    if isinstance(e, Const):
        if e.value > 0:
            return 1
        if e.value < 0:
            return -1
        return None
    if isinstance(e, Var):
        return signs.get(e.index)
    if isinstance(e, (Mul, Div)):
        s = 1
        for c in children(e):
            cs = infer_sign(c, signs)
            if cs is None:
                return None
            s *= cs
        return s
    if isinstance(e, Pow):
        if e.n % 2 == 0:
            return 1 if infer_sign(e.base, signs) is not None else None
        return infer_sign(e.base, signs)
    if isinstance(e, Func):
        if e.name in ("exp", "sqrt"):
            return 1
        return None
    if isinstance(e, Abs):
        return 1
    if isinstance(e, Add):
        ss = {infer_sign(t, signs) for t in e.terms}
        if len(ss) == 1:
            return ss.pop()
        # x^2 + 1 and the like: nonnegative terms plus a positive one
        if 1 in ss and all(infer_sign(t, signs) == 1 or _even_power(t) for t in e.terms):
            return 1
        return None
    return None


def _even_power(e):
    return isinstance(e, Pow) and e.n > 0 and e.n % 2 == 0


# -- differentiation ---------------------------------------------------------

def diff(e: Expr, i: int, _memo=None) -> Expr:
    """Exact partial derivative with respect to ``x_i``."""
    memo = {} if _memo is None else _memo

    def d(e):
        key = id(e)
        hit = memo.get(key)
        if hit is not None:
            return hit[1]
        if isinstance(e, Const):
            r = ZERO
        elif isinstance(e, Var):
            r = ONE if e.index == i else ZERO
        elif isinstance(e, Add):
            r = add(*[d(t) for t in e.terms])
        elif isinstance(e, Mul):
            parts = []
            fs = e.factors
            for k, f in enumerate(fs):
                df = d(f)
                if is_const(df, 0):
                    continue
                parts.append(mul(*fs[:k], df, *fs[k + 1:]))
            r = add(*parts)
        elif isinstance(e, Div):
            dn, dd = d(e.num), d(e.den)
            if is_const(dd, 0):
                r = div(dn, e.den)
            else:
                r = div(sub(mul(dn, e.den), mul(e.num, dd)), power(e.den, 2))
        elif isinstance(e, Pow):
            db = d(e.base)
            r = mul(Const(e.n), power(e.base, e.n - 1), db)
        elif isinstance(e, Func):
            du = d(e.arg)
            if is_const(du, 0):
                r = ZERO
            elif e.name == "exp":
                r = mul(e, du)
            elif e.name == "log":
                r = div(du, e.arg)
            elif e.name == "sqrt":
                r = div(du, mul(Const(2), e))
            elif e.name == "sin":
                r = mul(cos(e.arg), du)
            else:
                r = neg(mul(sin(e.arg), du))
        elif isinstance(e, Abs):
            du = d(e.arg)
            if is_const(du, 0):
                r = ZERO
            elif e.sign is None:
                raise DifferentiationError(
                    f"cannot differentiate abs({to_string(e.arg)}) on a sign-indefinite chart")
            else:
                r = mul(Const(e.sign), du)
        else:
            raise TypeError(type(e))
        memo[key] = (e, r)
        return r

    return d(e)


def gradient_exprs(e: Expr, dim: int):
    return [diff(e, i) for i in range(1, dim + 1)]


def dlog(e: Expr, i: int) -> Expr:
    """Derivative of ``log|e|`` in ``x_i``, expanded structurally.

    Products, quotients, powers and exponentials are split before
    differentiating, so densities such as ``exp(1/x^2)`` never have to be
    evaluated (they overflow long before their log-derivative does).
    """
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Mul):
        return add(*[dlog(f, i) for f in e.factors])
    if isinstance(e, Div):
        return sub(dlog(e.num, i), dlog(e.den, i))
    if isinstance(e, Pow):
        return mul(Const(e.n), dlog(e.base, i))
    if isinstance(e, Func) and e.name == "exp":
        return diff(e.arg, i)
    if isinstance(e, Func) and e.name == "sqrt":
        return mul(Const(Fraction(1, 2)), dlog(e.arg, i))
    if isinstance(e, Abs):
        return dlog(e.arg, i)
    if isinstance(e, Var):
        return div(ONE, e) if e.index == i else ZERO
    de = diff(e, i)
    if is_const(de, 0):
        return ZERO
    return div(de, e)


def log_abs(e: Expr) -> Expr:
    """``log|e|`` with products, powers and exponentials expanded."""
    if isinstance(e, Const):
        if e.value == 0:
            raise DomainError("log of zero constant")
        v = abs(e.value)
        return log(Const(v))
    if isinstance(e, Mul):
        return add(*[log_abs(f) for f in e.factors])
    if isinstance(e, Div):
        return sub(log_abs(e.num), log_abs(e.den))
    if isinstance(e, Pow):
        return mul(Const(e.n), log_abs(e.base))
    if isinstance(e, Func) and e.name == "exp":
        return e.arg
    if isinstance(e, Func) and e.name == "sqrt":
        return mul(Const(Fraction(1, 2)), log_abs(e.arg))
    if isinstance(e, Abs):
        return log_abs(e.arg)
    return mul(Const(Fraction(1, 2)), log(power(e, 2)))


# -- evaluation --------------------------------------------------------------

_SCALAR_FUNCS = {"exp": math.exp, "log": math.log, "sqrt": math.sqrt,
                 "sin": math.sin, "cos": math.cos}


def evaluate(e: Expr, point: Sequence):
    """Evaluate at ``point`` (floats, or equally shaped arrays).

    Raises :class:`DomainError` for log/sqrt of out-of-range arguments,
    division by zero, and ``abs`` nodes evaluated on the wrong side.
    """
    pt = [np.asarray(p, dtype=float) for p in point]
    memo = {}

    def ev(e):
        key = id(e)
        hit = memo.get(key)
        if hit is not None:
            return hit[1]
        if isinstance(e, Const):
            r = np.float64(float(e.value))
        elif isinstance(e, Var):
            if e.index > len(pt):
                raise DomainError(f"x{e.index} outside a {len(pt)}-dimensional point")
            r = pt[e.index - 1]
        elif isinstance(e, Add):
            r = ev(e.terms[0])
            for t in e.terms[1:]:
                r = r + ev(t)
        elif isinstance(e, Mul):
            r = ev(e.factors[0])
            for f in e.factors[1:]:
                r = r * ev(f)
        elif isinstance(e, Div):
            den = ev(e.den)
            if np.any(den == 0):
                raise DomainError(f"division by zero in {to_string(e)}")
            r = ev(e.num) / den
        elif isinstance(e, Pow):
            b = ev(e.base)
            if e.n < 0 and np.any(b == 0):
                raise DomainError(f"zero raised to a negative power in {to_string(e)}")
            with np.errstate(over="ignore"):
                r = b ** e.n
        elif isinstance(e, Func):
            a = ev(e.arg)
            if e.name == "log" and np.any(a <= 0):
                raise DomainError(f"log of non-positive value in {to_string(e)}")
            if e.name == "sqrt" and np.any(a < 0):
                raise DomainError(f"sqrt of negative value in {to_string(e)}")
            with np.errstate(over="ignore", under="ignore"):
                r = getattr(np, e.name)(a)
        elif isinstance(e, Abs):
            a = ev(e.arg)
            if e.sign is None:
                r = np.abs(a)
            else:
                if np.any(e.sign * a < 0):
                    raise DomainError(
                        f"abs({to_string(e.arg)}) evaluated off its declared side")
                r = e.sign * a
        else:
            raise TypeError(type(e))
        if np.any(np.isnan(r)):
            raise DomainError(f"undefined value in {to_string(e)}")
        memo[key] = (e, r)
        return r

    r = ev(e)
    if np.ndim(r) == 0:
        return float(r)
    shape = np.broadcast_shapes(*[p.shape for p in pt]) if pt else np.shape(r)
    return np.broadcast_to(r, shape).copy()


# -- code generation ---------------------------------------------------------

def _safe_exp(x):
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


class Compiled:
    """Straight-line code for a list of expressions with shared subterms."""

    def __init__(self, exprs: Sequence[Expr], dim: int):
        self.exprs = [as_expr(e) for e in exprs]
        self.dim = dim
        for e in self.exprs:
            if max_var(e) > dim:
                raise ValueError(f"expression uses x{max_var(e)} on a {dim}-dimensional chart")
        self.source = self._generate()
        np_ns = {"_exp": np.exp, "_log": np.log, "_sqrt": np.sqrt, "_sin": np.sin,
                 "_cos": np.cos, "_abs": np.abs}
        math_ns = {"_exp": _safe_exp, "_log": math.log, "_sqrt": math.sqrt,
                   "_sin": math.sin, "_cos": math.cos, "_abs": abs}
        code = compile(self.source, "<srqc-lambdify>", "exec")
        exec(code, np_ns)
        exec(code, math_ns)
        self._np = np_ns["_f"]
        self._math = math_ns["_f"]

    def _generate(self):
        lines, names = [], {}
        counter = [0]

        def emit(e):
            hit = names.get(e)
            if hit is not None:
                return hit
            if isinstance(e, Const):
                v = float(e.value)
                return repr(v) if v >= 0 else f"({v!r})"
            if isinstance(e, Var):
                return f"x{e.index}"
            if isinstance(e, Add):
                rhs = " + ".join(emit(t) for t in e.terms)
            elif isinstance(e, Mul):
                rhs = " * ".join(emit(f) for f in e.factors)
            elif isinstance(e, Div):
                rhs = f"{emit(e.num)} / {emit(e.den)}"
            elif isinstance(e, Pow):
                b = emit(e.base)
                rhs = f"{b} ** {e.n}" if e.n > 0 else f"1.0 / ({b} ** {-e.n})"
            elif isinstance(e, Func):
                rhs = f"_{e.name}({emit(e.arg)})"
            elif isinstance(e, Abs):
                a = emit(e.arg)
                rhs = f"_abs({a})" if e.sign is None else f"{float(e.sign)!r} * {a}"
            else:
                raise TypeError(type(e))
            name = f"t{counter[0]}"
            counter[0] += 1
            lines.append(f"    {name} = {rhs}")
            names[e] = name
            return name

        outs = [emit(e) for e in self.exprs]
        args = ", ".join(f"x{i}" for i in range(1, self.dim + 1))
        body = "\n".join(lines)
        return f"def _f({args}):\n{body}\n    return ({', '.join(outs)},)\n"

    def __call__(self, *coords):
        """Vectorised evaluation; every output is broadcast to the input shape."""
        arrs = [np.asarray(c, dtype=float) for c in coords]
        with np.errstate(all="ignore"):
            outs = self._np(*arrs)
        shape = np.broadcast_shapes(*[a.shape for a in arrs]) if arrs else ()
        res = [np.broadcast_to(np.asarray(o, dtype=float), shape) for o in outs]
        if not all(np.all(np.isfinite(r)) for r in res):
            # precise diagnosis; raises DomainError on genuine domain violations
            for e, r in zip(self.exprs, res):
                if not np.all(np.isfinite(r)):
                    evaluate(e, arrs)
        return res

    def raw(self, *coords):
        """Vectorised evaluation without domain diagnosis (non-finite values pass through)."""
        arrs = [np.asarray(c, dtype=float) for c in coords]
        with np.errstate(all="ignore"):
            return self._np(*arrs)

    def scalar(self, *coords):
        """Fast path for Python floats."""
        try:
            return self._math(*coords)
        except (ValueError, ZeroDivisionError) as exc:
            raise DomainError(str(exc)) from None
        except OverflowError:
            return tuple(float(r) for r in self(*coords))


def lambdify(exprs, dim: int) -> Compiled:
    return Compiled(list(exprs), dim)


# -- printing ----------------------------------------------------------------

_PREC = {Add: 1, Mul: 2, Div: 2, Pow: 4}


def _prec(e):
    if isinstance(e, Const):
        return 5
    return _PREC.get(type(e), 5)


def _const_str(v):
    if isinstance(v, Fraction):
        if v.denominator == 1:
            return str(v.numerator) if v >= 0 else f"({v.numerator})"
        return f"({v.numerator}/{v.denominator})"
    s = repr(float(v))
    if v < 0 or "e" in s or "inf" in s:
        return f"({s})"
    return s


def to_string(e: Expr) -> str:
    if isinstance(e, Const):
        return _const_str(e.value)
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Add):
        return " + ".join(_wrap(t, 1) for t in e.terms)
    if isinstance(e, Mul):
        return "*".join(_wrap(f, 3 if isinstance(f, Div) else 2) for f in e.factors)
    if isinstance(e, Div):
        return f"{_wrap(e.num, 2)}/{_wrap(e.den, 4)}"
    if isinstance(e, Pow):
        n = str(e.n) if e.n >= 0 else f"({e.n})"
        return f"{_wrap(e.base, 5)}^{n}"
    if isinstance(e, Func):
        return f"{e.name}({to_string(e.arg)})"
    if isinstance(e, Abs):
        return f"abs({to_string(e.arg)})"
    raise TypeError(type(e))


def _wrap(e, min_prec):
    s = to_string(e)
    return s if _prec(e) >= min_prec else f"({s})"


# -- parsing -----------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
""", re.VERBOSE)


class _Tok:
    __slots__ = ("kind", "text", "offset")

    def __init__(self, kind, text, offset):
        self.kind, self.text, self.offset = kind, text, offset


def _tokenize(text):
    toks, pos = [], 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos), text)
        if m.lastgroup != "ws":
            toks.append(_Tok(m.lastgroup, m.group(), _byte_offset(text, pos)))
        pos = m.end()
    toks.append(_Tok("end", "", _byte_offset(text, len(text))))
    return toks


def _byte_offset(text, idx):
    return len(text[:idx].encode("utf-8"))


class _Parser:
    def __init__(self, text, dim, signs, params):
        self.text = text
        self.dim = dim
        self.signs = signs
        self.params = params
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def next(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def fail(self, msg, offset):
        raise ParseError(msg, offset, self.text)

    def starts_operand(self, t):
        return t.kind in ("num", "name") or (t.kind == "op" and t.text in "(-+")

    def operand_after(self, op, parse):
        if not self.starts_operand(self.peek()):
            self.fail(f"expected an operand after {op.text!r}", op.offset)
        return parse()

    def parse(self):
        if self.peek().kind == "end":
            self.fail("empty expression", self.peek().offset)
        e = self.expr()
        t = self.peek()
        if t.kind != "end":
            self.fail(f"unexpected {t.text!r}", t.offset)
        return e

    def expr(self):
        e = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.next()
            rhs = self.operand_after(op, self.term)
            e = Add([e, rhs]) if op.text == "+" else Add([e, Mul([Const(-1), rhs])])
        return e

    def term(self):
        e = self.unary()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.next()
            rhs = self.operand_after(op, self.unary)
            e = Mul([e, rhs]) if op.text == "*" else Div(e, rhs)
        return e

    def unary(self):
        t = self.peek()
        if t.kind == "op" and t.text in "+-":
            self.next()
            inner = self.operand_after(t, self.unary)
            if t.text == "+":
                return inner
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Mul([Const(-1), inner])
        return self.power()

    def power(self):
        base = self.primary()
        if self.peek().kind == "op" and self.peek().text == "^":
            op = self.next()
            ex = self.operand_after(op, self.unary)
            ex = simplify(ex)
            if not isinstance(ex, Const):
                self.fail("exponent must be a constant integer", op.offset)
            v = ex.value
            if isinstance(v, float):
                if not v.is_integer():
                    self.fail(f"non-integer exponent {v}", op.offset)
                v = int(v)
            elif v.denominator != 1:
                self.fail(f"non-integer exponent {v}", op.offset)
            return Pow(base, int(v))
        return base

    def primary(self):
        t = self.next()
        if t.kind == "num":
            return Const(Fraction(t.text))
        if t.kind == "name":
            name = t.text
            m = re.fullmatch(r"x(\d+)", name)
            if m:
                idx = int(m.group(1))
                if idx < 1 or idx > self.dim:
                    self.fail(f"variable {name} outside dimension {self.dim}", t.offset)
                return Var(idx)
            if name in FUNCTIONS or name == "abs":
                lp = self.next()
                if not (lp.kind == "op" and lp.text == "("):
                    self.fail(f"expected '(' after {name}", lp.offset)
                arg = self.expr()
                rp = self.next()
                if not (rp.kind == "op" and rp.text == ")"):
                    self.fail("expected ')'", rp.offset)
                if name == "abs":
                    s = infer_sign(simplify(arg), self.signs)
                    if s is None:
                        self.fail(f"abs({to_string(arg)}) has no declared sign on this chart",
                                  t.offset)
                    return Abs(arg, s)
                return Func(name, arg)
            if name in self.params:
                return Const(self.params[name])
            self.fail(f"unknown name {name!r}", t.offset)
        if t.kind == "op" and t.text == "(":
            e = self.expr()
            rp = self.next()
            if not (rp.kind == "op" and rp.text == ")"):
                self.fail("expected ')'", rp.offset)
            return e
        self.fail(f"unexpected {t.text or 'end of input'!r}", t.offset)


def parse(text: str, dim: int, signs: Mapping[int, int] | None = None,
          params: Mapping[str, object] | None = None) -> Expr:
    """Parse ``text`` into an expression on a ``dim``-dimensional chart.

    ``signs`` maps variable indices to +1/-1 and lets ``abs`` be resolved;
    ``params`` substitutes named rational constants.
    """
    p = {}
    for k, v in (params or {}).items():
        p[k] = v if isinstance(v, (Fraction, float)) else Fraction(v)
    return _Parser(text, dim, dict(signs or {}), p).parse()
