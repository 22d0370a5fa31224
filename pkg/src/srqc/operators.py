"""Horizontal gradient, divergence, sub-Laplacian and the Hamiltonian."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from . import expr as ex
from .srgeom import SRStructure, VectorField

KINDS = ("lebesgue", "popp-closed-form", "user")


@dataclass(frozen=True)
class MeasureDensity:
    """Density ``rho`` of the measure with respect to coordinate Lebesgue.

    ``numeric`` optionally overrides pointwise evaluation (used when only a
    numerical density, such as Popp's measure without a closed form, exists).
    """

    rho: ex.Expr | None
    kind: str = "user"
    numeric: Callable | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown measure kind {self.kind!r}")
        if self.rho is None and self.numeric is None:
            raise ValueError("a measure needs a symbolic or numeric density")

    @classmethod
    def lebesgue(cls):
        return cls(ex.ONE, "lebesgue")

    @property
    def symbolic(self) -> bool:
        return self.rho is not None

    def dlog(self, i: int) -> ex.Expr:
        return ex.dlog(self.rho, i)

    def log_rho(self) -> ex.Expr:
        return ex.log_abs(self.rho)

    def scaled(self, c) -> "MeasureDensity":
        return MeasureDensity(ex.mul(ex.as_expr(c), self.rho), self.kind)

    def at(self, p) -> float:
        if self.numeric is not None:
            return float(self.numeric(p))
        return float(ex.evaluate(self.rho, list(map(float, p))))


@dataclass(frozen=True)
class CotangentPoint:
    base: np.ndarray
    covector: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.base, dtype=float)
        c = np.asarray(self.covector, dtype=float)
        if b.shape != c.shape:
            raise ValueError(f"base has {b.size} coordinates, covector has {c.size}")
        object.__setattr__(self, "base", b)
        object.__setattr__(self, "covector", c)

    @property
    def state(self) -> np.ndarray:
        return np.concatenate([self.base, self.covector])


def gradient(u: ex.Expr, s: SRStructure) -> VectorField:
    """``sum_i X_i(u) X_i``."""
    out = VectorField([0] * s.dim)
    for X in s.fields:
        out = out + X.scale(X(u))
    return out


def horizontal_product(u: ex.Expr, v: ex.Expr, s: SRStructure) -> ex.Expr:
    """``g(grad u, grad v) = sum_i X_i(u) X_i(v)``."""
    return ex.add(*[ex.mul(X(u), X(v)) for X in s.fields])


def divergence(X: VectorField, m: MeasureDensity) -> ex.Expr:
    """``(1/rho) sum_i d_i(rho X^i)``, expanded via ``d_i log rho``."""
    terms = []
    for i, c in enumerate(X.components, start=1):
        if ex.is_const(c, 0):
            continue
        terms.append(ex.diff(c, i))
        terms.append(ex.mul(c, m.dlog(i)))
    return ex.add(*terms)


def sublaplacian(u: ex.Expr, s: SRStructure, m: MeasureDensity) -> ex.Expr:
    """``sum_i X_i^2 u + div(X_i) X_i u``."""
    terms = []
    for X in s.fields:
        Xu = X(u)
        terms.append(X(Xu))
        terms.append(ex.mul(divergence(X, m), Xu))
    return ex.add(*terms)


class Hamiltonian:
    """``H = 1/2 sum_i <p, X_i>^2`` on a 2n-dimensional phase chart.

    Variables ``x1..xn`` are positions, ``x(n+1)..x(2n)`` are momenta.
    """

    def __init__(self, s: SRStructure):
        n = s.dim
        self.dim = n
        ps = [ex.var(n + j) for j in range(1, n + 1)]
        self.pairings = [ex.add(*[ex.mul(pj, c) for pj, c in zip(ps, X.components)])
                         for X in s.fields]
        self.expr = ex.mul(ex.Const(Fraction(1, 2)),
                           ex.add(*[ex.power(h, 2) for h in self.pairings]))
        self.dq = [ex.diff(self.expr, i) for i in range(1, n + 1)]
        self.dp = [ex.diff(self.expr, n + i) for i in range(1, n + 1)]
        self.rhs_exprs = self.dp + [ex.neg(d) for d in self.dq]
        self._value = ex.lambdify([self.expr], 2 * n)
        self._rhs = ex.lambdify(self.rhs_exprs, 2 * n)
        self._jac = None

    def __call__(self, lam) -> float:
        state = lam.state if isinstance(lam, CotangentPoint) else np.asarray(lam, dtype=float)
        return float(self._value.scalar(*map(float, state))[0])

    def values(self, states: np.ndarray) -> np.ndarray:
        """Vectorised ``H`` on an (..., 2n) array of states."""
        states = np.asarray(states, dtype=float)
        out = self._value.raw(*np.moveaxis(states, -1, 0))[0]
        return np.broadcast_to(np.asarray(out, dtype=float), states.shape[:-1]).copy()

    def rhs(self, states: np.ndarray) -> np.ndarray:
        """``(dH/dp, -dH/dq)`` for an (..., 2n) array of states."""
        states = np.asarray(states, dtype=float)
        out = self._rhs.raw(*np.moveaxis(states, -1, 0))
        shape = states.shape[:-1]
        return np.stack([np.broadcast_to(np.asarray(o, dtype=float), shape) for o in out], axis=-1)

    def rhs_scalar(self, y):
        """:meth:`rhs` for one state as a tuple (raises on domain violations)."""
        return self._rhs.scalar(*y)

    def jacobian(self, states: np.ndarray) -> np.ndarray:
        """Exact Jacobian of :meth:`rhs`, shape (..., 2n, 2n)."""
        m = 2 * self.dim
        if self._jac is None:
            self._jac = ex.lambdify([ex.diff(f, j) for f in self.rhs_exprs
                                     for j in range(1, m + 1)], m)
        states = np.asarray(states, dtype=float)
        shape = states.shape[:-1]
        out = np.stack([np.broadcast_to(np.asarray(o, dtype=float), shape)
                        for o in self._jac.raw(*np.moveaxis(states, -1, 0))], axis=-1)
        return out.reshape(states.shape[:-1] + (m, m))


def hamiltonian(s: SRStructure) -> Hamiltonian:
    """Hamiltonian of ``s``, built once per structure."""
    h = getattr(s, "_hamiltonian", None)
    if h is None:
        h = Hamiltonian(s)
        s._hamiltonian = h
    return h
