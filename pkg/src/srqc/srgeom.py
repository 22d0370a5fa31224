"""Vector fields, Lie brackets, growth vectors and hypersurfaces."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg

from . import expr as ex
from .errors import DomainError, NotBracketGenerating, NotOnSurface

DEFAULT_TOL = 1e-9
DEFAULT_DEPTH = 4


class VectorField:
    """Coordinate components of a vector field on an n-dimensional chart."""

    __slots__ = ("components", "_compiled")

    def __init__(self, components):
        self.components = tuple(ex.as_expr(c) for c in components)
        self._compiled = None

    @property
    def dim(self):
        return len(self.components)

    def __eq__(self, other):
        return isinstance(other, VectorField) and self.components == other.components

    def __hash__(self):
        return hash(self.components)

    def __repr__(self):
        return "VectorField(" + ", ".join(ex.to_string(c) for c in self.components) + ")"

    def __call__(self, f: ex.Expr) -> ex.Expr:
        """Derivative of ``f`` along the field."""
        return ex.add(*[ex.mul(c, ex.diff(f, j + 1))
                        for j, c in enumerate(self.components) if not ex.is_const(c, 0)])

    def __add__(self, other):
        _check_dims(self, other)
        return VectorField([ex.add(a, b) for a, b in zip(self.components, other.components)])

    def __sub__(self, other):
        _check_dims(self, other)
        return VectorField([ex.sub(a, b) for a, b in zip(self.components, other.components)])

    def scale(self, f) -> "VectorField":
        f = ex.as_expr(f)
        return VectorField([ex.mul(f, c) for c in self.components])

    def is_zero(self):
        return all(ex.is_const(c, 0) for c in self.components)

    def at(self, point) -> np.ndarray:
        if self._compiled is None:
            self._compiled = ex.lambdify(self.components, self.dim)
        return np.array(self._compiled.scalar(*map(float, point)), dtype=float)


def _check_dims(X, Y):
    if X.dim != Y.dim:
        raise ValueError(f"dimension mismatch: {X.dim} vs {Y.dim}")


def coordinate_field(i: int, dim: int) -> VectorField:
    return VectorField([1 if j == i else 0 for j in range(1, dim + 1)])


def lie_bracket(X: VectorField, Y: VectorField) -> VectorField:
    """``[X, Y]^j = sum_i X^i d_i Y^j - Y^i d_i X^j``."""
    _check_dims(X, Y)
    return VectorField([ex.sub(X(yj), Y(xj)) for xj, yj in zip(X.components, Y.components)])


@dataclass(frozen=True)
class Chart:
    dim: int
    signs: dict = field(default_factory=dict)
    box: tuple | None = None

    def contains(self, point, slack=0.0) -> bool:
        if self.box is None:
            return True
        return all(lo - slack <= x <= hi + slack for x, (lo, hi) in zip(point, self.box))


class GrowthVector(NamedTuple):
    dims: tuple
    step: int


class SRStructure:
    """A generating family ``X_1..X_r`` of vector fields on a chart."""

    def __init__(self, fields: Sequence[VectorField], chart: Chart | None = None):
        fields = [f if isinstance(f, VectorField) else VectorField(f) for f in fields]
        if not fields:
            raise ValueError("a structure needs at least one field")
        dim = fields[0].dim
        for f in fields:
            if f.dim != dim:
                raise ValueError("all fields must live on the same chart")
        self.fields = tuple(fields)
        self.dim = dim
        self.chart = chart or Chart(dim)
        self._brackets = {(i,): f for i, f in enumerate(self.fields)}
        self._word_eval = {}

    @property
    def r(self):
        return len(self.fields)

    def words(self, length: int):
        """Left-nested bracket words of the given length, length-lexicographic."""
        return list(itertools.product(range(self.r), repeat=length))

    def bracket(self, word) -> VectorField:
        """``[X_{i1}, [X_{i2}, ... X_{ij}]]`` for a 0-based word."""
        word = tuple(word)
        hit = self._brackets.get(word)
        if hit is None:
            hit = lie_bracket(self.fields[word[0]], self.bracket(word[1:]))
            self._brackets[word] = hit
        return hit

    def words_upto(self, depth: int):
        out = []
        for k in range(1, depth + 1):
            out.extend(self.words(k))
        return out

    def _length_values(self, point, k: int) -> np.ndarray:
        fn = self._word_eval.get(k)
        if fn is None:
            exprs = [c for w in self.words(k) for c in self.bracket(w).components]
            fn = ex.lambdify(exprs, self.dim)
            self._word_eval[k] = fn
        vals = np.array(fn.scalar(*map(float, point)), dtype=float)
        return vals.reshape(-1, self.dim).T

    def word_values(self, point, depth: int) -> tuple[list, np.ndarray]:
        """All words up to ``depth`` and an (n, #words) matrix of their values."""
        words = self.words_upto(depth)
        M = np.hstack([self._length_values(point, k) for k in range(1, depth + 1)])
        return words, M

    def with_fields(self, fields) -> "SRStructure":
        return SRStructure(fields, self.chart)


def numerical_rank(A: np.ndarray, tol: float = DEFAULT_TOL) -> int:
    """Rank from a column-pivoted QR, threshold ``tol * sigma_max``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return 0
    smax = np.linalg.norm(A, 2)
    if smax == 0:
        return 0
    R = scipy.linalg.qr(A, mode="r", pivoting=True)[0]
    d = np.abs(np.diag(R))
    return int(np.sum(d > tol * smax))


def flag_at(s: SRStructure, p, max_depth: int = DEFAULT_DEPTH,
            tol: float = DEFAULT_TOL) -> GrowthVector:
    dims, blocks = [], []
    for k in range(1, max_depth + 1):
        blocks.append(s._length_values(p, k))
        rk = numerical_rank(np.hstack(blocks), tol)
        dims.append(rk)
        if rk == s.dim:
            return GrowthVector(tuple(dims), k)
    raise NotBracketGenerating(
        f"not bracket-generating to depth {max_depth} at {tuple(map(float, p))} "
        f"(dims {tuple(dims)})")


class Equiregularity(NamedTuple):
    ok: bool
    witness: tuple | None

    def __bool__(self):
        return self.ok


def is_equiregular_on(s: SRStructure, samples, tol: float = DEFAULT_TOL,
                      max_depth: int = DEFAULT_DEPTH) -> Equiregularity:
    samples = list(samples)
    if not samples:
        raise ValueError("need at least one sample")
    p0 = samples[0]
    g0 = flag_at(s, p0, max_depth, tol)
    for p in samples[1:]:
        g = flag_at(s, p, max_depth, tol)
        if g != g0:
            return Equiregularity(False, (tuple(p0), g0, tuple(p), g))
    return Equiregularity(True, None)


class Hypersurface:
    """``Z = {psi = 0}``, solvable for coordinate ``solve_for`` (1-based).

    The remaining coordinates, in increasing order, parametrise ``Z``.
    ``pos`` is the side where ``psi > 0``.
    """

    def __init__(self, psi: ex.Expr, dim: int, solve_for: int = 1,
                 labels=("neg", "pos")):
        self.psi = psi
        self.dim = dim
        self.solve_for = solve_for
        self.labels = tuple(labels)
        self.dpsi = [ex.diff(psi, i) for i in range(1, dim + 1)]
        self._fn = ex.lambdify([psi] + self.dpsi, dim)

    @property
    def param_indices(self):
        return [i for i in range(1, self.dim + 1) if i != self.solve_for]

    def value(self, p) -> float:
        return self._fn.scalar(*map(float, p))[0]

    def grad(self, p) -> np.ndarray:
        return np.array(self._fn.scalar(*map(float, p))[1:])

    def side_sign(self, side: str) -> int:
        if side not in self.labels:
            raise ValueError(f"unknown side {side!r}; expected one of {self.labels}")
        return 1 if side == self.labels[1] else -1

    def point_on(self, u, guess: float = 0.0, tol: float = 1e-14) -> np.ndarray:
        """Solve ``psi = 0`` for the distinguished coordinate by Newton's method."""
        p = np.empty(self.dim)
        p[[i - 1 for i in self.param_indices]] = u
        j = self.solve_for - 1
        p[j] = guess
        for _ in range(60):
            vals = self._fn.scalar(*p)
            f, dfj = vals[0], vals[1 + j]
            if dfj == 0:
                raise NotOnSurface(f"psi is not solvable for x{self.solve_for} near {u}")
            step = f / dfj
            p[j] -= step
            if abs(step) <= tol * (1 + abs(p[j])):
                return p
        raise NotOnSurface(f"Newton did not converge on Z at parameters {u}")

    def tangent_basis(self, q) -> np.ndarray:
        """Rows span ``T_q Z``."""
        g = self.grad(q)
        j = self.solve_for - 1
        rows = []
        for i in self.param_indices:
            v = np.zeros(self.dim)
            v[i - 1] = 1.0
            v[j] = -g[i - 1] / g[j]
            rows.append(v)
        return np.array(rows).reshape(len(rows), self.dim)

    def is_submersion_at(self, q, tol: float = DEFAULT_TOL) -> bool:
        return float(np.linalg.norm(self.grad(q))) > tol


def field_pairings(s: SRStructure, Z: Hypersurface, q):
    """``<d psi(q), X_i(q)>`` for each field; None where a field is undefined at q."""
    g = Z.grad(q)
    out = []
    for X in s.fields:
        try:
            out.append(float(g @ X.at(q)))
        except DomainError:
            out.append(None)
    return out


def characteristic_test(s: SRStructure, Z: Hypersurface, q, tol: float = DEFAULT_TOL) -> bool:
    """True iff ``D_q`` is tangent to ``Z`` (all fields annihilated by ``d psi``)."""
    if abs(Z.value(q)) > tol:
        raise NotOnSurface(f"point {tuple(map(float, q))} is not on Z (psi = {Z.value(q):.3g})")
    pairs = [v for v in field_pairings(s, Z, q) if v is not None]
    if not pairs:
        raise DomainError("no generating field can be evaluated on Z at this point")
    gnorm = float(np.linalg.norm(Z.grad(q)))
    return max(abs(v) for v in pairs) <= tol * gnorm
