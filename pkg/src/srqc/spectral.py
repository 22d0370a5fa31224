"""One-dimensional reductions of separable models and their spectra.

For a model with one periodic coordinate ``y`` and one transverse coordinate
``x``, the Fourier mode ``n`` of the operator, conjugated by ``exp(theta)``,
is ``-d^2/dx^2 + W`` with ``W(x; n) = sum_i (n b_i(x))^2 + V_eff(x)``, where
``b_i`` is the ``y``-component of ``X_i``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from . import expr as ex
from .criterion import veff_closed_form
from .errors import ModelError, SRQCError

BCS = ("dirichlet", "neumann")


@dataclass(frozen=True)
class ReducedOperator:
    W: ex.Expr                  # in the single variable x1
    interval: tuple
    mode: int

    def potential(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        fn = ex.lambdify([self.W], 1)
        return np.asarray(fn(x)[0], dtype=float)

    def with_interval(self, lo: float, hi: float | None = None) -> "ReducedOperator":
        return ReducedOperator(self.W, (lo, self.interval[1] if hi is None else hi), self.mode)


@dataclass(frozen=True)
class SpectrumResult:
    eigenvalues: np.ndarray
    grid: int
    bc: str
    cutoff: float

    def write_tsv(self, fh) -> None:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["index", "eigenvalue"])
        for i, v in enumerate(self.eigenvalues):
            w.writerow([i, f"{v:.12g}"])


def reduce_1d(model, mode: int, side: str = "pos", cutoff: float = 1e-3,
              x_max: float | None = None) -> ReducedOperator:
    """Reduced potential of Fourier mode ``mode`` on ``(cutoff, x_max)``."""
    sep = model.separable
    if not sep:
        raise ModelError(f"model {model.name!r} is not declared separable")
    py, px = int(sep["periodic"]), int(sep["transverse"])
    sd = model.side(side)
    s = sd.structure
    if model.dim != 2 or {py, px} != {1, 2}:
        raise ModelError("only two-dimensional Fourier reductions are supported")
    if sd.delta is None or ex.free_vars(sd.delta) - {px}:
        raise ModelError("the reduction needs a declared distance depending on the transverse coordinate only")
    shift = {px: ex.var(1)}
    b_terms, unit = [], 0
    for X in s.fields:
        a, b = X.components[px - 1], X.components[py - 1]
        if (ex.free_vars(a) | ex.free_vars(b)) - {px}:
            raise ModelError("field components must depend on the transverse coordinate only")
        if not ex.is_const(a, 0) and not ex.is_const(b, 0):
            raise ModelError("mixed transverse/periodic fields are not separable in this form")
        if ex.is_const(a, 1):
            unit += 1
        elif not ex.is_const(a, 0):
            raise ModelError("transverse components must be 0 or 1")
        if not ex.is_const(b, 0):
            b_terms.append(ex.power(ex.mul(ex.Const(mode), ex.substitute(b, shift)), 2))
    if unit != 1:
        raise ModelError("exactly one field must be the transverse coordinate field")
    V = veff_closed_form(sd.delta, s, sd.measure)
    if ex.free_vars(V) - {px}:
        raise ModelError("effective potential depends on the periodic coordinate")
    W = ex.add(*b_terms, ex.substitute(V, shift))
    hi = x_max if x_max is not None else model.box[px - 1][1]
    return ReducedOperator(W, (cutoff, hi), mode)


def assemble(op: ReducedOperator, grid: int, bc: str):
    """Diagonal and off-diagonal of the cell-centred finite-difference matrix.

    The cutoff end takes the requested condition through a ghost cell; the
    far end is always Dirichlet.
    """
    if bc not in BCS:
        raise ValueError(f"bc must be one of {BCS}")
    lo, hi = op.interval
    if not lo > 0 and op.W is not None and _singular_at_zero(op):
        raise ValueError("the cutoff must be positive")
    if grid < 100:
        raise ValueError("grid must be at least 100")
    h = (hi - lo) / grid
    x = lo + (np.arange(grid) + 0.5) * h
    W = op.potential(x) * np.ones(grid)
    if not np.all(np.isfinite(W)):
        raise SRQCError("potential is not finite on the grid")
    d = 2.0 / h ** 2 + W
    d[0] += (1.0 if bc == "dirichlet" else -1.0) / h ** 2
    d[-1] += 1.0 / h ** 2
    e = np.full(grid - 1, -1.0 / h ** 2)
    return x, d, e


def _singular_at_zero(op):
    try:
        return not np.isfinite(op.potential(np.array([0.0]))[0])
    except Exception:
        return True


def eigenvalues(op: ReducedOperator, grid: int, bc: str = "dirichlet",
                how_many: int = 5) -> SpectrumResult:
    _, d, e = assemble(op, grid, bc)
    try:
        w = eigh_tridiagonal(d, e, eigvals_only=True, select="i",
                             select_range=(0, min(how_many, grid) - 1))
    except np.linalg.LinAlgError as exc:
        raise SRQCError(f"eigensolver failed: {exc}") from None
    return SpectrumResult(np.sort(w), grid, bc, op.interval[0])


def count_below(op: ReducedOperator, grid: int, level: float, bc: str = "dirichlet") -> int:
    _, d, e = assemble(op, grid, bc)
    w = eigh_tridiagonal(d, e, eigvals_only=True, select="v", select_range=(-np.inf, level))
    return int(len(w))


@dataclass(frozen=True)
class ProbeRow:
    cutoff: float
    grid: int
    dirichlet: float
    neumann: float

    @property
    def spread(self) -> float:
        return abs(self.dirichlet - self.neumann)


def confinement_probe(op: ReducedOperator, grids, cutoffs) -> list:
    """Lowest eigenvalue under both cutoff conditions, per (cutoff, grid)."""
    cutoffs = list(cutoffs)
    if any(b >= a for a, b in zip(cutoffs, cutoffs[1:])):
        raise ValueError("cutoffs must decrease")
    rows = []
    for c in cutoffs:
        oc = op.with_interval(c)
        for g in grids:
            lam = [eigenvalues(oc, g, bc, 1).eigenvalues[0] for bc in BCS]
            rows.append(ProbeRow(c, g, float(lam[0]), float(lam[1])))
    return rows


def write_probe_tsv(rows, fh) -> None:
    w = csv.writer(fh, delimiter="\t", lineterminator="\n")
    w.writerow(["cutoff", "grid", "lambda_dirichlet", "lambda_neumann", "spread"])
    for r in rows:
        w.writerow([f"{r.cutoff:.6g}", r.grid, f"{r.dirichlet:.12g}", f"{r.neumann:.12g}",
                    f"{r.spread:.6e}"])
