"""Adapted frames, structure constants and the Popp density.

The density is reported against coordinate Lebesgue measure on the chart:

    density(p) = |det N| / sqrt(prod_j det B_j)

where ``N`` is the dual matrix of the adapted frame at ``p`` (rows are the
dual covectors) and ``B_j`` is the Gram matrix of the layer-``j`` structure
constants of all left-nested words of generating indices of length ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FlagTransition, NotBracketGenerating
from .srgeom import DEFAULT_DEPTH, DEFAULT_TOL, SRStructure, flag_at, numerical_rank

TRANSITION_STEP = 1e-6


@dataclass(frozen=True)
class AdaptedFrame:
    point: tuple
    words: tuple            # bracket word (0-based) producing each frame vector
    layer_bounds: tuple     # k_1 <= ... <= k_s = n
    frame_matrix: np.ndarray = field(repr=False)   # columns are frame vectors at point
    dual_matrix: np.ndarray = field(repr=False)    # rows are dual covectors

    @property
    def step(self):
        return len(self.layer_bounds)

    def layer_of(self, index: int) -> int:
        """1-based layer containing frame vector ``index`` (0-based)."""
        for j, k in enumerate(self.layer_bounds):
            if index < k:
                return j + 1
        raise IndexError(index)

    def frame_fields(self, s: SRStructure):
        return [s.bracket(w) for w in self.words]


@dataclass(frozen=True)
class PoppResult:
    density: float
    bdets: tuple
    bcoeffs: dict = field(repr=False)
    frame: AdaptedFrame = field(repr=False)


def _check_transition(s, p, g, max_depth, tol):
    p = np.asarray(p, dtype=float)
    for k in range(s.dim):
        h = TRANSITION_STEP * (1.0 + abs(p[k]))
        for sgn in (-1.0, 1.0):
            q = p.copy()
            q[k] += sgn * h
            try:
                gq = flag_at(s, q, max_depth, tol)
            except NotBracketGenerating:
                gq = None
            if gq != g:
                raise FlagTransition(
                    f"flag transition at {tuple(p.tolist())}: growth vector {g.dims} "
                    f"differs from {None if gq is None else gq.dims} nearby")


def adapted_frame_at(s: SRStructure, p, tol: float = DEFAULT_TOL,
                     max_depth: int = DEFAULT_DEPTH, check_transition: bool = True) -> AdaptedFrame:
    """Greedy adapted frame: generators first, then words in length-lex order."""
    try:
        g = flag_at(s, p, max_depth, tol)
    except NotBracketGenerating as exc:
        raise FlagTransition(f"no adapted frame: {exc}") from None
    if check_transition:
        _check_transition(s, p, g, max_depth, tol)
    cols, words, bounds = [], [], []
    for k in range(1, g.step + 1):
        vals = s._length_values(p, k)
        for w, v in zip(s.words(k), vals.T):
            if len(cols) == s.dim:
                break
            trial = np.column_stack(cols + [v])
            if numerical_rank(trial, tol) > len(cols):
                cols.append(v)
                words.append(w)
        if len(cols) != g.dims[k - 1]:
            raise FlagTransition(
                f"layer {k} spans {len(cols)} directions, flag says {g.dims[k - 1]}")
        bounds.append(len(cols))
    F = np.column_stack(cols)
    N = np.linalg.inv(F)
    return AdaptedFrame(tuple(map(float, p)), tuple(words), tuple(bounds), F, N)


def structure_constants(s: SRStructure, f: AdaptedFrame, p=None) -> dict:
    """Layer-``j`` frame coordinates of every word of length ``j``.

    Returns ``{word: b}`` where ``b`` has length ``k_j - k_{j-1}``.
    """
    p = f.point if p is None else p
    out = {}
    lo = 0
    for j, hi in enumerate(f.layer_bounds, start=1):
        vals = s._length_values(p, j)
        coords = f.dual_matrix @ vals
        for w, c in zip(s.words(j), coords.T):
            out[w] = c[lo:hi].copy()
        lo = hi
    return out


def gram_matrices(f: AdaptedFrame, bcoeffs: dict):
    mats = []
    lo = 0
    for j, hi in enumerate(f.layer_bounds, start=1):
        B = np.zeros((hi - lo, hi - lo))
        for w, b in bcoeffs.items():
            if len(w) == j:
                B += np.outer(b, b)
        mats.append(B)
        lo = hi
    return mats


def popp_density(s: SRStructure, p, tol: float = DEFAULT_TOL,
                 max_depth: int = DEFAULT_DEPTH, check_transition: bool = True) -> PoppResult:
    f = adapted_frame_at(s, p, tol, max_depth, check_transition)
    b = structure_constants(s, f, p)
    dets = tuple(float(np.linalg.det(B)) for B in gram_matrices(f, b))
    if min(dets) <= 0:
        raise FlagTransition(f"degenerate Gram matrix at {f.point}: det B = {dets}")
    density = abs(float(np.linalg.det(f.dual_matrix))) / float(np.sqrt(np.prod(dets)))
    return PoppResult(density, dets, b, f)
