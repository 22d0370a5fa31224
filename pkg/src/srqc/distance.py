"""Distance from the singular hypersurface by normal shooting, and Fermi charts.

Normal geodesics leave ``Z`` with the unit annihilator covector
``lam = +-d psi / sqrt(2 H(d psi))``; the distance of ``p`` is the smallest
time at which one of them reaches ``p``.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree

from .errors import CharacteristicPoint, DomainError, NotOnSurface, OutsideTube
from .geodesics import integrate_batch
from .operators import MeasureDensity, hamiltonian
from .srgeom import DEFAULT_TOL, Hypersurface, SRStructure

TOL_SHOOT = 1e-6
GRID = 64
MAX_COARSE_SHOTS = 2 ** 14
REFINE_DT = 5e-3
STOP_FRACTION = 1e-3
FOLD_RTOL = 1e-9


@dataclass(frozen=True)
class NormalCovector:
    base: np.ndarray
    lam: np.ndarray
    side: str


def annihilator_covector(s: SRStructure, Z: Hypersurface, q, side: str,
                         tol: float = DEFAULT_TOL) -> NormalCovector:
    """Unit-Hamiltonian covector annihilating ``T_q Z``, pointing into ``side``."""
    q = np.asarray(q, dtype=float)
    if abs(Z.value(q)) > tol:
        raise NotOnSurface(f"point {tuple(q.tolist())} is not on Z")
    sgn = Z.side_sign(side)
    g = Z.grad(q)
    two_h = 2.0 * hamiltonian(s).values(np.concatenate([q, g]))
    if not np.isfinite(two_h):
        raise DomainError(f"the fields cannot be evaluated at {tuple(q.tolist())}")
    if two_h <= tol ** 2 * float(g @ g):
        raise CharacteristicPoint(
            f"characteristic point at {tuple(q.tolist())}: d psi annihilates the distribution")
    return NormalCovector(q, sgn * g / math.sqrt(two_h), side)


def _unit_covectors(s, Z, qs):
    """Unit annihilators (pos orientation) at many points of Z, vectorised."""
    H = hamiltonian(s)
    g = np.array([Z.grad(q) for q in qs])
    two_h = 2.0 * H.values(np.hstack([qs, g]))
    return g / np.sqrt(two_h)[:, None], two_h


def z_grid(Z: Hypersurface, zbox, per_param: int) -> np.ndarray:
    """Tensor grid of Z-chart parameters, shape (m, n-1)."""
    axes = [np.linspace(lo, hi, per_param) for lo, hi in zbox]
    return np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, len(zbox))


class Shooter:
    """Normal exponential ``E(q(u), t lam(u))`` from one side of ``Z``."""

    def __init__(self, s: SRStructure, Z: Hypersurface):
        self.s = s
        self.Z = Z
        self.H = hamiltonian(s)
        self.n = s.dim

    def initial(self, u, sign: int) -> np.ndarray:
        q = self.Z.point_on(u)
        nc = annihilator_covector(self.s, self.Z, q, self.Z.labels[1] if sign > 0 else self.Z.labels[0])
        return np.concatenate([q, nc.lam])

    def endpoint(self, u, t: float, sign: int, dt: float = REFINE_DT) -> np.ndarray:
        """Base point reached at time ``t`` (scalar RK4, ``ceil(t/dt)`` steps)."""
        y = tuple(self.initial(u, sign))
        steps = max(8, int(math.ceil(abs(t) / dt)))
        h = t / steps
        f = self.H.rhs_scalar
        for _ in range(steps):
            k1 = f(y)
            k2 = f(tuple(a + 0.5 * h * b for a, b in zip(y, k1)))
            k3 = f(tuple(a + 0.5 * h * b for a, b in zip(y, k2)))
            k4 = f(tuple(a + h * b for a, b in zip(y, k3)))
            y = tuple(a + h / 6.0 * (b + 2 * c + 2 * d + e)
                      for a, b, c, d, e in zip(y, k1, k2, k3, k4))
        return np.array(y[:self.n])

    def starts(self, us, sign: int) -> np.ndarray:
        qs = np.array([self.Z.point_on(u) for u in us])
        lam, two_h = _unit_covectors(self.s, self.Z, qs)
        if np.any(~np.isfinite(two_h)) or np.any(two_h <= 0):
            raise CharacteristicPoint("the coarse Z-grid contains characteristic points")
        return np.hstack([qs, sign * lam])


@dataclass(frozen=True)
class DeltaResult:
    value: float
    foot: np.ndarray
    covector: NormalCovector
    residual: float


def delta(s: SRStructure, Z: Hypersurface, p, zbox, t_max: float = 1.0,
          grid: int = GRID, tol_shoot: float = TOL_SHOOT, coarse_steps: int = 64,
          candidates: int = 4, sides=None) -> DeltaResult:
    """Distance of ``p`` from ``Z`` by coarse shooting plus simplex refinement."""
    p = np.asarray(p, dtype=float)
    if abs(Z.value(p)) <= tol_shoot * max(1.0, float(np.linalg.norm(Z.grad(p)))):
        side = Z.labels[1]
        u = p[[i - 1 for i in Z.param_indices]]
        try:
            nc = annihilator_covector(s if not isinstance(s, dict) else s[side], Z, p, side,
                                      tol=max(DEFAULT_TOL, abs(Z.value(p))))
        except Exception:
            nc = None
        return DeltaResult(0.0, p.copy(), nc, 0.0)
    structs = s if isinstance(s, dict) else {lab: s for lab in Z.labels}
    sides = list(sides or Z.labels)
    d = len(Z.param_indices)
    per = max(2, min(grid, int(math.floor(MAX_COARSE_SHOTS ** (1.0 / d) + 1e-9))))
    us = z_grid(Z, zbox, per)
    spans = np.array([hi - lo for lo, hi in zbox]) / max(per - 1, 1)
    cands = []
    for side in sides:
        sh = Shooter(structs[side], Z)
        sign = Z.side_sign(side)
        traj = integrate_batch(sh.H, sh.starts(us, sign), t_max, coarse_steps)
        pos = traj[:, :, :sh.n]
        dist = np.linalg.norm(pos - p, axis=2)
        dist = np.where(np.isfinite(dist), dist, np.inf)
        k = np.argmin(dist, axis=0)
        best = dist[k, np.arange(len(us))]
        for j in np.argsort(best)[:candidates]:
            cands.append((best[j], side, us[j], k[j] * t_max / coarse_steps))
    cands.sort(key=lambda c: c[0])
    def stop(intermediate_result):
        # residuals this far below tolShoot pin t down well past its accuracy
        if intermediate_result.fun <= STOP_FRACTION * tol_shoot:
            raise StopIteration

    results = []
    for _, side, u0, t0 in cands[:candidates]:
        sh = Shooter(structs[side], Z)
        sign = Z.side_sign(side)

        def obj(x, sh=sh, sign=sign):
            if abs(x[-1]) > t_max:
                return np.inf
            try:
                e = sh.endpoint(x[:-1], abs(x[-1]), sign)
            except (DomainError, NotOnSurface, CharacteristicPoint, OverflowError):
                return np.inf
            r = float(np.linalg.norm(e - p))
            return r if math.isfinite(r) else np.inf

        x0 = np.append(u0, max(t0, t_max / coarse_steps))
        simplex = [x0]
        for i in range(d + 1):
            v = x0.copy()
            v[i] += (spans[i] if i < d else t_max / coarse_steps) * 0.5
            simplex.append(v)
        res = minimize(obj, x0, method="Nelder-Mead", callback=stop,
                       options={"initial_simplex": np.array(simplex), "xatol": 1e-11,
                                "fatol": 1e-11, "maxiter": 4000, "maxfev": 8000})
        results.append((float(res.fun), abs(float(res.x[-1])), side, res.x[:-1]))
    ok = [r for r in results if r[0] <= tol_shoot]
    if not ok:
        best = min(results, key=lambda r: r[0])
        raise OutsideTube(
            f"outside certified tube: best residual {best[0]:.3g} at t = {best[1]:.6g}",
            upper_bound=best[1])
    res, t, side, u = min(ok, key=lambda r: r[1])
    foot = Z.point_on(u)
    nc = annihilator_covector(structs[side], Z, foot, side)
    return DeltaResult(t, foot, nc, res)


def delta_bruteforce(s, Z: Hypersurface, points, zbox, t_max: float,
                     shots: int = 10_000, steps: int = 400, sides=None) -> np.ndarray:
    """Oracle: dense shooting grid, nearest trajectory node, no refinement."""
    structs = s if isinstance(s, dict) else {lab: s for lab in Z.labels}
    sides = list(sides or Z.labels)
    d = len(Z.param_indices)
    per = max(2, int(round((shots / len(sides)) ** (1.0 / d))))
    us = z_grid(Z, zbox, per)
    nodes, times = [], []
    ts = np.linspace(0.0, t_max, steps + 1)
    for side in sides:
        sh = Shooter(structs[side], Z)
        traj = integrate_batch(sh.H, sh.starts(us, Z.side_sign(side)), t_max, steps)
        pos = traj[:, :, :sh.n].reshape(-1, sh.n)
        tt = np.repeat(ts, len(us))
        good = np.all(np.isfinite(pos), axis=1)
        nodes.append(pos[good])
        times.append(tt[good])
    tree = cKDTree(np.vstack(nodes))
    times = np.concatenate(times)
    _, idx = tree.query(np.atleast_2d(np.asarray(points, dtype=float)))
    return times[idx]


@dataclass(frozen=True)
class FermiChart:
    side: str
    u: np.ndarray            # (m, n-1) Z-chart parameters
    t: np.ndarray            # (nt,) increasing, > 0
    values: np.ndarray = field(repr=False)   # (nt, m, n) points E(q(u), t lam(u))
    theta: np.ndarray = field(repr=False)    # (nt, m)
    jacdet: np.ndarray = field(repr=False)   # (nt, m)
    injectivity_bound: float | None = None

    def write_tsv(self, fh) -> None:
        n = self.values.shape[2]
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["t"] + [f"u{i}" for i in range(1, self.u.shape[1] + 1)]
                   + [f"x{i}" for i in range(1, n + 1)] + ["theta", "jacdet"])
        for j in range(self.u.shape[0]):
            for i, t in enumerate(self.t):
                w.writerow([f"{t:.12g}"] + [f"{v:.12g}" for v in self.u[j]]
                           + [f"{v:.12g}" for v in self.values[i, j]]
                           + [f"{self.theta[i, j]:.12g}", f"{self.jacdet[i, j]:.12g}"])


def _initial_jacobian(sh: Shooter, u, sign, h=1e-6):
    """d(q, lam)/du of the initial data, by central differences."""
    cols = []
    for k in range(len(u)):
        e = np.zeros(len(u))
        e[k] = h * (1.0 + abs(u[k]))
        cols.append((sh.initial(u + e, sign) - sh.initial(u - e, sign)) / (2 * e[k]))
    return np.array(cols).T.reshape(2 * sh.n, len(u))


def _log_density(m: MeasureDensity, dim: int):
    if m.symbolic:
        from . import expr as ex
        fn = ex.lambdify([m.log_rho()], dim)
        return lambda pts: np.asarray(fn.raw(*pts.T)[0], dtype=float) * np.ones(len(pts))
    return lambda pts: np.log(np.array([m.numeric(q) for q in pts]))


def fermi_chart(s: SRStructure, Z: Hypersurface, m: MeasureDensity, us, t_grid,
                side: str, max_dt: float = 1e-3) -> FermiChart:
    """Fermi chart on ``side`` with ``theta = 1/2 log(rho(F) |det DF|)``.

    ``det DF`` is propagated with the variational equations of the
    Hamiltonian flow, so no finite differences in ``t`` are involved.
    """
    us = np.atleast_2d(np.asarray(us, dtype=float))
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0) or t_grid[0] <= 0:
        raise ValueError("t grid must be positive and increasing")
    sh = Shooter(s, Z)
    H = sh.H
    n = sh.n
    sign = Z.side_sign(side)
    y = sh.starts(us, sign)                                    # (m, 2n)
    Phi = np.array([_initial_jacobian(sh, u, sign) for u in us])  # (m, 2n, d)

    def f(state):
        yy, PP = state
        return H.rhs(yy), np.einsum("mij,mjk->mik", H.jacobian(yy), PP)

    vals = np.empty((len(t_grid), len(us), n))
    dets = np.empty((len(t_grid), len(us)))
    t_prev = 0.0
    with np.errstate(all="ignore"):
        for i, t in enumerate(t_grid):
            k = max(1, int(math.ceil((t - t_prev) / max_dt)))
            h = (t - t_prev) / k
            for _ in range(k):
                k1 = f((y, Phi))
                k2 = f((y + 0.5 * h * k1[0], Phi + 0.5 * h * k1[1]))
                k3 = f((y + 0.5 * h * k2[0], Phi + 0.5 * h * k2[1]))
                k4 = f((y + h * k3[0], Phi + h * k3[1]))
                y = y + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
                Phi = Phi + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            t_prev = t
            vals[i] = y[:, :n]
            DF = np.concatenate([H.rhs(y)[:, :n, None], Phi[:, :n, :]], axis=2)
            dets[i] = np.linalg.det(DF)
    # keep only the region where det DF keeps its initial sign; a det at
    # rounding level relative to its start counts as a fold
    sgn0 = np.sign(dets[0])
    flat = np.abs(dets) <= FOLD_RTOL * np.abs(dets[0])
    bad = np.where(np.any((np.sign(dets) != sgn0) | flat | ~np.isfinite(dets), axis=1))[0]
    bound = None
    if bad.size:
        cut = int(bad[0])
        bound = float(t_grid[cut - 1]) if cut > 0 else 0.0
        t_grid, vals, dets = t_grid[:cut], vals[:cut], dets[:cut]
    logrho = _log_density(m, n)
    theta = np.empty(dets.shape)
    for i in range(len(t_grid)):
        theta[i] = 0.5 * (logrho(vals[i]) + np.log(np.abs(dets[i])))
    return FermiChart(side, us, t_grid, vals, theta, dets, bound)


@dataclass(frozen=True)
class InjectivityProbe:
    side: str
    bounds: np.ndarray     # per-u estimate
    eps0: float


def injectivity_probe(s: SRStructure, Z: Hypersurface, us, t_max: float, side: str,
                      nodes: int = 100, collision_tol: float = 1e-9) -> InjectivityProbe:
    """Conservative injectivity radius of the normal exponential.

    A column ends at the first ``t`` where ``det DF`` changes sign or where it
    comes within ``collision_tol`` of a node of another column.
    """
    us = np.atleast_2d(np.asarray(us, dtype=float))
    if t_max <= 0:
        return InjectivityProbe(side, np.zeros(0), 0.0)
    t = np.linspace(t_max / nodes, t_max, nodes)
    chart = fermi_chart(s, Z, MeasureDensity.lebesgue(), us, t, side, max_dt=min(1e-2, t_max / nodes))
    nt = len(chart.t)
    bounds = np.full(len(us), chart.t[-1] if nt else 0.0)
    if nt and len(us) > 1:
        pts = chart.values.reshape(-1, chart.values.shape[2])
        col = np.tile(np.arange(len(us)), nt)
        tree = cKDTree(pts)
        for a, b in sorted(tree.query_pairs(collision_tol)):
            if col[a] != col[b]:
                ta = chart.t[a // len(us)]
                for c in (col[a], col[b]):
                    bounds[c] = min(bounds[c], ta)
    if chart.injectivity_bound is not None:
        bounds = np.minimum(bounds, chart.injectivity_bound)
    return InjectivityProbe(side, bounds, float(bounds.min()) if bounds.size else 0.0)
