"""Normal extremals: fixed-step RK4 on Hamilton's equations."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from .errors import DomainError
from .operators import CotangentPoint, Hamiltonian, hamiltonian
from .srgeom import SRStructure

DRIFT_TOL = 1e-8


def hamilton_rhs(s: SRStructure) -> Hamiltonian:
    """The Hamiltonian of ``s``; its ``rhs`` method is the phase-space field."""
    return hamiltonian(s)


def rk4_step(f, y, dt):
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_batch(H: Hamiltonian, starts: np.ndarray, T: float, steps: int) -> np.ndarray:
    """Integrate many initial states at once; returns (steps+1, m, 2n)."""
    y = np.atleast_2d(np.asarray(starts, dtype=float))
    out = np.empty((steps + 1,) + y.shape)
    out[0] = y
    dt = T / steps
    with np.errstate(all="ignore"):
        for k in range(steps):
            y = rk4_step(H.rhs, y, dt)
            out[k + 1] = y
    return out


@dataclass(frozen=True)
class GeodesicTrajectory:
    times: np.ndarray
    states: np.ndarray = field(repr=False)   # (len(times), 2n)
    H0: float
    Hdrift: float
    truncated: bool = False
    drift_flagged: bool = False

    @property
    def dim(self):
        return self.states.shape[1] // 2

    @property
    def positions(self):
        return self.states[:, :self.dim]

    @property
    def covectors(self):
        return self.states[:, self.dim:]

    @property
    def end(self) -> np.ndarray:
        return self.positions[-1]

    def cotangent_points(self):
        return [CotangentPoint(q, p) for q, p in zip(self.positions, self.covectors)]

    def speeds(self, H: Hamiltonian) -> np.ndarray:
        """``sqrt(2H)`` at every node."""
        return np.sqrt(2.0 * np.maximum(H.values(self.states), 0.0))


def integrate(s: SRStructure, start: CotangentPoint, T: float, steps: int,
              box=None, drift_tol: float = DRIFT_TOL) -> GeodesicTrajectory:
    """RK4 from ``start`` over ``[0, T]``; stops early if the chart box is left."""
    if not T > 0:
        raise ValueError("T must be positive")
    if steps < 1:
        raise ValueError("steps must be at least 1")
    H = hamilton_rhs(s)
    y = np.asarray(start.state if isinstance(start, CotangentPoint) else start, dtype=float)
    n = y.size // 2
    dt = T / steps
    ys, ts = [y], [0.0]
    truncated = False
    for k in range(steps):
        try:
            y = rk4_step(lambda z: H.rhs(z), y, dt)
        except DomainError:
            truncated = True
            break
        if not np.all(np.isfinite(y)) or (box is not None and not _inside(y[:n], box)):
            truncated = True
            break
        ys.append(y)
        ts.append((k + 1) * dt)
    states = np.array(ys)
    Hv = H.values(states)
    H0 = float(Hv[0])
    drift = float(np.max(np.abs(Hv - H0)))
    return GeodesicTrajectory(np.array(ts), states, H0, drift, truncated,
                              drift > drift_tol * (1.0 + abs(H0)))


def _inside(q, box):
    return all(lo <= x <= hi for x, (lo, hi) in zip(q, box))


def exp_map(s: SRStructure, q, lam, t: float, steps: int = 1000) -> np.ndarray:
    """Base point of the normal extremal from ``(q, lam)`` at time ``t``."""
    return integrate(s, CotangentPoint(q, lam), t, steps).end


def convergence_order(s: SRStructure, start: CotangentPoint, T: float,
                      steps: int = 20) -> float:
    """Observed order from endpoints at ``steps``, ``2 steps``, ``4 steps``."""
    e = [integrate(s, start, T, steps * 2 ** j).states[-1] for j in range(3)]
    a = np.linalg.norm(e[0] - e[1])
    b = np.linalg.norm(e[1] - e[2])
    return math.log2(a / b)


def horizontal_length(s: SRStructure, traj: GeodesicTrajectory) -> float:
    """Length from the minimal-norm controls of the velocity.

    The velocity is recovered from Hamilton's equations and decomposed on
    the generating family by least squares, independently of ``H``.
    """
    H = hamilton_rhs(s)
    qdot = H.rhs(traj.states)[:, :traj.dim]
    speeds = []
    for q, v in zip(traj.positions, qdot):
        A = np.column_stack([X.at(q) for X in s.fields])
        u = np.linalg.lstsq(A, v, rcond=None)[0]
        speeds.append(np.linalg.norm(u))
    return float(simpson(np.array(speeds), x=traj.times))


def write_tsv(traj: GeodesicTrajectory, fh) -> None:
    """One row per node: ``t, q1..qn, p1..pn``."""
    n = traj.dim
    w = csv.writer(fh, delimiter="\t", lineterminator="\n")
    w.writerow(["t"] + [f"q{i}" for i in range(1, n + 1)] + [f"p{i}" for i in range(1, n + 1)])
    for t, y in zip(traj.times, traj.states):
        w.writerow([f"{t:.12g}"] + [f"{v:.12g}" for v in y])
