import io
import math

import numpy as np
import pytest
from conftest import cached_model, heisenberg_structure, martinet_structure

from srqc.geodesics import (convergence_order, exp_map, hamilton_rhs, horizontal_length,
                            integrate, write_tsv)
from srqc.operators import CotangentPoint

BUNDLED = [("grushin", {}), ("martinet", {}), ("kmartinet", {"k": 2}), ("kmartinet", {"k": 3}),
           ("ex52", {"l": 1}), ("ex52", {"l": 2}), ("ex53", {})]


def test_martinet_rhs(martinet):
    rhs = hamilton_rhs(martinet).rhs_scalar((0.5, 0, 0, 1, 0, 0))
    np.testing.assert_allclose(rhs, [1, 0, 0, 0, 0, 0], atol=0)


def test_rhs_vanishes_at_zero_covector(martinet, rng):
    for q in rng.uniform(-1, 1, (5, 3)):
        assert np.all(np.array(hamilton_rhs(martinet).rhs_scalar((*q, 0, 0, 0))) == 0)


def test_heisenberg_rhs(heisenberg):
    rhs = hamilton_rhs(heisenberg).rhs_scalar((0, 0, 0, 0, 1, 1))
    np.testing.assert_allclose(rhs, [0, 1, 0, -1, 0, 0], atol=0)


def test_rhs_is_exact_not_differenced(martinet, rng):
    H = hamilton_rhs(martinet)
    for y in rng.normal(size=(5, 6)):
        h = 1e-6
        fd = np.empty(6)
        for i in range(6):
            e = np.zeros(6)
            e[i] = h
            fd[i] = (H(y + e) - H(y - e)) / (2 * h)
        rhs = np.array(H.rhs_scalar(y))
        np.testing.assert_allclose(rhs[:3], fd[3:], atol=1e-7)
        np.testing.assert_allclose(rhs[3:], -fd[:3], atol=1e-7)


@pytest.mark.parametrize("sign", [1, -1])
def test_martinet_straight_lines(martinet, sign):
    y0, z0 = 0.3, -0.7
    tr = integrate(martinet, CotangentPoint((0, y0, z0), (sign, 0, 0)), 0.8, 100)
    expect = np.column_stack([sign * tr.times, np.full_like(tr.times, y0), np.full_like(tr.times, z0)])
    np.testing.assert_allclose(tr.positions, expect, atol=1e-14)


def test_zero_covector_is_constant(martinet):
    tr = integrate(martinet, CotangentPoint((0.2, 0.3, 0.4), (0, 0, 0)), 3.7, 50)
    assert np.all(tr.positions == [0.2, 0.3, 0.4])
    assert tr.H0 == 0 and tr.Hdrift == 0


def test_heisenberg_drift_and_length(heisenberg):
    tr = integrate(heisenberg, CotangentPoint((0, 0, 0), (0, 1, 1)), 1.0, 1000)
    assert tr.Hdrift <= 1e-10
    assert not tr.drift_flagged
    L = horizontal_length(heisenberg, tr)
    assert L == pytest.approx(1.0 * math.sqrt(2 * tr.H0), abs=1e-6)


def test_speed_is_constant(heisenberg):
    tr = integrate(heisenberg, CotangentPoint((0.1, 0.2, 0.3), (0.4, 1.1, -0.8)), 2.0, 1000)
    v = tr.speeds(hamilton_rhs(heisenberg))
    assert np.max(np.abs(v - math.sqrt(2 * tr.H0))) <= tr.Hdrift / math.sqrt(2 * tr.H0) + 1e-12


def test_exp_map_homogeneity(heisenberg, martinet, rng):
    for s in (heisenberg, martinet):
        q = rng.uniform(-0.5, 0.5, 3)
        lam = rng.normal(size=3) * 0.5
        a = exp_map(s, q, 2 * lam, 0.4, steps=800)
        b = exp_map(s, q, lam, 0.8, steps=800)
        np.testing.assert_allclose(a, b, atol=1e-10)


@pytest.mark.parametrize("name,params", BUNDLED)
def test_energy_conservation_on_bundled_models(name, params, rng):
    m = cached_model(name, **params)
    for label, side in m.sides.items():
        s = side.structure
        sgn = m.Z.side_sign(label) if m.Z is not None else 1
        for _ in range(3):
            q = rng.uniform(0.2, 0.6, s.dim) * np.r_[sgn, rng.choice([-1, 1], s.dim - 1)]
            lam = rng.normal(size=s.dim)
            tr = integrate(s, CotangentPoint(q, lam), 2.0, 1000, box=m.box)
            assert len(tr.times) > 100
            assert tr.Hdrift <= 1e-8 * (1 + tr.H0), (name, label, q, lam)


@pytest.mark.parametrize("s,start", [
    (martinet_structure(), CotangentPoint((0.5, 0, 0), (0.6, 0.8, 1.0))),
    (heisenberg_structure(), CotangentPoint((0, 0, 0), (0, 1, 1))),
])
def test_convergence_order(s, start):
    assert convergence_order(s, start, 1.0, steps=20) == pytest.approx(4.0, abs=0.3)


def test_leaving_the_box_truncates(martinet):
    tr = integrate(martinet, CotangentPoint((0, 0, 0), (1, 0, 0)), 2.0, 200, box=[(-1, 1)] * 3)
    assert tr.truncated
    assert tr.end[0] <= 1.0
    assert len(tr.times) < 201


def test_rejects_bad_arguments(martinet):
    start = CotangentPoint((0, 0, 0), (1, 0, 0))
    with pytest.raises(ValueError):
        integrate(martinet, start, 0.0, 10)
    with pytest.raises(ValueError):
        integrate(martinet, start, 1.0, 0)


def test_trajectory_dump(heisenberg):
    tr = integrate(heisenberg, CotangentPoint((0, 0, 0), (0, 1, 1)), 1.0, 4)
    buf = io.StringIO()
    write_tsv(tr, buf)
    rows = buf.getvalue().splitlines()
    assert rows[0].split("\t") == ["t", "q1", "q2", "q3", "p1", "p2", "p3"]
    assert len(rows) == 6
    last = [float(v) for v in rows[-1].split("\t")]
    np.testing.assert_allclose(last[1:], tr.states[-1], rtol=1e-11)
