import io
import math

import numpy as np
import pytest
from conftest import P, martinet_structure

from srqc.distance import (Shooter, annihilator_covector, delta, delta_bruteforce, fermi_chart,
                           injectivity_probe, z_grid)
from srqc.errors import CharacteristicPoint, NotOnSurface, OutsideTube
from srqc.geodesics import integrate
from srqc.operators import CotangentPoint, MeasureDensity, hamiltonian
from srqc.srgeom import Hypersurface, SRStructure, VectorField

ZBOX3 = [(-1, 1), (-1, 1)]
ZBOX2 = [(-1, 1)]


# -- annihilator covectors -----------------------------------------------------------------


def test_martinet_annihilator(martinet, Z3):
    q = (0, 3, 7)
    for side, sign in (("pos", 1), ("neg", -1)):
        nc = annihilator_covector(martinet, Z3, q, side)
        np.testing.assert_allclose(nc.lam, [sign, 0, 0])
        assert 2 * hamiltonian(martinet)(CotangentPoint(q, nc.lam)) == pytest.approx(1, abs=1e-10)
        assert np.all(np.abs(Z3.tangent_basis(q) @ nc.lam) <= 1e-9)


def test_grushin_annihilator(grushin, Z2):
    nc = annihilator_covector(grushin, Z2, (0, 0.4), "pos")
    np.testing.assert_allclose(nc.lam, [1, 0])


def test_tilted_surface_annihilator(martinet):
    Z = Hypersurface(P("x1 - x2/4"), 3)
    q = Z.point_on([0.4, 0.2])
    nc = annihilator_covector(martinet, Z, q, "pos")
    assert np.all(np.abs(Z.tangent_basis(q) @ nc.lam) <= 1e-9)
    assert 2 * hamiltonian(martinet)(CotangentPoint(q, nc.lam)) == pytest.approx(1, abs=1e-10)


def test_characteristic_point_rejected(Z3):
    s = SRStructure([VectorField([0, 1, P("x1")]), VectorField([P("x2"), 0, 0])])
    with pytest.raises(CharacteristicPoint):
        annihilator_covector(s, Z3, (0, 0, 0), "pos")


def test_annihilator_needs_point_on_z(martinet, Z3):
    with pytest.raises(NotOnSurface):
        annihilator_covector(martinet, Z3, (0.2, 0, 0), "pos")


# -- delta ---------------------------------------------------------------------------------------


def test_martinet_delta_example(martinet, Z3):
    r = delta(martinet, Z3, (0.3, 0, 0), ZBOX3, t_max=0.5)
    assert r.value == pytest.approx(0.3, abs=1e-5)
    np.testing.assert_allclose(r.foot, [0, 0, 0], atol=1e-5)
    assert r.residual <= 1e-6


def test_delta_on_z_is_zero(martinet, Z3):
    r = delta(martinet, Z3, (0, 0.4, -0.2), ZBOX3)
    assert r.value == 0.0


def test_negative_side(martinet, Z3):
    r = delta(martinet, Z3, (-0.15, 0.2, 0.1), ZBOX3, t_max=0.5)
    assert r.value == pytest.approx(0.15, abs=1e-5)
    assert r.covector.side == "neg"


def test_round_trip(martinet, Z3, rng):
    sh = Shooter(martinet, Z3)
    for _ in range(8):
        u = rng.uniform(-0.5, 0.5, 2)
        sign = int(rng.choice([-1, 1]))
        p = sh.endpoint(u, 0.2, sign)
        assert delta(martinet, Z3, p, ZBOX3, t_max=0.5).value == pytest.approx(0.2, abs=1e-4)


def test_bruteforce_oracle_agrees(martinet, Z3, grushin, Z2):
    pts = [(0.3, 0, 0), (0.1, 0.2, 0.3), (-0.25, -0.3, 0.4)]
    oracle = delta_bruteforce(martinet, Z3, pts, ZBOX3, 0.5)
    shot = [delta(martinet, Z3, p, ZBOX3, t_max=0.5).value for p in pts]
    np.testing.assert_allclose(shot, oracle, atol=1e-3)
    np.testing.assert_allclose(shot, [abs(p[0]) for p in pts], atol=1e-5)
    g = [(0.2, 0.1), (-0.05, 0.7)]
    np.testing.assert_allclose(delta_bruteforce(grushin, Z2, g, ZBOX2, 0.5), [0.2, 0.05], atol=1e-3)


def test_outside_tube(martinet, Z3):
    with pytest.raises(OutsideTube) as info:
        delta(martinet, Z3, (0.9, 0, 0), ZBOX3, t_max=0.3)
    assert info.value.upper_bound > 0


def test_lipschitz(martinet, Z3, rng):
    for _ in range(4):
        p = np.r_[rng.uniform(0.1, 0.3), rng.uniform(-0.3, 0.3, 2)]
        lam = rng.normal(size=3)
        lam /= math.sqrt(2 * hamiltonian(martinet)(CotangentPoint(p, lam)))
        L = 0.1
        q = integrate(martinet, CotangentPoint(p, lam), L, 200).end
        a = delta(martinet, Z3, p, ZBOX3, t_max=0.6).value
        b = delta(martinet, Z3, q, ZBOX3, t_max=0.6).value
        assert abs(a - b) <= L + 2e-6


# -- Fermi charts ------------------------------------------------------------------------------------


def test_grushin_theta(grushin, Z2, grushin_measure):
    t = np.linspace(0.05, 0.5, 46)
    ch = fermi_chart(grushin, Z2, grushin_measure, [[-0.5], [0.0], [0.5]], t, "pos")
    np.testing.assert_allclose(ch.values[:, :, 0], np.repeat(t[:, None], 3, 1), atol=1e-12)
    np.testing.assert_allclose(ch.jacdet, 1.0, atol=1e-9)
    shifted = ch.theta - (-0.5 * np.log(t))[:, None]
    assert np.ptp(shifted, axis=0).max() < 1e-9
    assert ch.injectivity_bound is None


@pytest.mark.parametrize("k", [1, 2])
def test_kmartinet_theta(k, Z3):
    s = martinet_structure(k)
    m = MeasureDensity(P(f"1/(2*sqrt(2)*{k}*x1^{2 * k - 1})"), "popp-closed-form")
    t = np.linspace(0.05, 0.4, 36)
    ch = fermi_chart(s, Z3, m, z_grid(Z3, ZBOX3, 3), t, "pos")
    slope = np.diff(ch.theta, axis=0) / np.diff(np.log(t))[:, None]
    np.testing.assert_allclose(slope, -(2 * k - 1) / 2, atol=1e-8)
    assert np.all(np.sign(ch.jacdet) == np.sign(ch.jacdet[0, 0]))


def test_lebesgue_euclidean_theta_is_flat(Z2):
    s = SRStructure([VectorField([1, 0]), VectorField([0, 1])])
    t = np.linspace(0.1, 1.0, 10)
    ch = fermi_chart(s, Z2, MeasureDensity.lebesgue(), [[0.0], [0.3]], t, "neg")
    assert np.ptp(ch.theta, axis=0).max() <= 1e-12
    np.testing.assert_allclose(ch.theta, 0.0, atol=1e-9)
    np.testing.assert_allclose(ch.values[:, 0, 0], -t, atol=1e-12)


def test_fermi_delta_is_t(martinet, Z3, rng):
    # the table points are at distance t from Z
    t = np.array([0.05, 0.1, 0.2])
    ch = fermi_chart(martinet, Z3, MeasureDensity.lebesgue(), rng.uniform(-0.3, 0.3, (2, 2)), t, "pos")
    for i, ti in enumerate(t):
        for j in range(2):
            r = delta(martinet, Z3, ch.values[i, j], ZBOX3, t_max=0.4)
            assert r.value == pytest.approx(ti, abs=1e-4)


def test_fermi_truncates_at_fold(Z2):
    # normals to the parabola x1 = x2^2/2 focus near its centre of curvature, t = 1
    s = SRStructure([VectorField([1, 0]), VectorField([0, 1])])
    Z = Hypersurface(P("x1 - x2^2/2", 2), 2)
    t = np.linspace(0.05, 1.5, 30)
    ch = fermi_chart(s, Z, MeasureDensity.lebesgue(), [[-0.2], [0.0], [0.2]], t, "pos")
    assert ch.injectivity_bound is not None and ch.injectivity_bound < 1.0 + 0.06
    assert ch.t[-1] < 1.0


def test_fermi_chart_export(grushin, Z2, grushin_measure):
    ch = fermi_chart(grushin, Z2, grushin_measure, [[0.0], [0.5]], np.linspace(0.1, 0.2, 3), "pos")
    buf = io.StringIO()
    ch.write_tsv(buf)
    rows = buf.getvalue().splitlines()
    assert rows[0].split("\t") == ["t", "u1", "x1", "x2", "theta", "jacdet"]
    assert len(rows) == 1 + 2 * 3


# -- injectivity -------------------------------------------------------------------------------------


def test_martinet_injectivity(martinet, Z3):
    probe = injectivity_probe(martinet, Z3, z_grid(Z3, ZBOX3, 4), 5.0, "pos")
    assert probe.eps0 == pytest.approx(5.0)
    assert np.all(probe.bounds >= 5.0 - 1e-12)


def test_grushin_injectivity(grushin, Z2):
    probe = injectivity_probe(grushin, Z2, z_grid(Z2, ZBOX2, 9), 5.0, "neg")
    assert probe.eps0 == pytest.approx(5.0)


def test_degenerate_injectivity_probe(martinet, Z3):
    probe = injectivity_probe(martinet, Z3, z_grid(Z3, ZBOX3, 3), 0.0, "pos")
    assert probe.bounds.size == 0 and probe.eps0 == 0.0


def test_injectivity_detects_focusing():
    s = SRStructure([VectorField([1, 0]), VectorField([0, 1])])
    Z = Hypersurface(P("x1 - x2^2/2", 2), 2)
    probe = injectivity_probe(s, Z, [[-0.2], [0.0], [0.2]], 2.0, "pos")
    assert probe.eps0 <= 1.0
