import io

import numpy as np
import pytest
from conftest import P, cached_model

from srqc import expr as ex
from srqc import spectral as sp
from srqc.errors import ModelError


def oscillator():
    return sp.ReducedOperator(P("x1^2", 1), (-10.0, 10.0), 0)


def grushin_mode(n, x_max=None, cutoff=1e-3):
    return sp.reduce_1d(cached_model("grushin"), n, "pos", cutoff, x_max)


# -- reduction -------------------------------------------------------------------------


def test_grushin_mode1_potential(rng):
    op = grushin_mode(1)
    for x in rng.uniform(0.01, 1, 20):
        assert op.potential([x])[0] == pytest.approx(x * x + 0.75 / (x * x), rel=1e-12)


def test_grushin_mode0_potential(rng):
    op = grushin_mode(0)
    assert op.interval == (1e-3, 1.0)
    xs = rng.uniform(0.01, 1, 20)
    np.testing.assert_allclose(op.potential(xs), 0.75 / xs ** 2, rtol=1e-12)


def test_mode_scaling():
    op = grushin_mode(3)
    assert op.potential([0.5])[0] == pytest.approx(9 * 0.25 + 3.0, rel=1e-12)


def test_non_separable_model_rejected():
    with pytest.raises(ModelError, match="separable"):
        sp.reduce_1d(cached_model("martinet"), 1)


# -- eigenvalues -----------------------------------------------------------------------


def test_oscillator_oracle():
    res = sp.eigenvalues(oscillator(), 4000, "dirichlet", 3)
    np.testing.assert_allclose(res.eigenvalues, [1, 3, 5], atol=1e-3)
    assert res.grid == 4000 and res.bc == "dirichlet" and res.cutoff == -10.0


def test_second_order_convergence():
    err = [sp.eigenvalues(oscillator(), g, "dirichlet", 1).eigenvalues[0] - 1 for g in (500, 1000, 2000)]
    for a, b in zip(err, err[1:]):
        assert np.log2(abs(a / b)) == pytest.approx(2.0, abs=0.2)


def test_eigenvalues_sorted_and_real():
    w = sp.eigenvalues(grushin_mode(1, 8.0), 2000, "neumann", 6).eigenvalues
    assert np.all(np.isreal(w)) and np.all(np.diff(w) > 0)


def test_determinism():
    a = sp.eigenvalues(grushin_mode(1, 8.0), 3000, "dirichlet", 5).eigenvalues
    b = sp.eigenvalues(grushin_mode(1, 8.0), 3000, "dirichlet", 5).eigenvalues
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("bc", sp.BCS)
def test_assembled_matrix_is_symmetric(bc):
    _, d, e = sp.assemble(grushin_mode(1, 8.0), 500, bc)
    A = np.diag(d) + np.diag(e, 1) + np.diag(e, -1)
    assert np.array_equal(A, A.T)


def test_counts_grow():
    op = grushin_mode(1, 8.0)
    counts = [sp.count_below(op, 4000, level) for level in (10, 20, 40)]
    assert counts[0] >= 1 and all(b > a for a, b in zip(counts, counts[1:]))


def test_ground_state_limit():
    # -u'' + (x^2 + 3/(4x^2)) u = 4u for u = x^(3/2) exp(-x^2/2)
    for grid in (4000, 16000):
        lam = sp.eigenvalues(grushin_mode(1, 8.0), grid, "dirichlet", 1).eigenvalues[0]
        assert lam == pytest.approx(4.0, abs=1e-2)


def test_ground_state_is_the_closed_form():
    op = grushin_mode(1, 8.0)
    x, d, e = sp.assemble(op, 8000, "dirichlet")
    u = x ** 1.5 * np.exp(-x * x / 2)
    Au = d * u
    Au[:-1] += e * u[1:]
    Au[1:] += e * u[:-1]
    interior = slice(100, -100)
    np.testing.assert_allclose(Au[interior], 4.0 * u[interior], atol=1e-3)


def test_spectrum_export():
    res = sp.eigenvalues(oscillator(), 400, "dirichlet", 2)
    buf = io.StringIO()
    res.write_tsv(buf)
    rows = buf.getvalue().splitlines()
    assert rows[0] == "index\teigenvalue" and len(rows) == 3


def test_argument_errors():
    with pytest.raises(ValueError):
        sp.eigenvalues(oscillator(), 99)
    with pytest.raises(ValueError):
        sp.eigenvalues(oscillator(), 200, "robin")
    with pytest.raises(ValueError):
        sp.eigenvalues(grushin_mode(1).with_interval(0.0), 200)


# -- confinement probe -------------------------------------------------------------------


def test_single_cutoff_one_row():
    rows = sp.confinement_probe(grushin_mode(0), [1000], [1e-2])
    assert len(rows) == 1 and rows[0].cutoff == 1e-2


def test_grushin_spread_vanishes():
    rows = sp.confinement_probe(grushin_mode(0), [4000], [1e-1, 1e-2, 1e-3])
    spreads = [r.spread for r in rows]
    assert all(b < a for a, b in zip(spreads, spreads[1:]))
    assert spreads[-1] < 1e-3


def test_free_operator_spread_persists():
    free = sp.ReducedOperator(ex.ZERO, (1e-3, 1.0), 0)
    rows = sp.confinement_probe(free, [4000], [1e-1, 1e-2, 1e-3])
    assert all(r.spread > 0.1 for r in rows)


def test_cutoffs_must_decrease():
    with pytest.raises(ValueError):
        sp.confinement_probe(grushin_mode(0), [1000], [1e-3, 1e-2])


def test_probe_export():
    rows = sp.confinement_probe(grushin_mode(0), [1000, 2000], [1e-2])
    buf = io.StringIO()
    sp.write_probe_tsv(rows, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].split("\t") == ["cutoff", "grid", "lambda_dirichlet", "lambda_neumann", "spread"]
    assert len(lines) == 3
