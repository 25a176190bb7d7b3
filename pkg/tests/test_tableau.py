import mpmath
import numpy as np
import pytest

from fcirk.tableau import (
    Tableau,
    explicit_euler_tableau,
    gauss_legendre_tableau,
    quadrature_residual,
    radau_iia_tableau,
    symmetry_residual,
    symplecticity_residual,
)
from fcirk.xprec import DDReal, DomainError

mpmath.mp.dps = 50


def mp(x: DDReal):
    return mpmath.mpf(x.hi) + mpmath.mpf(x.lo)


def reference_gauss(s):
    """Nodes and coefficients from mpmath root finding and quadrature at 50 digits."""
    with mpmath.workdps(50):
        # shifted Legendre polynomial, highest degree first
        coeffs = [(-1) ** (s + k) * mpmath.binomial(s, k) * mpmath.binomial(s + k, k) for k in range(s, -1, -1)]
        c = sorted(mpmath.re(r) for r in mpmath.polyroots(coeffs, maxsteps=200, extraprec=200))

        def ell(j, x):
            out = mpmath.mpf(1)
            for m in range(s):
                if m != j:
                    out *= (x - c[m]) / (c[j] - c[m])
            return out

        b = [mpmath.quad(lambda x: ell(j, x), [0, 1]) for j in range(s)]
        a = [[mpmath.quad(lambda x: ell(j, x), [0, c[i]]) for j in range(s)] for i in range(s)]
        return c, b, a


@pytest.mark.parametrize("s", [1, 2, 3, 6])
def test_matches_independent_construction(s):
    tab = gauss_legendre_tableau(s)
    c, b, a = reference_gauss(s)
    for i in range(s):
        assert abs(mp(tab.dd_c()[i]) - c[i]) < 1e-30
        assert abs(mp(tab.dd_b()[i]) - b[i]) < 1e-30
        for j in range(s):
            assert abs(mp(tab.dd_a()[i][j]) - a[i][j]) < 1e-30


def test_one_stage_is_implicit_midpoint():
    tab = gauss_legendre_tableau(1)
    assert tab.a[0, 0] == 0.5 and tab.b[0] == 1.0 and tab.c[0] == 0.5


def test_two_stage_closed_form():
    tab = gauss_legendre_tableau(2)
    r = mpmath.sqrt(3) / 6
    assert abs(mp(tab.dd_c()[0]) - (mpmath.mpf(1) / 2 - r)) < 1e-31
    assert abs(mp(tab.dd_a()[0][1]) - (mpmath.mpf(1) / 4 - r)) < 1e-31


@pytest.mark.parametrize("s", [1, 2, 4, 6, 8, 16])
def test_structural_residuals(s):
    tab = gauss_legendre_tableau(s)
    assert symplecticity_residual(tab) < 1e-30
    assert symmetry_residual(tab) < 1e-30
    assert quadrature_residual(tab) < 1e-30


def test_quadrature_fails_beyond_order():
    tab = gauss_legendre_tableau(3)
    assert quadrature_residual(tab, 2 * 3) > 1e-6


def test_non_symplectic_tableaux_show_residuals():
    assert symplecticity_residual(radau_iia_tableau(2)) > 1e-3
    assert symmetry_residual(radau_iia_tableau(2)) > 1e-3
    assert symplecticity_residual(explicit_euler_tableau()) == 1.0


@pytest.mark.parametrize("bad", [0, -1, 33, 2.5])
def test_invalid_stage_count(bad):
    with pytest.raises(DomainError):
        gauss_legendre_tableau(bad)


def test_inconsistent_coefficients_rejected():
    with pytest.raises(ValueError):
        Tableau.from_coefficients([[0.5]], [0.9])
    with pytest.raises(ValueError):
        Tableau.from_coefficients([[0.25, 0.0], [0.0, 0.25]], [0.5, 0.5], c=[0.5, 0.25])


def test_csv_round_trip(tmp_path):
    tab = gauss_legendre_tableau(5)
    path = tmp_path / "g5.csv"
    tab.to_csv(path)
    back = Tableau.from_csv(path)
    assert np.array_equal(back.a_hi, tab.a_hi) and np.array_equal(back.a_lo, tab.a_lo)
    assert np.array_equal(back.b_lo, tab.b_lo) and np.array_equal(back.c_lo, tab.c_lo)


@pytest.mark.parametrize("s", [2, 4, 6])
def test_extrapolation_reproduces_polynomials(s):
    # increments Z_k = p(c_k) - p(0) of a degree-s polynomial are carried
    # exactly to the next step's nodes
    tab = gauss_legendre_tableau(s)
    coef = np.arange(1, s + 1) / 7.0
    p = lambda x: sum(ck * x ** (k + 1) for k, ck in enumerate(coef))
    Z = np.array([p(ci) for ci in tab.c])
    want = np.array([p(1 + ci) - p(1.0) for ci in tab.c])
    np.testing.assert_allclose(tab.extrapolation_matrix @ Z, want, rtol=1e-11, atol=1e-12)


def test_runtime_budget():
    import time

    gauss_legendre_tableau.cache_clear()
    t0 = time.perf_counter()
    for s in (1, 2, 4, 6, 8, 16):
        gauss_legendre_tableau(s)
    assert time.perf_counter() - t0 < 1.0
