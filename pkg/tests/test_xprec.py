import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fcirk.xprec import (
    CompensatedAccumulator,
    DDReal,
    DomainError,
    comp_accumulate,
    compensated_sum,
    dd_add_d_kernel,
    dd_div,
    dd_sqrt,
    dd_vector,
    quick_two_sum,
    two_prod,
    two_sum,
)

mpmath.mp.prec = 300

finite = st.floats(min_value=-1e150, max_value=1e150, allow_nan=False, allow_infinity=False)


def exact(x: DDReal) -> Fraction:
    return Fraction(x.hi) + Fraction(x.lo)


def mp(x: DDReal):
    return mpmath.mpf(x.hi) + mpmath.mpf(x.lo)


@settings(deadline=None)
@given(finite, finite)
def test_two_sum_is_error_free(a, b):
    s, e = two_sum(a, b)
    assert s == a + b
    assert Fraction(s) + Fraction(e) == Fraction(a) + Fraction(b)


@settings(deadline=None)
@given(finite, finite)
def test_two_prod_is_error_free(a, b):
    p, e = two_prod(a, b)
    assert p == a * b
    # the error term is exact unless it falls into the subnormal range
    if 1e-250 < abs(p) < 1e300:
        assert Fraction(p) + Fraction(e) == Fraction(a) * Fraction(b)


def test_quick_two_sum_requires_ordering_but_is_exact():
    s, e = quick_two_sum(1.0, 2.0**-60)
    assert s == 1.0 and e == 2.0**-60


@settings(max_examples=200, deadline=None)
@given(finite, finite, finite, finite)
def test_dd_arithmetic_against_mpmath(a, b, c, d):
    x = DDReal(*two_sum(a, b * 1e-17))
    y = DDReal(*two_sum(c, d * 1e-17))
    scale = max(abs(mp(x)), abs(mp(y)))
    if scale == 0:
        return
    assert abs(mp(x + y) - (mp(x) + mp(y))) <= 1e-30 * scale
    assert abs(mp(x - y) - (mp(x) - mp(y))) <= 1e-30 * scale
    prod = mp(x) * mp(y)
    if abs(prod) > 1e-250:
        assert abs(mp(x * y) - prod) <= 1e-30 * abs(prod)


def test_division_and_sqrt_reach_double_double_accuracy():
    third = DDReal(1.0) / 3
    assert abs(mp(third) - mpmath.mpf(1) / 3) < 1e-32
    r2 = dd_sqrt(DDReal(2.0))
    assert abs(mp(r2) - mpmath.sqrt(2)) < 1e-31
    x = DDReal.from_value("1.2345678901234567890123456789012")
    assert abs(mp(dd_sqrt(x) * dd_sqrt(x)) - mp(x)) < 1e-31


def test_domain_errors():
    with pytest.raises(DomainError):
        dd_sqrt(DDReal(-1.0))
    with pytest.raises(DomainError):
        dd_div(DDReal(1.0), DDReal(0.0))


def test_from_string_keeps_both_words():
    x = DDReal.from_value("0.1")
    assert x.hi == 0.1
    assert x.lo != 0.0
    assert abs(mp(x) - mpmath.mpf("0.1")) < 1e-33
    # 0.1 is not representable; the pair is within 2^-104 of it
    assert x.format(34).startswith("9.9999999999999999999999999999999")


def test_from_large_integer_is_exact():
    n = 2**80 + 12345
    assert exact(DDReal.from_value(n)) == n


def test_comparisons_use_low_word():
    one = DDReal(1.0)
    tiny = DDReal(1.0, 1e-20)
    assert tiny > one
    assert one < tiny
    assert one <= one and one >= one


def test_compensated_sum_matches_fsum():
    rng = np.random.default_rng(7)
    terms = rng.standard_normal(100_000) * 10.0 ** rng.integers(-8, 8, size=100_000)
    acc = compensated_sum(terms)
    assert abs(acc.value - math.fsum(terms)) <= 2 * math.ulp(math.fsum(terms))
    naive = float(np.sum(terms[::-1]))
    assert abs(acc.value - math.fsum(terms)) <= abs(naive - math.fsum(terms))


def test_compensated_accumulation_of_constant_increments():
    # 10^6 additions of 0.1 to 1: plain summation drifts by ~1e-11
    acc = CompensatedAccumulator(1.0)
    plain = 1.0
    for _ in range(10**5):
        acc = comp_accumulate(acc, 0.1)
        plain += 0.1
    want = Fraction(1) + 10**5 * Fraction(0.1)
    assert abs(Fraction(acc.value) - want) <= Fraction(math.ulp(acc.value))
    assert abs(Fraction(plain) - want) > Fraction(math.ulp(plain))


def test_vector_increment_keeps_residue():
    hi, lo = dd_vector([1.0, -2.0])
    for _ in range(1000):
        hi, lo = dd_add_d_kernel(hi, lo, np.array([1e-20, 1e-20]))
    # each increment is far below half an ulp of hi, yet none is lost
    assert np.array_equal(hi, [1.0, -2.0])
    np.testing.assert_allclose(lo, [1e-17, 1e-17], rtol=1e-12)
