"""Double-double arithmetic and compensated summation.

A double-double value is the unevaluated sum ``hi + lo`` of two float64
numbers with ``|lo| <= ulp(hi)/2``.  The kernels below only use ``+ - * /``
and ``sqrt`` so the same source runs on Python floats, on numpy arrays
(element-wise) and inside numba-compiled code.

The scalar :class:`DDReal` type wraps the kernels for convenient use in
tableau generation and tests; bulk state vectors are carried as pairs of
float64 arrays ``(hi, lo)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from decimal import Decimal, localcontext

import numpy as np
from numba import njit

_SPLITTER = 134217729.0  # 2**27 + 1

#: unit roundoff of the double-double format
DD_EPS = 2.0**-104


class Precision(enum.Enum):
    """Arithmetic tier of a pipeline stage."""

    WORKING = "working"
    DOUBLE_WORD = "double_word"


# --------------------------------------------------------------------------
# error-free transformations
# --------------------------------------------------------------------------


@njit(cache=True)
def two_sum(a, b):
    s = a + b
    bb = s - a
    e = (a - (s - bb)) + (b - bb)
    return s, e


@njit(cache=True)
def quick_two_sum(a, b):
    """Two-sum assuming ``|a| >= |b|``."""
    s = a + b
    e = b - (s - a)
    return s, e


@njit(cache=True)
def split(a):
    t = _SPLITTER * a
    hi = t - (t - a)
    return hi, a - hi


@njit(cache=True)
def two_prod(a, b):
    p = a * b
    ah, al = split(a)
    bh, bl = split(b)
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


# --------------------------------------------------------------------------
# double-double kernels on (hi, lo) pairs
# --------------------------------------------------------------------------


@njit(cache=True)
def dd_add_kernel(xh, xl, yh, yl):
    s, e = two_sum(xh, yh)
    t, f = two_sum(xl, yl)
    e = e + t
    s, e = quick_two_sum(s, e)
    e = e + f
    return quick_two_sum(s, e)


@njit(cache=True)
def dd_add_d_kernel(xh, xl, y):
    s, e = two_sum(xh, y)
    e = e + xl
    return quick_two_sum(s, e)


@njit(cache=True)
def dd_mul_kernel(xh, xl, yh, yl):
    p, e = two_prod(xh, yh)
    e = e + (xh * yl + xl * yh)
    return quick_two_sum(p, e)


@njit(cache=True)
def dd_mul_d_kernel(xh, xl, y):
    p, e = two_prod(xh, y)
    e = e + xl * y
    return quick_two_sum(p, e)


@njit(cache=True)
def dd_div_kernel(xh, xl, yh, yl):
    q1 = xh / yh
    ph, pl = dd_mul_d_kernel(yh, yl, q1)
    rh, rl = dd_add_kernel(xh, xl, -ph, -pl)
    q2 = rh / yh
    ph, pl = dd_mul_d_kernel(yh, yl, q2)
    rh, rl = dd_add_kernel(rh, rl, -ph, -pl)
    q3 = rh / yh
    q1, q2 = quick_two_sum(q1, q2)
    return dd_add_d_kernel(q1, q2, q3)


@njit(cache=True)
def dd_sqrt_kernel(xh, xl):
    a = np.sqrt(xh)
    if a == 0.0:
        return 0.0, 0.0
    ph, pl = two_prod(a, a)
    rh, rl = dd_add_kernel(xh, xl, -ph, -pl)
    return quick_two_sum(a, rh / (2.0 * a))


def dd_sqrt_array(xh, xl):
    """Element-wise :func:`dd_sqrt_kernel` for numpy arrays."""
    a = np.sqrt(xh)
    ph, pl = two_prod(a, a)
    rh, _ = dd_add_kernel(xh, xl, -ph, -pl)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.where(a == 0.0, 0.0, rh / (2.0 * a))
    return quick_two_sum(a, corr)


# --------------------------------------------------------------------------
# scalar value type
# --------------------------------------------------------------------------


class DomainError(ArithmeticError):
    """Operation outside the domain of the arithmetic (x/0, sqrt of x<0)."""


@dataclass(frozen=True)
class DDReal:
    hi: float
    lo: float = 0.0

    @classmethod
    def from_value(cls, x) -> "DDReal":
        if isinstance(x, DDReal):
            return x
        if isinstance(x, (int, np.integer)):
            hi = float(x)
            lo = float(int(x) - int(hi))
            return cls(*quick_two_sum(hi, lo))
        if isinstance(x, (str, Decimal)):
            with localcontext() as ctx:
                ctx.prec = 60
                d = Decimal(x)
                hi = float(d)
                lo = float(d - Decimal(hi))
            return cls(*quick_two_sum(hi, lo))
        return cls(float(x), 0.0)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        o = DDReal.from_value(other)
        return DDReal(*dd_add_kernel(self.hi, self.lo, o.hi, o.lo))

    __radd__ = __add__

    def __neg__(self):
        return DDReal(-self.hi, -self.lo)

    def __sub__(self, other):
        return self + (-DDReal.from_value(other))

    def __rsub__(self, other):
        return DDReal.from_value(other) - self

    def __mul__(self, other):
        o = DDReal.from_value(other)
        return DDReal(*dd_mul_kernel(self.hi, self.lo, o.hi, o.lo))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return dd_div(self, DDReal.from_value(other))

    def __rtruediv__(self, other):
        return dd_div(DDReal.from_value(other), self)

    def __abs__(self):
        return -self if self.hi < 0 else self

    # comparisons use the exact represented value
    def __lt__(self, other):
        return (self - other).hi < 0

    def __le__(self, other):
        return (self - other).hi <= 0

    def __gt__(self, other):
        return (self - other).hi > 0

    def __ge__(self, other):
        return (self - other).hi >= 0

    def __float__(self):
        return self.hi + self.lo

    def to_decimal(self) -> Decimal:
        with localcontext() as ctx:
            ctx.prec = 60
            return Decimal(self.hi) + Decimal(self.lo)

    def format(self, digits: int = 34) -> str:
        with localcontext() as ctx:
            ctx.prec = digits
            return format(+self.to_decimal(), f".{digits - 1}E")

    def __repr__(self):
        return f"DDReal({self.format(34)})"


def dd_add(x: DDReal, y: DDReal) -> DDReal:
    return DDReal.from_value(x) + y


def dd_mul(x: DDReal, y: DDReal) -> DDReal:
    return DDReal.from_value(x) * y


def dd_div(x: DDReal, y: DDReal) -> DDReal:
    x, y = DDReal.from_value(x), DDReal.from_value(y)
    if y.hi == 0.0:
        raise DomainError("double-double division by zero")
    return DDReal(*dd_div_kernel(x.hi, x.lo, y.hi, y.lo))


def dd_sqrt(x: DDReal) -> DDReal:
    x = DDReal.from_value(x)
    if x.hi < 0.0:
        raise DomainError("square root of a negative double-double")
    return DDReal(*(float(v) for v in dd_sqrt_kernel(x.hi, x.lo)))


# --------------------------------------------------------------------------
# compensated accumulation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CompensatedAccumulator:
    """Running sum whose represented value is ``sum + carry``."""

    sum: float = 0.0
    carry: float = 0.0

    @property
    def value(self) -> float:
        return self.sum + self.carry


@njit(cache=True)
def comp_add(total, carry, term):
    """One error-free accumulation step on raw floats (numba friendly)."""
    s, e = two_sum(total, term)
    return s, carry + e


def comp_accumulate(acc: CompensatedAccumulator, term: float) -> CompensatedAccumulator:
    return CompensatedAccumulator(*comp_add(acc.sum, acc.carry, float(term)))


@njit(cache=True)
def compensated_sum_kernel(terms):
    total = 0.0
    carry = 0.0
    for x in terms:
        total, carry = comp_add(total, carry, x)
    return total, carry


def compensated_sum(terms) -> CompensatedAccumulator:
    """Compensated sum of a 1-d sequence of working-precision terms."""
    s, c = compensated_sum_kernel(np.ascontiguousarray(terms, dtype=np.float64))
    return CompensatedAccumulator(float(s), float(c))


# --------------------------------------------------------------------------
# helpers for double-double vectors
# --------------------------------------------------------------------------


def dd_vector(x) -> tuple[np.ndarray, np.ndarray]:
    """Lift a working-precision array to a normalized (hi, lo) pair."""
    hi = np.array(x, dtype=np.float64, copy=True)
    return hi, np.zeros_like(hi)


def dd_vector_add_increment(hi, lo, inc):
    """Add a working-precision increment to a (hi, lo) vector via two-sum."""
    return dd_add_d_kernel(hi, lo, inc)


def ulp(x: float) -> float:
    return math.ulp(x)
