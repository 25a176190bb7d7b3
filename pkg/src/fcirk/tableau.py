"""Gauss-Legendre collocation tableaux in double-double precision.

Nodes are the roots of the shifted Legendre polynomial, found by Newton's
method from Chebyshev-like initial guesses.  Stage coefficients are the
integrals ``a_ij = int_0^{c_i} l_j(x) dx`` of the Lagrange basis, evaluated
with the Gauss rule itself (exact, since ``l_j`` has degree ``s - 1``).
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fcirk.xprec import DDReal, DomainError

MAX_STAGES = 32
_NEWTON_TOL = 1e-34
_NEWTON_MAXITER = 100


def _dd_matrix(rows) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(rows, dtype=object)
    hi = np.vectorize(lambda x: x.hi, otypes=[float])(arr)
    lo = np.vectorize(lambda x: x.lo, otypes=[float])(arr)
    return hi, lo


@dataclass(frozen=True, eq=False)
class Tableau:
    """Butcher tableau ``(a, b, c)`` of an s-stage Runge-Kutta method.

    Coefficients are kept as double-double pairs (``*_hi``, ``*_lo``); the
    float64 views ``a``, ``b``, ``c`` are what the working-precision
    stage iteration uses.
    """

    s: int
    a_hi: np.ndarray
    a_lo: np.ndarray
    b_hi: np.ndarray
    b_lo: np.ndarray
    c_hi: np.ndarray
    c_lo: np.ndarray
    name: str = "custom"
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        for arr in (self.a_hi, self.a_lo, self.b_hi, self.b_lo, self.c_hi, self.c_lo):
            arr.setflags(write=False)
        if self.a_hi.shape != (self.s, self.s) or self.b_hi.shape != (self.s,):
            raise ValueError("tableau arrays do not match the stage count")
        if self.check:
            a, b, c = self.dd_a(), self.dd_b(), self.dd_c()
            tol = 1e-14
            for i in range(self.s):
                row = sum(a[i], DDReal(0.0))
                if abs(float(row - c[i])) > tol:
                    raise ValueError(f"row sum of a differs from c_{i + 1}")
            if abs(float(sum(b, DDReal(0.0)) - 1)) > tol:
                raise ValueError("weights do not sum to one")
            if np.any(np.diff(self.c_hi) <= 0):
                raise ValueError("nodes must be strictly increasing")

    @classmethod
    def from_coefficients(cls, a, b, c=None, name: str = "custom") -> "Tableau":
        """Build a tableau from arrays of floats, strings or :class:`DDReal`."""
        rows = [[DDReal.from_value(x) for x in row] for row in a]
        s = len(rows)
        bb = [DDReal.from_value(x) for x in b]
        if c is None:
            cc = [sum(row, DDReal(0.0)) for row in rows]
        else:
            cc = [DDReal.from_value(x) for x in c]
        a_hi, a_lo = _dd_matrix(rows)
        b_hi, b_lo = _dd_matrix(bb)
        c_hi, c_lo = _dd_matrix(cc)
        return cls(s, a_hi, a_lo, b_hi, b_lo, c_hi, c_lo, name=name)

    # float views ----------------------------------------------------------
    @property
    def a(self) -> np.ndarray:
        return self.a_hi

    @property
    def b(self) -> np.ndarray:
        return self.b_hi

    @property
    def c(self) -> np.ndarray:
        return self.c_hi

    # double-double views --------------------------------------------------
    def dd_a(self) -> list[list[DDReal]]:
        return [
            [DDReal(float(self.a_hi[i, j]), float(self.a_lo[i, j])) for j in range(self.s)]
            for i in range(self.s)
        ]

    def dd_b(self) -> list[DDReal]:
        return [DDReal(float(h), float(l)) for h, l in zip(self.b_hi, self.b_lo)]

    def dd_c(self) -> list[DDReal]:
        return [DDReal(float(h), float(l)) for h, l in zip(self.c_hi, self.c_lo)]

    @functools.cached_property
    def extrapolation_matrix(self) -> np.ndarray:
        """Matrix ``E`` with ``Z_next = E @ Z_prev`` for stage initialization.

        ``Z_prev[k] = W_k - U`` are the stage increments of the previous step;
        the collocation polynomial through ``(0, 0), (c_k, Z_k)`` is
        extrapolated to the next step's nodes ``1 + c_i`` and re-based at 1.
        """
        nodes = np.concatenate(([0.0], self.c))

        def lagrange_row(x):
            vals = np.empty(self.s)
            for k in range(1, self.s + 1):
                others = np.delete(nodes, k)
                vals[k - 1] = np.prod((x - others) / (nodes[k] - others))
            return vals

        at_one = lagrange_row(1.0)
        return np.array([lagrange_row(1.0 + ci) - at_one for ci in self.c])

    def to_csv(self, path) -> None:
        """Write one row per stage: c_i, b_i, a_i1..a_is (36 significant digits) to a path or open file."""
        if hasattr(path, "write"):
            self._write_csv(path)
            return
        with open(Path(path), "w", newline="") as fh:
            self._write_csv(fh)

    def _write_csv(self, fh) -> None:
        a, b, c = self.dd_a(), self.dd_b(), self.dd_c()
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["c", "b"] + [f"a{j + 1}" for j in range(self.s)])
        for i in range(self.s):
            writer.writerow([c[i].format(36), b[i].format(36)] + [x.format(36) for x in a[i]])

    @classmethod
    def from_csv(cls, path, name: str | None = None) -> "Tableau":
        with open(Path(path), newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        c = [r[0] for r in rows]
        b = [r[1] for r in rows]
        a = [r[2:] for r in rows]
        return cls.from_coefficients(a, b, c, name=name or Path(path).stem)


# ---------------------------------------------------------------------------
# Gauss-Legendre generation
# ---------------------------------------------------------------------------


def _legendre_with_derivative(n: int, x: DDReal) -> tuple[DDReal, DDReal]:
    """P_n(x) and P_n'(x) by the three-term recurrence."""
    p_prev, p = DDReal(1.0), x
    if n == 0:
        return p_prev, DDReal(0.0)
    for k in range(1, n):
        p_prev, p = p, ((2 * k + 1) * x * p - k * p_prev) / (k + 1)
    dp = n * (x * p - p_prev) / (x * x - 1)
    return p, dp


def _legendre_float(n: int, x: float) -> tuple[float, float]:
    p_prev, p = 1.0, x
    for k in range(1, n):
        p_prev, p = p, ((2 * k + 1) * x * p - k * p_prev) / (k + 1)
    return p, n * (x * p - p_prev) / (x * x - 1)


def _legendre_root(n: int, k: int) -> DDReal:
    """k-th largest root (k = 1..n) of P_n."""
    x = math.cos(math.pi * (k - 0.25) / (n + 0.5))
    for _ in range(_NEWTON_MAXITER):
        p, dp = _legendre_float(n, x)
        dx = p / dp
        x -= dx
        if abs(dx) <= 1e-15 * abs(x):
            break
    xd = DDReal(x)
    for _ in range(_NEWTON_MAXITER):
        p, dp = _legendre_with_derivative(n, xd)
        dx = p / dp
        xd = xd - dx
        if abs(dx.hi) <= _NEWTON_TOL * abs(xd.hi):
            break
    return xd


@functools.lru_cache(maxsize=None)
def gauss_legendre_tableau(s: int) -> Tableau:
    """The s-stage Gauss-Legendre collocation method (order 2s)."""
    if not isinstance(s, (int, np.integer)) or not 1 <= s <= MAX_STAGES:
        raise DomainError(f"stage count must be in 1..{MAX_STAGES}, got {s!r}")
    s = int(s)

    # roots on [-1, 1] in increasing order, exactly mirrored about 0
    x = [DDReal(0.0)] * s
    for k in range(1, s // 2 + 1):
        r = _legendre_root(s, k)
        x[s - k] = r
        x[k - 1] = -r
    half = DDReal(0.5)
    c = [(1 + xi) * half for xi in x]
    b = []
    for xi in x:
        _, dp = _legendre_with_derivative(s, xi)
        b.append(1 / ((1 - xi * xi) * dp * dp))

    # a_ij = c_i * sum_k b_k l_j(c_i c_k)
    denom = []
    for j in range(s):
        d = DDReal(1.0)
        for m in range(s):
            if m != j:
                d = d * (c[j] - c[m])
        denom.append(d)
    a = [[DDReal(0.0)] * s for _ in range(s)]
    for i in range(s):
        acc = [DDReal(0.0)] * s
        for k in range(s):
            y = c[i] * c[k]
            diffs = [y - cm for cm in c]
            prefix = [DDReal(1.0)] * (s + 1)
            for m in range(s):
                prefix[m + 1] = prefix[m] * diffs[m]
            suffix = DDReal(1.0)
            for j in range(s - 1, -1, -1):
                acc[j] = acc[j] + b[k] * (prefix[j] * suffix)
                suffix = suffix * diffs[j]
        a[i] = [c[i] * acc[j] / denom[j] for j in range(s)]

    a_hi, a_lo = _dd_matrix(a)
    b_hi, b_lo = _dd_matrix(b)
    c_hi, c_lo = _dd_matrix(c)
    return Tableau(s, a_hi, a_lo, b_hi, b_lo, c_hi, c_lo, name=f"gauss{s}")


def explicit_euler_tableau() -> Tableau:
    return Tableau.from_coefficients([[0.0]], [1.0], name="euler")


def radau_iia_tableau(s: int = 2) -> Tableau:
    """Radau IIA with 1 or 2 stages; a non-symmetric collocation example."""
    if s == 1:
        return Tableau.from_coefficients([[1.0]], [1.0], name="radau1")
    if s == 2:
        d = DDReal
        a = [[d(5) / 12, d(-1) / 12], [d(3) / 4, d(1) / 4]]
        return Tableau.from_coefficients(a, [d(3) / 4, d(1) / 4], name="radau2")
    raise ValueError("only 1- and 2-stage Radau IIA are provided")


# ---------------------------------------------------------------------------
# structural residuals
# ---------------------------------------------------------------------------


def symplecticity_residual(t: Tableau) -> float:
    """max_ij |b_i a_ij + b_j a_ji - b_i b_j| evaluated in double-double."""
    a, b = t.dd_a(), t.dd_b()
    worst = 0.0
    for i in range(t.s):
        for j in range(t.s):
            r = b[i] * a[i][j] + b[j] * a[j][i] - b[i] * b[j]
            worst = max(worst, abs(float(r)))
    return worst


def symmetry_residual(t: Tableau) -> float:
    """Largest violation of the time-symmetry conditions on (a, b, c)."""
    a, b, c = t.dd_a(), t.dd_b(), t.dd_c()
    s = t.s
    worst = 0.0
    for i in range(s):
        ri = s - 1 - i
        worst = max(worst, abs(float(b[ri] - b[i])), abs(float(c[ri] - (1 - c[i]))))
        for j in range(s):
            rj = s - 1 - j
            worst = max(worst, abs(float(a[ri][rj] + a[i][j] - b[j])))
    return worst


def quadrature_residual(t: Tableau, degree: int | None = None) -> float:
    """max_k |sum_i b_i c_i^k - 1/(k+1)| for k = 0..degree (default 2s-1)."""
    degree = 2 * t.s - 1 if degree is None else degree
    b, c = t.dd_b(), t.dd_c()
    worst = 0.0
    powers = [DDReal(1.0)] * t.s
    for k in range(degree + 1):
        total = sum((bi * pk for bi, pk in zip(b, powers)), DDReal(0.0))
        worst = max(worst, abs(float(total - DDReal(1.0) / (k + 1))))
        powers = [pk * ci for pk, ci in zip(powers, c)]
    return worst
