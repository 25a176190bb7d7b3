"""Exact Kepler flow in Cartesian coordinates (universal variables).

The flow of ``q' = v, v' = -k q/|q|^3`` is written with Lagrange
coefficients ``f, g, fdot, gdot`` of the universal anomaly ``x`` that solves

    r0 G1(x) + eta G2(x) + k G3(x) = t,      G_n(x) = x^n c_n(beta x^2),

where ``c_n`` are the Stumpff functions, ``r0 = |q|``, ``eta = q.v`` and
``beta = 2k/r0 - |v|^2``.  One code path covers elliptic, parabolic and
hyperbolic motion.

Batch kernels act on arrays of independent bodies laid out as rows
``(qx, qy, qz, vx, vy, vz)``.  The double-double kernel takes the state as a
``(hi, lo)`` pair.  The transposed Jacobian is a reverse sweep through the
same scalar computation and reuses the converged anomaly of the forward
flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from fcirk.xprec import (
    Precision,
    dd_add_kernel,
    dd_div_kernel,
    dd_mul_d_kernel,
    dd_mul_kernel,
    dd_sqrt_kernel,
    quick_two_sum,
)

#: |z| below which Stumpff functions are summed directly
STUMPFF_SERIES_THRESHOLD = 0.1
#: |z| above which the working-precision Stumpff functions use cos/cosh directly
STUMPFF_CLOSED_FORM_THRESHOLD = 2.0
NEWTON_MAXITER = 50
_BISECT_MAXITER = 400

OK, SINGULAR, NOT_CONVERGED = 0, 1, 2


class KeplerError(ArithmeticError):
    pass


class KeplerSingularityError(KeplerError):
    """Trajectory reaches (or starts at) the attracting centre."""


class KeplerConvergenceError(KeplerError):
    """The universal Kepler equation could not be solved."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class KeplerBody:
    """Relative position ``q``, velocity ``v`` and parameter ``k = G(m0 + m)``."""

    q: np.ndarray
    v: np.ndarray
    k: float

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(3))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(3))
        if not self.k > 0:
            raise ValueError("gravitational parameter k must be positive")

    @property
    def state(self) -> np.ndarray:
        return np.concatenate([self.q, self.v])

    def energy(self) -> float:
        return 0.5 * float(self.v @ self.v) - self.k / float(np.linalg.norm(self.q))

    def angular_momentum(self) -> np.ndarray:
        return np.cross(self.q, self.v)


# ---------------------------------------------------------------------------
# Stumpff functions
# ---------------------------------------------------------------------------


@njit(cache=True)
def _stumpff_series(z, n):
    # c_n(z) = sum_j (-z)^j / (2j + n)!
    term = 1.0
    for m in range(2, n + 1):
        term /= m
    total = term
    for j in range(1, 12):
        term *= -z / ((2 * j + n - 1) * (2 * j + n))
        total += term
    return total


@njit(cache=True)
def stumpff(z):
    """c0..c5 at z in working precision."""
    if abs(z) < STUMPFF_SERIES_THRESHOLD:
        return (
            _stumpff_series(z, 0),
            _stumpff_series(z, 1),
            _stumpff_series(z, 2),
            _stumpff_series(z, 3),
            _stumpff_series(z, 4),
            _stumpff_series(z, 5),
        )
    if abs(z) >= STUMPFF_CLOSED_FORM_THRESHOLD:
        # trigonometric forms; no cancellation once |sqrt(z)| > 1
        if z > 0:
            sz = math.sqrt(z)
            c0 = math.cos(sz)
            c1 = math.sin(sz) / sz
        else:
            sz = math.sqrt(-z)
            c0 = math.cosh(sz)
            c1 = math.sinh(sz) / sz
        c2 = (1.0 - c0) / z
        c3 = (1.0 - c1) / z
        return c0, c1, c2, c3, (0.5 - c2) / z, (1.0 / 6.0 - c3) / z
    n = 0
    zr = z
    while abs(zr) >= STUMPFF_SERIES_THRESHOLD:
        zr *= 0.25
        n += 1
    c2 = _stumpff_series(zr, 2)
    c3 = _stumpff_series(zr, 3)
    c0 = 1.0 - zr * c2
    c1 = 1.0 - zr * c3
    for _ in range(n):
        c3 = (c2 + c0 * c3) * 0.25
        c2 = 0.5 * c1 * c1
        c1 = c0 * c1
        c0 = 2.0 * c0 * c0 - 1.0
    c4 = (0.5 - c2) / z
    c5 = (1.0 / 6.0 - c3) / z
    return c0, c1, c2, c3, c4, c5


@njit(cache=True)
def _stumpff_series_dd(xh, xl, k):
    # k! c_k(x) = 1 - x/d_1 (1 - x/d_2 (1 - ...)),  d_l = (2l+k-1)(2l+k)
    sh, sl = 1.0, 0.0
    for j in range(16, 0, -1):
        ph, pl = dd_mul_kernel(xh, xl, sh, sl)
        ph, pl = dd_div_kernel(ph, pl, float((2 * j + k - 1) * (2 * j + k)), 0.0)
        sh, sl = dd_add_kernel(1.0, 0.0, -ph, -pl)
    fact = 1.0
    for m in range(2, k + 1):
        fact *= m
    return dd_div_kernel(sh, sl, fact, 0.0)


@njit(cache=True)
def _stumpff_dd(zh, zl):
    """c0..c3 at z = (zh, zl) in double-double."""
    n = 0
    scale = 1.0
    while abs(zh * scale) >= STUMPFF_SERIES_THRESHOLD:
        scale *= 0.25
        n += 1
    xh = zh * scale
    xl = zl * scale
    c2h, c2l = _stumpff_series_dd(xh, xl, 2)
    c3h, c3l = _stumpff_series_dd(xh, xl, 3)
    # c0 = 1 - x c2, c1 = 1 - x c3
    ph, pl = dd_mul_kernel(xh, xl, c2h, c2l)
    c0h, c0l = dd_add_kernel(1.0, 0.0, -ph, -pl)
    ph, pl = dd_mul_kernel(xh, xl, c3h, c3l)
    c1h, c1l = dd_add_kernel(1.0, 0.0, -ph, -pl)
    for _ in range(n):
        ph, pl = dd_mul_kernel(c0h, c0l, c3h, c3l)
        th, tl = dd_add_kernel(c2h, c2l, ph, pl)
        c3h, c3l = th * 0.25, tl * 0.25
        ph, pl = dd_mul_kernel(c1h, c1l, c1h, c1l)
        c2h, c2l = ph * 0.5, pl * 0.5
        c1h, c1l = dd_mul_kernel(c0h, c0l, c1h, c1l)
        ph, pl = dd_mul_kernel(c0h, c0l, c0h, c0l)
        c0h, c0l = dd_add_kernel(2.0 * ph, 2.0 * pl, -1.0, 0.0)
    return c0h, c0l, c1h, c1l, c2h, c2l, c3h, c3l


# ---------------------------------------------------------------------------
# universal Kepler equation
# ---------------------------------------------------------------------------


@njit(cache=True)
def _kepler_residual(x, k, r0, eta, beta, t):
    c0, c1, c2, c3, _, _ = stumpff(beta * x * x)
    x2 = x * x
    g1 = x * c1
    g2 = x2 * c2
    g3 = x2 * x * c3
    fval = r0 * g1 + eta * g2 + k * g3 - t
    r = r0 * c0 + eta * g1 + k * g2
    return fval, r


@njit(cache=True)
def _solve_anomaly(k, r0, eta, beta, t, tol):
    """Universal anomaly for time t; returns (x, status, iterations, residual)."""
    if t == 0.0:
        return 0.0, OK, 0, 0.0
    sign = 1.0 if t > 0 else -1.0
    x = t / r0
    if beta > 0.0:
        period = 2.0 * math.pi * k / beta**1.5
        if abs(t) > 0.5 * period:
            nrev = math.floor(t / period + 0.5)
            x = nrev * 2.0 * math.pi / math.sqrt(beta) + (t - nrev * period) / r0
    # bracket: F is increasing in x and F(0) = -t
    lo, hi = (0.0, math.inf) if sign > 0 else (-math.inf, 0.0)
    fval = 0.0
    for it in range(NEWTON_MAXITER):
        fval, r = _kepler_residual(x, k, r0, eta, beta, t)
        if fval == 0.0:
            return x, OK, it + 1, 0.0
        if fval < 0.0:
            lo = max(lo, x)
        else:
            hi = min(hi, x)
        if r <= 0.0:
            dx = math.nan
        else:
            dx = -fval / r
        xn = x + dx
        if not (xn > lo and xn < hi) or math.isnan(xn):
            if math.isinf(hi):
                xn = max(2.0 * lo, lo + abs(t) / r0)
            elif math.isinf(lo):
                xn = min(2.0 * hi, hi - abs(t) / r0)
            else:
                xn = 0.5 * (lo + hi)
        if abs(xn - x) <= tol * max(abs(xn), 1e-300):
            return xn, OK, it + 1, fval
        if not math.isinf(hi - lo) and hi - lo <= 8.9e-16 * max(abs(lo), abs(hi)):
            return xn, OK, it + 1, fval
        x = xn
    # bisection fallback on a finite bracket
    if math.isinf(lo) or math.isinf(hi):
        step = max(abs(x), abs(t) / r0, 1.0)
        while math.isinf(hi):
            cand = lo + step if not math.isinf(lo) else x + step
            if _kepler_residual(cand, k, r0, eta, beta, t)[0] >= 0:
                hi = cand
            else:
                lo = cand
            step *= 2.0
            if step > 1e300:
                return x, NOT_CONVERGED, NEWTON_MAXITER, fval
        while math.isinf(lo):
            cand = hi - step
            if _kepler_residual(cand, k, r0, eta, beta, t)[0] <= 0:
                lo = cand
            else:
                hi = cand
            step *= 2.0
            if step > 1e300:
                return x, NOT_CONVERGED, NEWTON_MAXITER, fval
    for it in range(_BISECT_MAXITER):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            # bracket is two adjacent floats
            return mid, OK, NEWTON_MAXITER + it, fval
        fval, _ = _kepler_residual(mid, k, r0, eta, beta, t)
        if fval == 0.0:
            return mid, OK, NEWTON_MAXITER + it, 0.0
        if fval < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(abs(mid), 1e-300):
            return 0.5 * (lo + hi), OK, NEWTON_MAXITER + it, fval
    return 0.5 * (lo + hi), NOT_CONVERGED, NEWTON_MAXITER + _BISECT_MAXITER, fval


@njit(cache=True)
def _radial_collision(k, q, v, r0, eta, beta, x):
    """True if a (near) radial orbit passes through the origin before anomaly x."""
    hx = q[1] * v[2] - q[2] * v[1]
    hy = q[2] * v[0] - q[0] * v[2]
    hz = q[0] * v[1] - q[1] * v[0]
    hnorm = math.sqrt(hx * hx + hy * hy + hz * hz)
    vnorm = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    if hnorm > 1e-12 * r0 * max(vnorm, math.sqrt(k / r0)):
        return False
    # r(x) >= 0 touches zero at a collision, so look for a vanishing minimum
    n = 128
    prev2 = r0
    prev = _radius(k, r0, eta, beta, x / n)
    for j in range(2, n + 1):
        cur = _radius(k, r0, eta, beta, x * j / n)
        if prev <= prev2 and prev <= cur:
            lo = x * (j - 2) / n
            hi = x * j / n
            for _ in range(120):
                m1 = lo + (hi - lo) / 3.0
                m2 = hi - (hi - lo) / 3.0
                if _radius(k, r0, eta, beta, m1) < _radius(k, r0, eta, beta, m2):
                    hi = m2
                else:
                    lo = m1
            if _radius(k, r0, eta, beta, 0.5 * (lo + hi)) <= 1e-10 * r0:
                return True
        prev2 = prev
        prev = cur
    return prev <= 1e-10 * r0


@njit(cache=True)
def _radius(k, r0, eta, beta, x):
    c0, c1, c2, _, _, _ = stumpff(beta * x * x)
    return r0 * c0 + eta * x * c1 + k * x * x * c2


# ---------------------------------------------------------------------------
# batch kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def flow_kernel(k, u, t, out, anomaly, status):
    """Working-precision flow of each row of ``u`` by ``t[i]``."""
    n = u.shape[0]
    for i in range(n):
        q = u[i, :3]
        v = u[i, 3:]
        ki = k[i]
        ti = t[i]
        r0 = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2])
        if r0 == 0.0:
            status[i] = SINGULAR
            out[i, :] = np.nan
            continue
        eta = q[0] * v[0] + q[1] * v[1] + q[2] * v[2]
        v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
        beta = 2.0 * ki / r0 - v2
        x, st, _, _ = _solve_anomaly(ki, r0, eta, beta, ti, 1e-16)
        if st == OK and _radial_collision(ki, q, v, r0, eta, beta, x):
            st = SINGULAR
        status[i] = st
        anomaly[i] = x
        c0, c1, c2, c3, _, _ = stumpff(beta * x * x)
        g1 = x * c1
        g2 = x * x * c2
        g3 = x * x * x * c3
        r = r0 * c0 + eta * g1 + ki * g2
        f = 1.0 - ki * g2 / r0
        g = ti - ki * g3
        fd = -ki * g1 / (r * r0)
        gd = 1.0 - ki * g2 / r
        for j in range(3):
            out[i, j] = f * q[j] + g * v[j]
            out[i, 3 + j] = fd * q[j] + gd * v[j]


@njit(cache=True)
def _dd_dot3(ah, al, bh, bl):
    sh, sl = 0.0, 0.0
    for j in range(3):
        ph, pl = dd_mul_kernel(ah[j], al[j], bh[j], bl[j])
        sh, sl = dd_add_kernel(sh, sl, ph, pl)
    return sh, sl


@njit(cache=True)
def flow_dd_kernel(k, uh, ul, t, out_h, out_l, status):
    """Double-double flow of each row of ``(uh, ul)`` by ``t[i]``."""
    n = uh.shape[0]
    for i in range(n):
        qh, ql = uh[i, :3], ul[i, :3]
        vh, vl = uh[i, 3:], ul[i, 3:]
        ki = k[i]
        ti = t[i]
        if ti == 0.0:
            out_h[i, :] = uh[i, :]
            out_l[i, :] = ul[i, :]
            status[i] = OK
            continue
        r2h, r2l = _dd_dot3(qh, ql, qh, ql)
        if r2h == 0.0:
            status[i] = SINGULAR
            out_h[i, :] = np.nan
            out_l[i, :] = np.nan
            continue
        r0h, r0l = dd_sqrt_kernel(r2h, r2l)
        etah, etal = _dd_dot3(qh, ql, vh, vl)
        v2h, v2l = _dd_dot3(vh, vl, vh, vl)
        th, tl = dd_div_kernel(2.0 * ki, 0.0, r0h, r0l)
        betah, betal = dd_add_kernel(th, tl, -v2h, -v2l)
        # working-precision solve, then double-double Newton polish
        x, st, _, _ = _solve_anomaly(ki, r0h, etah, betah, ti, 1e-16)
        if st == OK and _radial_collision(ki, qh, vh, r0h, etah, betah, x):
            st = SINGULAR
        status[i] = st
        xh, xl = x, 0.0
        for _ in range(4):
            x2h, x2l = dd_mul_kernel(xh, xl, xh, xl)
            zh, zl = dd_mul_kernel(betah, betal, x2h, x2l)
            c0h, c0l, c1h, c1l, c2h, c2l, c3h, c3l = _stumpff_dd(zh, zl)
            g1h, g1l = dd_mul_kernel(xh, xl, c1h, c1l)
            g2h, g2l = dd_mul_kernel(x2h, x2l, c2h, c2l)
            x3h, x3l = dd_mul_kernel(x2h, x2l, xh, xl)
            g3h, g3l = dd_mul_kernel(x3h, x3l, c3h, c3l)
            ah, al = dd_mul_kernel(r0h, r0l, g1h, g1l)
            bh, bl = dd_mul_kernel(etah, etal, g2h, g2l)
            ch, cl = dd_mul_d_kernel(g3h, g3l, ki)
            fh, fl = dd_add_kernel(ah, al, bh, bl)
            fh, fl = dd_add_kernel(fh, fl, ch, cl)
            fh, fl = dd_add_kernel(fh, fl, -ti, 0.0)
            rr = r0h * c0h + etah * g1h + ki * g2h
            dx = -fh / rr
            xh, xl = dd_add_kernel(xh, xl, dx, 0.0)
            if abs(dx) <= 1e-32 * abs(xh):
                break
        x2h, x2l = dd_mul_kernel(xh, xl, xh, xl)
        zh, zl = dd_mul_kernel(betah, betal, x2h, x2l)
        c0h, c0l, c1h, c1l, c2h, c2l, c3h, c3l = _stumpff_dd(zh, zl)
        g1h, g1l = dd_mul_kernel(xh, xl, c1h, c1l)
        g2h, g2l = dd_mul_kernel(x2h, x2l, c2h, c2l)
        x3h, x3l = dd_mul_kernel(x2h, x2l, xh, xl)
        g3h, g3l = dd_mul_kernel(x3h, x3l, c3h, c3l)
        # r = r0 c0 + eta G1 + k G2
        ah, al = dd_mul_kernel(r0h, r0l, c0h, c0l)
        bh, bl = dd_mul_kernel(etah, etal, g1h, g1l)
        kg2h, kg2l = dd_mul_d_kernel(g2h, g2l, ki)
        rh, rl = dd_add_kernel(ah, al, bh, bl)
        rh, rl = dd_add_kernel(rh, rl, kg2h, kg2l)
        # Lagrange coefficients
        ah, al = dd_div_kernel(kg2h, kg2l, r0h, r0l)
        fh, fl = dd_add_kernel(1.0, 0.0, -ah, -al)
        kg3h, kg3l = dd_mul_d_kernel(g3h, g3l, ki)
        gh, gl = dd_add_kernel(ti, 0.0, -kg3h, -kg3l)
        rr0h, rr0l = dd_mul_kernel(rh, rl, r0h, r0l)
        kg1h, kg1l = dd_mul_d_kernel(g1h, g1l, ki)
        fdh, fdl = dd_div_kernel(-kg1h, -kg1l, rr0h, rr0l)
        ah, al = dd_div_kernel(kg2h, kg2l, rh, rl)
        gdh, gdl = dd_add_kernel(1.0, 0.0, -ah, -al)
        for j in range(3):
            ah, al = dd_mul_kernel(fh, fl, qh[j], ql[j])
            bh, bl = dd_mul_kernel(gh, gl, vh[j], vl[j])
            out_h[i, j], out_l[i, j] = dd_add_kernel(ah, al, bh, bl)
            ah, al = dd_mul_kernel(fdh, fdl, qh[j], ql[j])
            bh, bl = dd_mul_kernel(gdh, gdl, vh[j], vl[j])
            out_h[i, 3 + j], out_l[i, 3 + j] = dd_add_kernel(ah, al, bh, bl)


@njit(cache=True)
def jacT_kernel(k, u, t, w, anomaly, out, status):
    """Rows of ``phi_t'(u)^T w``; ``anomaly`` holds converged x (NaN: solve)."""
    n = u.shape[0]
    for i in range(n):
        q = u[i, :3]
        v = u[i, 3:]
        wq = w[i, :3]
        wv = w[i, 3:]
        ki = k[i]
        ti = t[i]
        r0 = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2])
        if r0 == 0.0:
            status[i] = SINGULAR
            out[i, :] = np.nan
            continue
        eta = q[0] * v[0] + q[1] * v[1] + q[2] * v[2]
        v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
        beta = 2.0 * ki / r0 - v2
        x = anomaly[i]
        st = OK
        if math.isnan(x):
            x, st, _, _ = _solve_anomaly(ki, r0, eta, beta, ti, 1e-16)
        status[i] = st
        c0, c1, c2, c3, c4, c5 = stumpff(beta * x * x)
        x2 = x * x
        G0 = c0
        G1 = x * c1
        G2 = x2 * c2
        G3 = x2 * x * c3
        G4 = x2 * x2 * c4
        G5 = x2 * x2 * x * c5
        r = r0 * G0 + eta * G1 + ki * G2
        f = 1.0 - ki * G2 / r0
        g = ti - ki * G3
        fd = -ki * G1 / (r * r0)
        gd = 1.0 - ki * G2 / r
        A = wq[0] * q[0] + wq[1] * q[1] + wq[2] * q[2]
        B = wq[0] * v[0] + wq[1] * v[1] + wq[2] * v[2]
        C = wv[0] * q[0] + wv[1] * q[1] + wv[2] * q[2]
        D = wv[0] * v[0] + wv[1] * v[1] + wv[2] * v[2]
        # reverse sweep of L = A f + B g + C fd + D gd
        aG0 = 0.0
        aG1 = -C * ki / (r * r0)
        aG2 = -D * ki / r - A * ki / r0
        aG3 = -B * ki
        ar = C * ki * G1 / (r * r * r0) + D * ki * G2 / (r * r)
        ar0 = C * ki * G1 / (r * r0 * r0) + A * ki * G2 / (r0 * r0)
        aeta = 0.0
        # r = r0 G0 + eta G1 + k G2
        ar0 += ar * G0
        aeta += ar * G1
        aG0 += ar * r0
        aG1 += ar * eta
        aG2 += ar * ki
        # G_n(x, beta)
        dG0b = -0.5 * x * G1
        dG1b = 0.5 * (G3 - x * G2)
        dG2b = 0.5 * (2.0 * G4 - x * G3)
        dG3b = 0.5 * (3.0 * G5 - x * G4)
        ax = -aG0 * beta * G1 + aG1 * G0 + aG2 * G1 + aG3 * G2
        abeta = aG0 * dG0b + aG1 * dG1b + aG2 * dG2b + aG3 * dG3b
        # x(r0, eta, beta) from r0 G1 + eta G2 + k G3 = t
        ar0 += -ax * G1 / r
        aeta += -ax * G2 / r
        abeta += -ax * (r0 * dG1b + eta * dG2b + ki * dG3b) / r
        # beta = 2k/r0 - |v|^2
        ar0 += -abeta * 2.0 * ki / (r0 * r0)
        av2 = -abeta
        for j in range(3):
            out[i, j] = f * wq[j] + fd * wv[j] + ar0 * q[j] / r0 + aeta * v[j]
            out[i, 3 + j] = g * wq[j] + gd * wv[j] + aeta * q[j] + 2.0 * av2 * v[j]


# ---------------------------------------------------------------------------
# array-level wrappers
# ---------------------------------------------------------------------------


def _raise_on_status(status, u, t):
    bad = np.flatnonzero(status)
    if bad.size == 0:
        return
    i = int(bad[0])
    if status[i] == SINGULAR:
        raise KeplerSingularityError(f"Kepler trajectory {i} reaches the origin within t={t[i]!r}")
    raise KeplerConvergenceError(
        f"universal Kepler equation did not converge for body {i}",
        diagnostics={"state": u[i].copy(), "t": float(t[i])},
    )


def _broadcast(k, u, t):
    u = np.ascontiguousarray(u, dtype=np.float64).reshape(-1, 6)
    n = u.shape[0]
    k = np.ascontiguousarray(np.broadcast_to(np.asarray(k, dtype=np.float64), (n,)))
    t = np.ascontiguousarray(np.broadcast_to(np.asarray(t, dtype=np.float64), (n,)))
    return k, u, t


def flow_rows(k, u, t, return_anomaly=False):
    """Working-precision flow of rows ``u`` (shape (n, 6))."""
    k, u, t = _broadcast(k, u, t)
    out = np.empty_like(u)
    anomaly = np.empty(u.shape[0])
    status = np.zeros(u.shape[0], dtype=np.int64)
    flow_kernel(k, u, t, out, anomaly, status)
    _raise_on_status(status, u, t)
    return (out, anomaly) if return_anomaly else out


def flow_rows_dd(k, uh, ul, t):
    """Double-double flow of rows ``(uh, ul)``; returns ``(hi, lo)``."""
    k, uh, t = _broadcast(k, uh, t)
    ul = np.ascontiguousarray(ul, dtype=np.float64).reshape(-1, 6)
    out_h = np.empty_like(uh)
    out_l = np.empty_like(uh)
    status = np.zeros(uh.shape[0], dtype=np.int64)
    flow_dd_kernel(k, uh, ul, t, out_h, out_l, status)
    _raise_on_status(status, uh, t)
    return out_h, out_l


def jacT_rows(k, u, t, w, anomaly=None):
    """Rows of ``phi_t'(u)^T w`` in working precision."""
    k, u, t = _broadcast(k, u, t)
    w = np.ascontiguousarray(w, dtype=np.float64).reshape(-1, 6)
    if anomaly is None:
        anomaly = np.full(u.shape[0], np.nan)
    out = np.empty_like(u)
    status = np.zeros(u.shape[0], dtype=np.int64)
    jacT_kernel(k, u, t, w, np.ascontiguousarray(anomaly, dtype=np.float64), out, status)
    _raise_on_status(status, u, t)
    return out


# ---------------------------------------------------------------------------
# single-body API
# ---------------------------------------------------------------------------


def kepler_flow(body: KeplerBody, t: float, precision: Precision = Precision.WORKING) -> KeplerBody:
    """Propagate ``body`` along its exact Kepler orbit by time ``t``."""
    t = float(t)
    if not math.isfinite(t):
        raise ValueError("time must be finite")
    if precision is Precision.DOUBLE_WORD:
        hi, lo = flow_rows_dd(body.k, body.state[None, :], np.zeros((1, 6)), t)
        out = hi[0] + lo[0]
    else:
        out = flow_rows(body.k, body.state[None, :], t)[0]
    return KeplerBody(out[:3], out[3:], body.k)


def kepler_flow_dd(k: float, state_hi, state_lo, t: float):
    """Double-double flow of a single 6-vector given as ``(hi, lo)``."""
    hi, lo = flow_rows_dd(k, np.asarray(state_hi)[None, :], np.asarray(state_lo)[None, :], t)
    return hi[0], lo[0]


def kepler_flow_jacT_apply(body: KeplerBody, t: float, w) -> np.ndarray:
    """Transpose of the Jacobian of ``kepler_flow(., t)`` at ``body`` applied to ``w``."""
    return jacT_rows(body.k, body.state[None, :], float(t), np.asarray(w, dtype=float)[None, :])[0]
