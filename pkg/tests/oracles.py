"""Independent reference solutions used by the tests.

None of these share code with the package: the Kepler references integrate
the equations of motion directly or solve the universal Kepler equation in
mpmath, and the N-body reference works from Newton's law in barycentric
coordinates.
"""

import mpmath
import numpy as np
from numba import njit


@njit(cache=True)
def _kepler_acc(k, y, out):
    r2 = y[0] * y[0] + y[1] * y[1] + y[2] * y[2]
    f = -k / (r2 * np.sqrt(r2))
    out[0] = y[3]
    out[1] = y[4]
    out[2] = y[5]
    out[3] = f * y[0]
    out[4] = f * y[1]
    out[5] = f * y[2]


@njit(cache=True)
def _modified_midpoint(k, y0, H, n):
    """Increment ``y(H) - y0`` of the modified midpoint rule with ``n`` substeps.

    Working with increments keeps the rounding error proportional to the
    increment rather than to ``|y0|``.
    """
    h = H / n
    f = np.empty(6)
    _kepler_acc(k, y0, f)
    d0 = np.zeros(6)
    d1 = h * f
    for _ in range(n - 1):
        _kepler_acc(k, y0 + d1, f)
        d2 = d0 + 2.0 * h * f
        d0 = d1
        d1 = d2
    _kepler_acc(k, y0 + d1, f)
    return 0.5 * (d0 + d1 + h * f)


@njit(cache=True)
def gbs_kepler(k, y0, t, H):
    """Order-10 extrapolated midpoint rule with macro step ``H``.

    Sub-step sequence 2, 4, 6, 8, 10; the state is accumulated with
    compensated summation.
    """
    n_macro = max(1, int(np.ceil(abs(t) / H)))
    step = t / n_macro
    seq = np.array([2, 4, 6, 8, 10])
    y = y0.copy()
    carry = np.zeros(6)
    T = np.empty((5, 6))
    for _ in range(n_macro):
        for i in range(5):
            T[i] = _modified_midpoint(k, y, step, seq[i])
            for j in range(i - 1, -1, -1):
                ratio = (seq[i] / seq[j]) ** 2
                T[j] = T[j + 1] + (T[j + 1] - T[j]) / (ratio - 1.0)
        inc = T[0]
        # y + inc with the rounding error kept in carry
        for c in range(6):
            s = y[c] + (inc[c] + carry[c])
            bp = s - y[c]
            carry[c] = (inc[c] + carry[c]) - bp
            y[c] = s
    return y + carry


def kepler_mpmath(k, u, t, dps=50):
    """Universal-variable Kepler flow solved with mpmath at ``dps`` digits."""
    with mpmath.workdps(dps):
        k = mpmath.mpf(k)
        t = mpmath.mpf(t)
        q = [mpmath.mpf(x) for x in u[:3]]
        v = [mpmath.mpf(x) for x in u[3:]]
        r0 = mpmath.sqrt(sum(x * x for x in q))
        eta = sum(a * b for a, b in zip(q, v))
        beta = 2 * k / r0 - sum(x * x for x in v)

        def stumpff(z):
            if z > 0:
                s = mpmath.sqrt(z)
                return mpmath.cos(s), mpmath.sin(s) / s, (1 - mpmath.cos(s)) / z, (s - mpmath.sin(s)) / (z * s)
            if z < 0:
                s = mpmath.sqrt(-z)
                return mpmath.cosh(s), mpmath.sinh(s) / s, (1 - mpmath.cosh(s)) / z, (s - mpmath.sinh(s)) / (z * s)
            return mpmath.mpf(1), mpmath.mpf(1), mpmath.mpf(1) / 2, mpmath.mpf(1) / 6

        def gfun(x):
            c0, c1, c2, c3 = stumpff(beta * x * x)
            return c0, x * c1, x * x * c2, x**3 * c3

        def residual(x):
            _, g1, g2, g3 = gfun(x)
            return r0 * g1 + eta * g2 + k * g3 - t

        # the residual is increasing in x (its derivative is r > 0): bisect
        lo, hi = mpmath.mpf(0), t / r0
        while residual(hi) * mpmath.sign(t) < 0:
            lo, hi = hi, 2 * hi
        if lo > hi:
            lo, hi = hi, lo
        for _ in range(int(3.4 * dps) + 60):
            mid = (lo + hi) / 2
            if residual(mid) < 0:
                lo = mid
            else:
                hi = mid
        x = (lo + hi) / 2
        g0, g1, g2, g3 = gfun(x)
        r = r0 * g0 + eta * g1 + k * g2
        f = 1 - k * g2 / r0
        g = t - k * g3
        fd = -k * g1 / (r * r0)
        gd = 1 - k * g2 / r
        qn = [f * a + g * b for a, b in zip(q, v)]
        vn = [fd * a + gd * b for a, b in zip(q, v)]
        return qn + vn


def richardson_jacobian(fun, u, delta):
    """Central differences at ``delta`` and ``delta/2`` combined to fourth order."""
    u = np.asarray(u, dtype=float)
    n = u.size
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0

        def d(hh):
            return (fun(u + hh * e) - fun(u - hh * e)) / (2 * hh)

        cols.append((4 * d(delta / 2) - d(delta)) / 3)
    return np.array(cols).T


def random_kepler_states(rng, n, k=1.0):
    """Elliptic and hyperbolic states with perihelion well away from the centre."""
    out = []
    while len(out) < n:
        r = rng.uniform(0.7, 2.0)
        q = rng.standard_normal(3)
        q *= r / np.linalg.norm(q)
        vesc = np.sqrt(2 * k / r)
        speed = vesc * rng.uniform(0.55, 1.4)
        v = rng.standard_normal(3)
        v -= (v @ q) / (q @ q) * q * rng.uniform(0.0, 0.9)
        v *= speed / np.linalg.norm(v)
        # reject orbits diving close to the centre
        L = np.linalg.norm(np.cross(q, v))
        E = 0.5 * speed**2 - k / r
        e = np.sqrt(max(0.0, 1 + 2 * E * L**2 / k**2))
        peri = L**2 / k / (1 + e)
        if peri > 0.3 and abs(e - 1) > 0.02:
            out.append(np.concatenate([q, v]))
    return np.array(out)


def nbody_rhs_mpmath(masses, G, u, dps=40):
    """Time derivative of the heliocentric state from Newton's law in barycentric form.

    The heliocentric state ``(Q_i, V_i)`` with ``V_i = P_i / mu_i`` is
    converted to barycentric positions and momenta (zero total momentum),
    all pairwise forces are summed, and the derivatives are mapped back.
    """
    with mpmath.workdps(dps):
        m = [mpmath.mpf(x) for x in masses]
        G = mpmath.mpf(G)
        n = len(m) - 1
        M = sum(m)
        rows = np.asarray(u, dtype=float).reshape(n, 6)
        Q = [[mpmath.mpf(x) for x in row[:3]] for row in rows]
        V = [[mpmath.mpf(x) for x in row[3:]] for row in rows]
        mu = [m[0] * m[i + 1] / (m[0] + m[i + 1]) for i in range(n)]
        P = [[mu[i] * V[i][c] for c in range(3)] for i in range(n)]
        q0 = [-sum(m[i + 1] * Q[i][c] for i in range(n)) / M for c in range(3)]
        q = [q0] + [[Q[i][c] + q0[c] for c in range(3)] for i in range(n)]
        p = [[-sum(P[i][c] for i in range(n)) for c in range(3)]] + P
        force = [[mpmath.mpf(0)] * 3 for _ in range(n + 1)]
        for a in range(n + 1):
            for b in range(n + 1):
                if a == b:
                    continue
                d = [q[b][c] - q[a][c] for c in range(3)]
                r3 = mpmath.sqrt(sum(x * x for x in d)) ** 3
                for c in range(3):
                    force[a][c] += G * m[a] * m[b] * d[c] / r3
        out = []
        for i in range(n):
            dQ = [p[i + 1][c] / m[i + 1] - p[0][c] / m[0] for c in range(3)]
            # zero total momentum keeps P_i equal to the barycentric momentum
            dV = [force[i + 1][c] / mu[i] for c in range(3)]
            out.extend(dQ + dV)
        return out
