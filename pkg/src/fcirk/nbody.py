"""Newtonian N-body model split into Keplerian motion plus interactions.

Bodies are described in canonical heliocentric coordinates ``Q_i`` with
scaled velocities ``V_i = P_i / mu_i`` (``i = 1..N``; body 0 is the central
mass).  Each ``(Q_i, V_i)`` pair follows a Kepler problem with parameter
``k_i = G (m_0 + m_i)`` plus the interaction term

    dQ_i += sum_{j != i} V_j m_j / (m_0 + m_j)
    dV_i += -(k_i / m_0) sum_{j != i} m_j (Q_i - Q_j) / |Q_i - Q_j|^3

State vectors are flat arrays laid out body by body as ``[Q_i, V_i]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from numba import njit

from fcirk import kepler
from fcirk.core import SystemDefinition
from fcirk.xprec import dd_add_kernel, dd_div_kernel, dd_mul_d_kernel, dd_mul_kernel, dd_sqrt_kernel, two_prod

BUNDLED_SOLAR_SYSTEM = "solar_system_j2000.json"

# Gaussian gravitational constant squared: AU^3 / (day^2 solar mass)
_G_AU_DAY_MSUN = 0.01720209895**2
_KNOWN_UNITS = {
    ("au", "day", "solar"): _G_AU_DAY_MSUN,
    ("m", "s", "kg"): 6.6743e-11,
}


class SingularityError(ArithmeticError):
    """Two bodies coincide."""


class NormalizationError(ValueError):
    """Total momentum does not vanish where it must."""


class ParseError(ValueError):
    """Malformed initial-condition file."""


class UnitError(ValueError):
    """Gravitational constant inconsistent with the declared units."""


# ---------------------------------------------------------------------------
# Kepler product systems
# ---------------------------------------------------------------------------


class KeplerianSystem(SystemDefinition):
    """Independent Kepler problems ``(q, v)`` with parameters ``ks``, plus a perturbation.

    Subclasses provide :meth:`perturbation`.
    """

    block_half = 3

    def __init__(self, ks):
        self.ks = np.atleast_1d(np.asarray(ks, dtype=np.float64))
        self.n_bodies = self.ks.size
        self.dim = 6 * self.n_bodies

    def _rows(self, t, u):
        u = np.asarray(u, dtype=np.float64)
        lead = u.shape[:-1] + (self.n_bodies,)
        tt = np.broadcast_to(np.expand_dims(np.asarray(t, dtype=np.float64), -1), lead).reshape(-1)
        kk = np.broadcast_to(self.ks, lead).reshape(-1)
        return kk, u.reshape(-1, 6), tt

    def flow(self, t, u):
        k, rows, tt = self._rows(t, u)
        return kepler.flow_rows(k, rows, tt).reshape(np.shape(u))

    def flow_with_aux(self, t, u):
        k, rows, tt = self._rows(t, u)
        out, anomaly = kepler.flow_rows(k, rows, tt, return_anomaly=True)
        return out.reshape(np.shape(u)), anomaly

    def flow_dd(self, t, u_hi, u_lo):
        k, rows, tt = self._rows(t, u_hi)
        hi, lo = kepler.flow_rows_dd(k, rows, np.asarray(u_lo).reshape(-1, 6), tt)
        return hi.reshape(np.shape(u_hi)), lo.reshape(np.shape(u_hi))

    def flow_jacT_apply(self, t, u, w, aux=None):
        k, rows, tt = self._rows(t, u)
        out = kepler.jacT_rows(k, rows, tt, np.asarray(w).reshape(-1, 6), aux)
        return out.reshape(np.shape(u))

    def unperturbed_rhs(self, u):
        u = np.asarray(u, dtype=np.float64)
        rows = u.reshape(-1, self.n_bodies, 6)
        q, v = rows[..., :3], rows[..., 3:]
        r3 = np.sum(q * q, axis=-1, keepdims=True) ** 1.5
        out = np.concatenate([v, -self.ks[:, None] * q / r3], axis=-1)
        return out.reshape(u.shape)


# ---------------------------------------------------------------------------
# interaction kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _perturbation_kernel(u, c, e, out):
    """Interaction terms for rows of ``u`` (shape (B, 6N)); returns 0 or a singular row + 1.

    ``c[j] = m_j / (m_0 + m_j)`` and ``e`` is the symmetric matrix
    ``G m_i m_j / m_0``; the velocity part is ``-(sum_j e_ij d_ij / r^3) / c_i``.
    """
    B = u.shape[0]
    N = c.size
    for b in range(B):
        for i in range(N):
            oi = 6 * i
            sx = 0.0
            sy = 0.0
            sz = 0.0
            ax = 0.0
            ay = 0.0
            az = 0.0
            for j in range(N):
                if j == i:
                    continue
                oj = 6 * j
                sx += c[j] * u[b, oj + 3]
                sy += c[j] * u[b, oj + 4]
                sz += c[j] * u[b, oj + 5]
                dx = u[b, oi] - u[b, oj]
                dy = u[b, oi + 1] - u[b, oj + 1]
                dz = u[b, oi + 2] - u[b, oj + 2]
                r2 = dx * dx + dy * dy + dz * dz
                if r2 == 0.0:
                    return b + 1
                w = e[i, j] / (r2 * math.sqrt(r2))
                ax += w * dx
                ay += w * dy
                az += w * dz
            out[b, oi] = sx
            out[b, oi + 1] = sy
            out[b, oi + 2] = sz
            out[b, oi + 3] = -ax / c[i]
            out[b, oi + 4] = -ay / c[i]
            out[b, oi + 5] = -az / c[i]
    return 0


@njit(cache=True)
def _position_rate_kernel(u, c, out):
    B = u.shape[0]
    N = c.size
    for b in range(B):
        for i in range(N):
            for d in range(3):
                acc = 0.0
                for j in range(N):
                    if j != i:
                        acc += c[j] * u[b, 6 * j + 3 + d]
                out[b, 3 * i + d] = u[b, 6 * i + 3 + d] + acc


@njit(cache=True)
def _dd_dot3(ah, al, bh, bl):
    sh, sl = dd_mul_kernel(ah[0], al[0], bh[0], bl[0])
    for c in range(1, 3):
        ph, pl = dd_mul_kernel(ah[c], al[c], bh[c], bl[c])
        sh, sl = dd_add_kernel(sh, sl, ph, pl)
    return sh, sl


@njit(cache=True)
def _energy_dd_kernel(uh, ul, c, k, e, m0, out_h, out_l):
    """``m0 * (sum c_i (|V_i|^2/2 - k_i/|Q_i|) + sum_{i<j} (c_i c_j V_i.V_j - e_ij/|Q_i - Q_j|))``."""
    B = uh.shape[0]
    N = c.size
    dqh = np.empty(3)
    dql = np.empty(3)
    for b in range(B):
        eh = 0.0
        el = 0.0
        for i in range(N):
            o = 6 * i
            v2h, v2l = _dd_dot3(uh[b, o + 3 : o + 6], ul[b, o + 3 : o + 6], uh[b, o + 3 : o + 6], ul[b, o + 3 : o + 6])
            r2h, r2l = _dd_dot3(uh[b, o : o + 3], ul[b, o : o + 3], uh[b, o : o + 3], ul[b, o : o + 3])
            rh, rl = dd_sqrt_kernel(r2h, r2l)
            ph, pl = dd_div_kernel(k[i], 0.0, rh, rl)
            th, tl = dd_mul_d_kernel(v2h, v2l, 0.5)
            th, tl = dd_add_kernel(th, tl, -ph, -pl)
            th, tl = dd_mul_d_kernel(th, tl, c[i])
            eh, el = dd_add_kernel(eh, el, th, tl)
        for i in range(N):
            oi = 6 * i
            for j in range(i + 1, N):
                oj = 6 * j
                vvh, vvl = _dd_dot3(uh[b, oi + 3 : oi + 6], ul[b, oi + 3 : oi + 6], uh[b, oj + 3 : oj + 6], ul[b, oj + 3 : oj + 6])
                ch, cl = two_prod(c[i], c[j])
                vvh, vvl = dd_mul_kernel(vvh, vvl, ch, cl)
                eh, el = dd_add_kernel(eh, el, vvh, vvl)
                for d in range(3):
                    dqh[d], dql[d] = dd_add_kernel(uh[b, oi + d], ul[b, oi + d], -uh[b, oj + d], -ul[b, oj + d])
                r2h, r2l = _dd_dot3(dqh, dql, dqh, dql)
                rh, rl = dd_sqrt_kernel(r2h, r2l)
                ph, pl = dd_div_kernel(e[i, j], 0.0, rh, rl)
                eh, el = dd_add_kernel(eh, el, -ph, -pl)
        out_h[b], out_l[b] = dd_mul_d_kernel(eh, el, m0)


@njit(cache=True)
def _angmom_dd_kernel(uh, ul, c, m0, out_h, out_l):
    B = uh.shape[0]
    N = c.size
    for b in range(B):
        for d in range(3):
            c1 = (d + 1) % 3
            c2 = (d + 2) % 3
            sh = 0.0
            sl = 0.0
            for i in range(N):
                o = 6 * i
                ah, al = dd_mul_kernel(uh[b, o + c1], ul[b, o + c1], uh[b, o + 3 + c2], ul[b, o + 3 + c2])
                bh, bl = dd_mul_kernel(uh[b, o + c2], ul[b, o + c2], uh[b, o + 3 + c1], ul[b, o + 3 + c1])
                ah, al = dd_add_kernel(ah, al, -bh, -bl)
                ah, al = dd_mul_d_kernel(ah, al, c[i])
                sh, sl = dd_add_kernel(sh, sl, ah, al)
            out_h[b, d], out_l[b, d] = dd_mul_d_kernel(sh, sl, m0)


# ---------------------------------------------------------------------------
# state containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BarycentricState:
    masses: np.ndarray  # (N+1,), body 0 is the central mass
    q: np.ndarray  # (N+1, 3)
    p: np.ndarray  # (N+1, 3) momenta
    G: float
    names: tuple = ()
    epoch: str | None = None

    @property
    def n_planets(self) -> int:
        return self.masses.size - 1

    def energy(self) -> float:
        m = self.masses
        kin = 0.5 * np.sum(np.sum(self.p**2, axis=1) / m)
        pot = 0.0
        for i in range(m.size):
            for j in range(i + 1, m.size):
                pot += self.G * m[i] * m[j] / np.linalg.norm(self.q[i] - self.q[j])
        return float(kin - pot)

    def angular_momentum(self) -> np.ndarray:
        return np.cross(self.q, self.p).sum(axis=0)

    def linear_momentum(self) -> np.ndarray:
        return self.p.sum(axis=0)

    def center_of_mass(self) -> np.ndarray:
        return (self.masses[:, None] * self.q).sum(axis=0) / self.masses.sum()

    def accelerations(self) -> np.ndarray:
        """Direct pairwise Newtonian accelerations of all N+1 bodies."""
        m = self.masses
        acc = np.zeros_like(self.q)
        for i in range(m.size):
            for j in range(m.size):
                if i != j:
                    d = self.q[j] - self.q[i]
                    acc[i] += self.G * m[j] * d / np.linalg.norm(d) ** 3
        return acc


@dataclass(frozen=True)
class HelioState:
    Q: np.ndarray  # (N, 3)
    V: np.ndarray  # (N, 3)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.Q, self.V], axis=1).reshape(-1)

    @classmethod
    def from_vector(cls, u) -> "HelioState":
        rows = np.asarray(u, dtype=np.float64).reshape(-1, 6)
        return cls(rows[:, :3].copy(), rows[:, 3:].copy())


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------


class NBodyModel(KeplerianSystem):
    """Heliocentric N-body problem as a perturbed product of Kepler problems."""

    def __init__(self, masses, G: float, names=()):
        masses = np.asarray(masses, dtype=np.float64)
        if masses.ndim != 1 or masses.size < 2:
            raise ValueError("need a central mass and at least one orbiting body")
        if np.any(masses <= 0) or not np.all(np.isfinite(masses)):
            raise ValueError("masses must be positive and finite")
        if not G > 0:
            raise ValueError("gravitational constant must be positive")
        self.masses = masses
        self.G = float(G)
        self.m0 = float(masses[0])
        self.m = masses[1:].copy()
        self.names = tuple(names)
        super().__init__(self.G * (self.m0 + self.m))
        # The interaction is coded through c_i = m_i/(m0 + m_i) and the exactly
        # symmetric e_ij = G m_i m_j / m0, so that the equations with these
        # rounded constants conserve energy and angular momentum exactly with
        # reduced masses mu_i = m0 c_i.
        self.c = self.m / (self.m0 + self.m)
        self.mu = self.m0 * self.c
        n = self.m.size
        e = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                e[i, j] = e[j, i] = self.G * self.m[i] * self.m[j] / self.m0
        self.e = e

    @classmethod
    def from_barycentric(cls, b: BarycentricState) -> tuple["NBodyModel", np.ndarray]:
        model = cls(b.masses, b.G, b.names)
        return model, to_heliocentric(b, model).vector()

    # perturbation -----------------------------------------------------------
    def perturbation(self, t, u):
        u = np.asarray(u, dtype=np.float64)
        rows = np.ascontiguousarray(u.reshape(-1, self.dim))
        out = np.empty_like(rows)
        bad = _perturbation_kernel(rows, self.c, self.e, out)
        if bad:
            raise SingularityError(f"coincident bodies in state row {bad - 1}")
        return out.reshape(u.shape)

    def position_rate(self, u):
        """The ``dQ`` part of the full vector field, rows of shape ``(..., 3N)``."""
        u = np.asarray(u, dtype=np.float64)
        rows = np.ascontiguousarray(u.reshape(-1, self.dim))
        out = np.empty((rows.shape[0], 3 * self.n_bodies))
        _position_rate_kernel(rows, self.c, out)
        return out.reshape(u.shape[:-1] + (3 * self.n_bodies,))

    # invariants ---------------------------------------------------------------
    def energy(self, u) -> np.ndarray:
        """``K + G`` in working precision for state(s) ``u``."""
        rows = np.asarray(u, dtype=np.float64).reshape(-1, self.n_bodies, 6)
        Q, V = rows[..., :3], rows[..., 3:]
        r = np.linalg.norm(Q, axis=-1)
        kep = np.sum(self.c * (0.5 * np.sum(V * V, axis=-1) - self.ks / r), axis=-1)
        inter = np.zeros(rows.shape[0])
        for i in range(self.n_bodies):
            for j in range(i + 1, self.n_bodies):
                inter += self.c[i] * self.c[j] * np.sum(V[:, i] * V[:, j], axis=-1)
                inter -= self.e[i, j] / np.linalg.norm(Q[:, i] - Q[:, j], axis=-1)
        e = self.m0 * (kep + inter)
        return e.reshape(np.shape(u)[:-1])

    def energy_dd(self, u_hi, u_lo=None) -> tuple[np.ndarray, np.ndarray]:
        """Energy evaluated in double-double from a ``(hi, lo)`` state."""
        uh = np.ascontiguousarray(np.asarray(u_hi, dtype=np.float64).reshape(-1, self.dim))
        ul = np.zeros_like(uh) if u_lo is None else np.ascontiguousarray(np.asarray(u_lo, dtype=np.float64).reshape(-1, self.dim))
        out_h = np.empty(uh.shape[0])
        out_l = np.empty(uh.shape[0])
        _energy_dd_kernel(uh, ul, self.c, self.ks, self.e, self.m0, out_h, out_l)
        shape = np.shape(u_hi)[:-1]
        return out_h.reshape(shape), out_l.reshape(shape)

    def angular_momentum(self, u) -> np.ndarray:
        """Total angular momentum via the barycentric reconstruction."""
        u = np.asarray(u, dtype=np.float64)
        if u.ndim > 1:
            return np.stack([self.angular_momentum(x) for x in u.reshape(-1, self.dim)]).reshape(u.shape[:-1] + (3,))
        return to_barycentric(HelioState.from_vector(u), self).angular_momentum()

    def angular_momentum_dd(self, u_hi, u_lo=None) -> tuple[np.ndarray, np.ndarray]:
        """``sum_i mu_i Q_i x V_i`` in double-double (equal to the total when P_0 = 0)."""
        uh = np.ascontiguousarray(np.asarray(u_hi, dtype=np.float64).reshape(-1, self.dim))
        ul = np.zeros_like(uh) if u_lo is None else np.ascontiguousarray(np.asarray(u_lo, dtype=np.float64).reshape(-1, self.dim))
        out_h = np.empty((uh.shape[0], 3))
        out_l = np.empty((uh.shape[0], 3))
        _angmom_dd_kernel(uh, ul, self.c, self.m0, out_h, out_l)
        shape = np.shape(u_hi)[:-1] + (3,)
        return out_h.reshape(shape), out_l.reshape(shape)

    def linear_momentum(self, u) -> np.ndarray:
        """Barycentric total momentum ``P_0`` reconstructed from the heliocentric state."""
        rows = np.asarray(u, dtype=np.float64).reshape(-1, self.n_bodies, 6)
        p = self.mu[:, None] * rows[..., 3:]
        p0 = -p.sum(axis=-2)
        return (p0 + p.sum(axis=-2)).reshape(np.shape(u)[:-1] + (3,))

    def energy_scale(self, u) -> float:
        rows = np.asarray(u, dtype=np.float64).reshape(-1, 6)
        return float(np.sum(self.mu * self.ks / np.linalg.norm(rows[:, :3], axis=1)))


def perturbation_g(model: NBodyModel, t, state: HelioState) -> np.ndarray:
    return model.perturbation(t, state.vector())


def energy(model: NBodyModel, state: HelioState) -> float:
    return float(model.energy(state.vector()))


def angular_momentum(model: NBodyModel, state: HelioState) -> np.ndarray:
    return model.angular_momentum(state.vector())


# ---------------------------------------------------------------------------
# coordinate transforms
# ---------------------------------------------------------------------------


def to_heliocentric(b: BarycentricState, model: NBodyModel | None = None, tol: float = 1e-12) -> HelioState:
    """Canonical heliocentric ``(Q, V)`` of a momentum-free barycentric state."""
    model = model or NBodyModel(b.masses, b.G, b.names)
    P0 = b.p.sum(axis=0)
    scale = np.abs(b.p).sum()
    if np.linalg.norm(P0) > tol * max(scale, np.finfo(float).tiny):
        raise NormalizationError(f"total momentum {P0} does not vanish")
    M = b.masses.sum()
    Q = b.q[1:] - b.q[0]
    P = b.p[1:] - (b.masses[1:, None] / M) * P0
    return HelioState(Q, P / model.mu[:, None])


def to_barycentric(h: HelioState, masses_or_model) -> BarycentricState:
    """Inverse transform assuming the barycenter at rest at the origin."""
    if isinstance(masses_or_model, NBodyModel):
        model = masses_or_model
    else:
        model = NBodyModel(masses_or_model, 1.0)
    masses = model.masses
    M = masses.sum()
    q0 = -(model.m[:, None] * h.Q).sum(axis=0) / M
    q = np.vstack([q0, h.Q + q0])
    p_planets = model.mu[:, None] * h.V
    p = np.vstack([-p_planets.sum(axis=0), p_planets])
    return BarycentricState(masses.copy(), q, p, model.G, model.names)


# ---------------------------------------------------------------------------
# initial conditions
# ---------------------------------------------------------------------------

_TOP_FIELDS = {"G", "epoch", "units", "bodies", "source", "frame"}
_BODY_FIELDS = {"name", "mass", "position", "velocity"}


def _vec3(body, key, idx):
    val = body.get(key)
    if not isinstance(val, list) or len(val) != 3:
        raise ParseError(f"bodies[{idx}].{key}: expected a list of 3 numbers")
    try:
        out = np.array([float(x) for x in val])
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bodies[{idx}].{key}: {exc}") from exc
    if not np.all(np.isfinite(out)):
        raise ParseError(f"bodies[{idx}].{key}: non-finite entry")
    return out


def parse_initial_conditions(data: dict, lax: bool = False) -> BarycentricState:
    """Validate a decoded initial-condition document and normalize it."""
    if not isinstance(data, dict):
        raise ParseError("top level must be an object")
    unknown = set(data) - _TOP_FIELDS
    if unknown and not lax:
        raise ParseError(f"unknown top-level field(s): {sorted(unknown)}")
    for key in ("G", "bodies"):
        if key not in data:
            raise ParseError(f"missing field: {key}")
    try:
        G = float(data["G"])
    except (TypeError, ValueError) as exc:
        raise ParseError(f"G: {exc}") from exc
    if not G > 0 or not math.isfinite(G):
        raise ParseError("G: must be a positive finite number")
    units = data.get("units")
    if units is not None:
        _check_units(units, G)
    bodies = data["bodies"]
    if not isinstance(bodies, list) or len(bodies) < 2:
        raise ParseError("bodies: need the central body plus at least one more")
    names, masses, qs, vs = [], [], [], []
    for idx, body in enumerate(bodies):
        if not isinstance(body, dict):
            raise ParseError(f"bodies[{idx}]: expected an object")
        extra = set(body) - _BODY_FIELDS
        if extra and not lax:
            raise ParseError(f"bodies[{idx}]: unknown field(s) {sorted(extra)}")
        missing = _BODY_FIELDS - set(body)
        if missing:
            raise ParseError(f"bodies[{idx}]: missing field(s) {sorted(missing)}")
        try:
            mass = float(body["mass"])
        except (TypeError, ValueError) as exc:
            raise ParseError(f"bodies[{idx}].mass: {exc}") from exc
        if not mass > 0 or not math.isfinite(mass):
            raise ParseError(f"bodies[{idx}].mass: must be positive")
        names.append(str(body["name"]))
        masses.append(mass)
        qs.append(_vec3(body, "position", idx))
        vs.append(_vec3(body, "velocity", idx))
    m = np.array(masses)
    q = np.array(qs)
    v = np.array(vs)
    # shift to the barycenter and remove the total momentum
    M = m.sum()
    q = q - (m[:, None] * q).sum(axis=0) / M
    v = v - (m[:, None] * v).sum(axis=0) / M
    return BarycentricState(m, q, m[:, None] * v, G, tuple(names), data.get("epoch"))


def _check_units(units, G):
    if isinstance(units, str):
        parts = [s.strip().lower() for s in units.split(",")]
        if len(parts) != 3:
            raise UnitError(f"units: expected 'length,time,mass', got {units!r}")
        key = tuple(parts)
    elif isinstance(units, dict):
        try:
            key = (str(units["length"]).lower(), str(units["time"]).lower(), str(units["mass"]).lower())
        except KeyError as exc:
            raise UnitError(f"units: missing {exc}") from exc
    else:
        raise UnitError("units: expected a string or an object")
    expected = _KNOWN_UNITS.get(key)
    if expected is not None and abs(G / expected - 1) > 1e-4:
        raise UnitError(f"G={G!r} is inconsistent with units {key} (expected about {expected!r})")


def load_initial_conditions(source=None, lax: bool = False) -> BarycentricState:
    """Read initial conditions from a JSON file (default: the bundled solar system)."""
    if source is None:
        text = resources.files("fcirk.data").joinpath(BUNDLED_SOLAR_SYSTEM).read_text()
    else:
        text = Path(source).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    return parse_initial_conditions(data, lax=lax)


def solar_system(source=None) -> tuple[NBodyModel, np.ndarray]:
    """The bundled (or given) model together with its initial heliocentric state."""
    return NBodyModel.from_barycentric(load_initial_conditions(source))
