"""Small test systems with known structure.

* :class:`PerturbedKepler` -- one Kepler orbit plus a weak anisotropic
  quadratic potential, optionally with a periodic forcing term.
* :class:`PerturbedOscillator` -- harmonic oscillators (linear ``k``) with a
  quartic perturbation.
* :class:`LinearScalar` -- ``u' = lam (u - u_star)`` with a trivial flow.
"""

from __future__ import annotations

import numpy as np

from fcirk.core import SystemDefinition
from fcirk.nbody import KeplerianSystem


class PerturbedKepler(KeplerianSystem):
    """``q'' = -k q/|q|^3 - eps * diag(weights) q + eps * forcing * cos(omega t) e_x``.

    Without forcing the system is Hamiltonian, autonomous and reversible
    under ``(q, v) -> (q, -v)``.
    """

    def __init__(self, eps: float = 1e-3, k: float = 1.0, weights=(1.0, 0.5, 0.25), forcing: float = 0.0, omega: float = 1.0):
        super().__init__([k])
        self.eps = float(eps)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.forcing = float(forcing)
        self.omega = float(omega)

    def perturbation(self, t, u):
        u = np.asarray(u, dtype=np.float64)
        out = np.zeros_like(u)
        out[..., 3:] = -self.eps * self.weights * u[..., :3]
        if self.forcing:
            out[..., 3] += self.eps * self.forcing * np.cos(self.omega * np.asarray(t, dtype=np.float64))
        return out

    def position_rate(self, u):
        """``dq/dt`` of the full system; the perturbation only acts on ``v``."""
        return np.array(np.asarray(u, dtype=np.float64)[..., 3:], copy=True)

    def energy(self, u):
        u = np.asarray(u, dtype=np.float64)
        q, v = u[..., :3], u[..., 3:]
        kep = 0.5 * np.sum(v * v, axis=-1) - self.ks[0] / np.linalg.norm(q, axis=-1)
        return kep + 0.5 * self.eps * np.sum(self.weights * q * q, axis=-1)

    def angular_momentum(self, u):
        u = np.asarray(u, dtype=np.float64)
        return np.cross(u[..., :3], u[..., 3:])

    @staticmethod
    def reflection(u):
        """The reversing involution ``(q, v) -> (q, -v)``."""
        out = np.array(u, dtype=np.float64, copy=True)
        out[..., 3:] *= -1
        return out


class PerturbedOscillator(SystemDefinition):
    """``q' = p, p' = -omega^2 q - eps q^3`` for ``d`` independent frequencies.

    State layout ``[q_1..q_d, p_1..p_d]``.  Only a working-precision flow is
    provided.
    """

    def __init__(self, omega=(1.0, 1.7), eps: float = 0.1):
        self.omega = np.atleast_1d(np.asarray(omega, dtype=np.float64))
        self.d = self.omega.size
        self.dim = 2 * self.d
        self.block_half = self.d
        self.eps = float(eps)

    def _rot(self, t):
        wt = np.expand_dims(np.asarray(t, dtype=np.float64), -1) * self.omega
        return np.cos(wt), np.sin(wt)

    def flow(self, t, u):
        u = np.asarray(u, dtype=np.float64)
        c, s = self._rot(t)
        q, p = u[..., : self.d], u[..., self.d :]
        return np.concatenate([c * q + s / self.omega * p, -self.omega * s * q + c * p], axis=-1)

    def flow_jacT_apply(self, t, u, w, aux=None):
        w = np.asarray(w, dtype=np.float64)
        c, s = self._rot(t)
        a, b = w[..., : self.d], w[..., self.d :]
        return np.concatenate([c * a - self.omega * s * b, s / self.omega * a + c * b], axis=-1)

    def perturbation(self, t, u):
        u = np.asarray(u, dtype=np.float64)
        out = np.zeros_like(u)
        out[..., self.d :] = -self.eps * u[..., : self.d] ** 3
        return out

    def unperturbed_rhs(self, u):
        u = np.asarray(u, dtype=np.float64)
        q, p = u[..., : self.d], u[..., self.d :]
        return np.concatenate([p, -(self.omega**2) * q], axis=-1)

    def linear_matrix(self) -> np.ndarray:
        d = self.d
        A = np.zeros((2 * d, 2 * d))
        A[:d, d:] = np.eye(d)
        A[d:, :d] = -np.diag(self.omega**2)
        return A


class LinearScalar(SystemDefinition):
    """``u' = lam (u - u_star)`` with ``k = 0``; flow and structure are identities."""

    dim = 1

    def __init__(self, lam: float = -0.5, u_star: float = 1.0):
        self.lam = float(lam)
        self.u_star = float(u_star)

    def flow(self, t, u):
        return np.array(u, dtype=np.float64, copy=True)

    def flow_dd(self, t, u_hi, u_lo):
        return np.array(u_hi, dtype=np.float64, copy=True), np.array(u_lo, dtype=np.float64, copy=True)

    def flow_jacT_apply(self, t, u, w, aux=None):
        return np.array(w, dtype=np.float64, copy=True)

    def perturbation(self, t, u):
        return self.lam * (np.asarray(u, dtype=np.float64) - self.u_star)

    def unperturbed_rhs(self, u):
        return np.zeros_like(np.asarray(u, dtype=np.float64))

    def structure_apply(self, w):
        return np.array(w, copy=True)

    def structure_solve(self, w):
        return np.array(w, copy=True)
