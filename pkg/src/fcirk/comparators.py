"""Reference integrators to compare FCIRK against.

* :func:`irk_integrate` -- the same Gauss IRK engine applied to the
  untransformed equations (optionally with a partitioned sweep).
* :func:`lawson_integrate` -- one global change of variables anchored at t0.
* :func:`leapfrog_midpoint_step` -- half-flow, implicit midpoint on g, half-flow.
* :func:`wh_split_step` -- half-flow, Strang splitting of g, half-flow.
* :func:`composed_integrate` -- compositions or ABA splittings driven by
  coefficient files.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

from fcirk.core import (
    Counters,
    IntegrationSummary,
    IntegratorConfig,
    PrecisionMode,
    Sample,
    StepScheme,
    SystemDefinition,
    run_batch,
    run_single,
    transformed_rhs,
)
from fcirk.tableau import Tableau
from fcirk.xprec import DDReal

# ---------------------------------------------------------------------------
# IRK on the untransformed system
# ---------------------------------------------------------------------------


class IRKScheme(StepScheme):
    """Plain IRK on ``u' = k(u) + g(t, u)``; the state is carried in double-double."""

    def __init__(self, sys, tab, cfg, t0, partitioned: bool = False):
        super().__init__(sys, tab, cfg, t0)
        if partitioned and not hasattr(sys, "position_rate"):
            raise ValueError("partitioned iteration needs a system with position_rate()")
        self.partitioned = partitioned

    def rhs(self, t_j, W, counters):
        counters.perturbation_evals += W.size // W.shape[-1]
        return self.sys.full_rhs(t_j + self.tab.c * self.cfg.h, W)

    def refine(self, t_j, counters):
        if not self.partitioned:
            return None
        sys = self.sys
        nb = sys.dim // 6

        def update_positions(idx, U, Z, F):
            # velocity stages were just updated; recompute the position rates
            W = U[:, None, :] + Z
            F = F.copy()
            rate = sys.position_rate(W).reshape(W.shape[:-1] + (nb, 3))
            F.reshape(F.shape[:-1] + (nb, 6))[..., :3] = rate
            return F

        return update_positions


def irk_integrate(sys: SystemDefinition, tab: Tableau, cfg: IntegratorConfig, t0: float, u0, sink=None, partitioned: bool = False) -> IntegrationSummary:
    """Gauss IRK with fixed-point stages and compensated summation on the original ODE."""
    return run_single(IRKScheme(sys, tab, cfg, t0, partitioned), t0, u0, sink)


def irk_integrate_batch(sys, tab, cfg, t0, u0, sink=None, partitioned: bool = False):
    return run_batch(IRKScheme(sys, tab, cfg, t0, partitioned), t0, u0, None, sink)


# ---------------------------------------------------------------------------
# Lawson: one global change of variables u = phi_{t - t0}(U)
# ---------------------------------------------------------------------------


class LawsonScheme(StepScheme):
    def rhs(self, t_j, W, counters):
        return transformed_rhs(self.sys, t_j + self.tab.c * self.cfg.h, self.t0, W, counters)

    def leave(self, t, hi, lo, counters):
        return self.flow_state(t - self.t0, hi, lo, counters)


def lawson_integrate(sys: SystemDefinition, tab: Tableau, cfg: IntegratorConfig, t0: float, u0, sink=None) -> IntegrationSummary:
    """IRK on the system transformed once by the unperturbed flow anchored at ``t0``."""
    return run_single(LawsonScheme(sys, tab, cfg, t0), t0, u0, sink)


# ---------------------------------------------------------------------------
# explicit and second-order steps
# ---------------------------------------------------------------------------


def _flow(sys, t, u, precision):
    if precision is PrecisionMode.MIXED:
        hi, lo = sys.flow_dd(t, u, np.zeros_like(u))
        return hi + lo
    return sys.flow(t, u)


def midpoint_solve(sys: SystemDefinition, t_mid: float, h: float, U: np.ndarray, max_iters: int = 100, counters: Counters | None = None) -> np.ndarray:
    """Implicit midpoint step on ``u' = g(t, u)``: ``U + h g(t_mid, (U + U')/2)``."""
    W = U.copy()
    dmin = np.full_like(U, np.inf)
    for _ in range(max_iters):
        G = sys.perturbation(t_mid, W)
        if counters is not None:
            counters.perturbation_evals += 1
            counters.sweeps += 1
        W_new = U + (0.5 * h) * G
        diff = np.abs(W_new - W)
        W = W_new
        if not diff.any() or not (diff < dmin).any():
            return U + h * sys.perturbation(t_mid, W)
        dmin = np.minimum(dmin, diff)
    raise ArithmeticError(f"midpoint iteration did not converge in {max_iters} sweeps")


def leapfrog_midpoint_step(sys: SystemDefinition, h: float, u, t: float = 0.0, precision: PrecisionMode = PrecisionMode.WORKING, counters: Counters | None = None) -> np.ndarray:
    """``phi_{h/2} o midpoint-on-g o phi_{h/2}``."""
    U = _flow(sys, 0.5 * h, np.asarray(u, dtype=np.float64), precision)
    U = midpoint_solve(sys, t + 0.5 * h, h, U, counters=counters)
    if counters is not None:
        counters.perturbation_evals += 1
        counters.flow_evals += 2
        counters.steps += 1
    return _flow(sys, 0.5 * h, U, precision)


def _split_perturbation(sys, t, u):
    """Position-rate part (depends on velocities) and velocity-rate part of g."""
    g = sys.perturbation(t, u)
    rows = g.reshape(g.shape[:-1] + (-1, 6))
    drift = np.zeros_like(rows)
    kick = np.zeros_like(rows)
    drift[..., :3] = rows[..., :3]
    kick[..., 3:] = rows[..., 3:]
    return drift.reshape(g.shape), kick.reshape(g.shape)


def wh_split_step(model: SystemDefinition, h: float, state, t: float = 0.0, counters: Counters | None = None) -> np.ndarray:
    """Half-flow, then drift(h/2) kick(h) drift(h/2) on the interaction, then half-flow.

    The drift moves positions by the velocity-dependent part of ``g``; the
    kick moves velocities by the position-dependent part.  Each is exact
    because it does not change the variables it depends on.
    """
    u = model.flow(0.5 * h, np.asarray(state, dtype=np.float64))
    drift, _ = _split_perturbation(model, t, u)
    u = u + (0.5 * h) * drift
    _, kick = _split_perturbation(model, t + 0.5 * h, u)
    u = u + h * kick
    drift, _ = _split_perturbation(model, t + h, u)
    u = u + (0.5 * h) * drift
    if counters is not None:
        counters.perturbation_evals += 3
        counters.flow_evals += 2
        counters.steps += 1
    return model.flow(0.5 * h, u)


def explicit_integrate(step: Callable, cfg: IntegratorConfig, t0: float, u0, sink=None) -> IntegrationSummary:
    """Drive a one-step map ``step(t, h, u, counters) -> u`` with sampling every ``cfg.m`` steps."""
    counters = Counters()
    wall0, cpu0 = time.perf_counter(), time.process_time()
    u = np.array(u0, dtype=np.float64)
    if sink is not None:
        sink(Sample(t0, u.copy(), counters.copy(), np.zeros_like(u)))
    for j in range(1, cfg.n_steps + 1):
        u = step(t0 + (j - 1) * cfg.h, cfg.h, u, counters)
        if sink is not None and j % cfg.m == 0:
            sink(Sample(t0 + j * cfg.h, u.copy(), counters.copy(), np.zeros_like(u)))
    return IntegrationSummary(t0 + cfg.n_steps * cfg.h, u, np.zeros_like(u), counters, time.process_time() - cpu0, time.perf_counter() - wall0)


def leapfrog_integrate(sys, cfg, t0, u0, sink=None):
    def step(t, h, u, counters):
        return leapfrog_midpoint_step(sys, h, u, t, cfg.precision, counters)

    return explicit_integrate(step, cfg, t0, u0, sink)


def wh_integrate(sys, cfg, t0, u0, sink=None):
    def step(t, h, u, counters):
        return wh_split_step(sys, h, u, t, counters)

    return explicit_integrate(step, cfg, t0, u0, sink)


# ---------------------------------------------------------------------------
# composition and splitting coefficient files
# ---------------------------------------------------------------------------

COMPOSITION = "composition"
ABA = "aba"


class CoefficientError(ValueError):
    """Malformed or inconsistent coefficient file."""


@dataclass(frozen=True)
class SplitCoefficients:
    """Coefficients of a composition (``gamma``) or ABA splitting (``a``, ``b``)."""

    kind: str
    coefficients: dict
    order: int
    label: str = ""

    def __post_init__(self):
        if self.kind == COMPOSITION:
            roles = ("gamma",)
        elif self.kind == ABA:
            roles = ("a", "b")
        else:
            raise CoefficientError(f"unknown scheme kind {self.kind!r}")
        for role in roles:
            if role not in self.coefficients:
                raise CoefficientError(f"missing coefficient array {role!r}")
            total = sum((DDReal.from_value(x) for x in self.coefficients[role]), DDReal(0.0))
            if abs(float(total - 1)) > 1e-14:
                raise CoefficientError(f"coefficients {role!r} sum to {float(total)!r}, not 1")
        if self.kind == ABA and len(self.coefficients["a"]) != len(self.coefficients["b"]) + 1:
            raise CoefficientError("an ABA scheme needs one more 'a' than 'b' coefficient")

    def values(self, role: str) -> np.ndarray:
        return np.array([float(DDReal.from_value(x)) for x in self.coefficients[role]])

    @classmethod
    def from_dict(cls, data: dict, label: str = "") -> "SplitCoefficients":
        try:
            kind = str(data["kind"]).lower()
            order = int(data["order"])
            coeffs = data["coefficients"]
        except (KeyError, TypeError, ValueError) as exc:
            raise CoefficientError(f"bad coefficient document: {exc}") from exc
        if not isinstance(coeffs, dict) or not coeffs:
            raise CoefficientError("'coefficients' must map role names to arrays")
        parsed = {}
        for role, arr in coeffs.items():
            if not isinstance(arr, list) or not arr:
                raise CoefficientError(f"coefficients {role!r}: expected a non-empty list")
            try:
                parsed[role] = tuple(DDReal.from_value(str(x)) for x in arr)
            except Exception as exc:
                raise CoefficientError(f"coefficients {role!r}: {exc}") from exc
        return cls(kind, parsed, order, str(data.get("label", label)))

    @classmethod
    def load(cls, path) -> "SplitCoefficients":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CoefficientError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(data, label=path.stem)

    @classmethod
    def bundled(cls, name: str) -> "SplitCoefficients":
        text = resources.files("fcirk.data").joinpath(f"{name}.json").read_text()
        return cls.from_dict(json.loads(text), label=name)

    @classmethod
    def single(cls) -> "SplitCoefficients":
        return cls(COMPOSITION, {"gamma": (DDReal(1.0),)}, 2, "single")


def composed_step(base_step: Callable, coeffs: SplitCoefficients, sys: SystemDefinition | None = None) -> Callable:
    """One step of the composition/splitting as a map ``(t, h, u, counters) -> u``.

    For a composition, ``base_step(t, h, u, counters)`` is applied with
    sub-steps ``gamma_k h``.  For an ABA scheme the unperturbed flow of
    ``sys`` is interleaved with ``base_step`` as the middle map.
    """
    if coeffs.kind == COMPOSITION:
        gamma = coeffs.values("gamma")

        def step(t, h, u, counters):
            for g in gamma:
                u = base_step(t, g * h, u, counters)
                t = t + g * h
            counters.steps += 1 - len(gamma)
            return u

        return step
    if sys is None:
        raise CoefficientError("an ABA scheme needs the system providing the flow")
    a, b = coeffs.values("a"), coeffs.values("b")

    def step(t, h, u, counters):
        tau = t
        for i, bi in enumerate(b):
            u = sys.flow(a[i] * h, u)
            tau = tau + a[i] * h
            u = base_step(tau, bi * h, u, counters)
        counters.flow_evals += len(a)
        counters.steps += 1 - len(b)
        return sys.flow(a[-1] * h, u)

    return step


def composed_integrate(base_step: Callable, coeffs: SplitCoefficients, cfg: IntegratorConfig, t0: float, u0, sink=None, sys: SystemDefinition | None = None) -> IntegrationSummary:
    """Integrate with the composition or splitting described by ``coeffs``."""
    return explicit_integrate(composed_step(base_step, coeffs, sys), cfg, t0, u0, sink)


def kick_drift_kick(sys: SystemDefinition):
    """Middle map for ABA schemes: Strang splitting of ``g`` into its two parts."""

    def step(t, h, u, counters):
        drift, _ = _split_perturbation(sys, t, u)
        u = u + (0.5 * h) * drift
        _, kick = _split_perturbation(sys, t, u)
        u = u + h * kick
        drift, _ = _split_perturbation(sys, t, u)
        counters.perturbation_evals += 3
        counters.steps += 1
        return u + (0.5 * h) * drift

    return step

