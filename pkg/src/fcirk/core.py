"""Flow-composed implicit Runge-Kutta (FCIRK) stepping and integration.

One FCIRK step of length ``h`` from ``u_j`` is

    U   = phi_{h/2}(u_j)
    U'  = U + h sum_i b_i F_i,      F_i = f(t_j + c_i h, W_i)
    u_{j+1} = phi_{h/2}(U')

where ``f(t, U) = phi'_{t - t_mid}(U)^{-1} g(t, phi_{t - t_mid}(U))`` with
``t_mid = t_j + h/2`` and the stages ``W_i = U + h sum_l a_il F_l`` are found
by fixed-point iteration.  The driver fuses consecutive half-flows into one
``h``-flow and only undoes the last half-flow when a sample is requested.

State vectors carried from step to step are double-double ``(hi, lo)``
pairs; stage iterations run in working precision on ``hi``.  Internally
everything is batched over a leading member axis so that an ensemble of
independent trajectories advances together; every member keeps its own
stopping rule, so a batched run reproduces the single runs bit for bit.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from fcirk.tableau import Tableau
from fcirk.xprec import dd_add_kernel, two_sum


class PrecisionMode(enum.Enum):
    """Which parts of a step run in the double-word tier."""

    WORKING = "working"
    MIXED = "mixed"


class InitMode(enum.Enum):
    ZERO = "zero"
    PREVIOUS_INTERPOLATION = "previous_interpolation"


class FixedPointError(ArithmeticError):
    """The stage iteration hit its cap without meeting the stopping rule."""

    def __init__(self, message, residual=None, sweeps=None):
        super().__init__(message)
        self.residual = residual
        self.sweeps = sweeps


class IntegrationError(RuntimeError):
    """A step failed; carries the last successfully reached time and state."""

    def __init__(self, message, last_time, last_state, counters):
        super().__init__(message)
        self.last_time = last_time
        self.last_state = last_state
        self.counters = counters


# ---------------------------------------------------------------------------
# system contract
# ---------------------------------------------------------------------------


def block_structure_apply(w, d):
    """Canonical ``J = [[0, -I], [I, 0]]`` on consecutive blocks ``(q, p)`` of size 2d."""
    w = np.asarray(w)
    blocks = w.reshape(w.shape[:-1] + (-1, 2 * d))
    out = np.empty_like(blocks)
    out[..., :d] = -blocks[..., d:]
    out[..., d:] = blocks[..., :d]
    return out.reshape(w.shape)


def block_structure_solve(w, d):
    """``J^{-1} = [[0, I], [-I, 0]]`` on consecutive blocks of size 2d."""
    w = np.asarray(w)
    blocks = w.reshape(w.shape[:-1] + (-1, 2 * d))
    out = np.empty_like(blocks)
    out[..., :d] = blocks[..., d:]
    out[..., d:] = -blocks[..., :d]
    return out.reshape(w.shape)


class SystemDefinition:
    """A perturbed system ``du/dt = k(u) + g(t, u)`` with exactly solvable ``k``.

    Array arguments are batched: ``u`` has shape ``(..., dim)`` and ``t`` is a
    scalar or broadcasts against ``u.shape[:-1]``.  Subclasses implement
    ``flow``, ``flow_jacT_apply`` and ``perturbation``; ``flow_dd`` is needed
    for mixed precision and ``unperturbed_rhs`` for the plain IRK comparator.
    All evaluations must act row by row so results do not depend on batching.
    """

    dim: int
    #: half-size of the canonical blocks used by the default structure maps
    block_half: int = 3

    def flow(self, t, u):
        raise NotImplementedError

    def flow_with_aux(self, t, u):
        """Flow plus any intermediates ``flow_jacT_apply`` can reuse."""
        return self.flow(t, u), None

    def flow_dd(self, t, u_hi, u_lo):
        raise NotImplementedError(f"{type(self).__name__} has no double-word flow")

    def flow_jacT_apply(self, t, u, w, aux=None):
        raise NotImplementedError

    def perturbation(self, t, u):
        raise NotImplementedError

    def unperturbed_rhs(self, u):
        raise NotImplementedError

    def structure_apply(self, w):
        return block_structure_apply(w, self.block_half)

    def structure_solve(self, w):
        return block_structure_solve(w, self.block_half)

    def full_rhs(self, t, u):
        return self.unperturbed_rhs(u) + self.perturbation(t, u)


# ---------------------------------------------------------------------------
# configuration and bookkeeping
# ---------------------------------------------------------------------------


@dataclass
class Counters:
    perturbation_evals: int = 0
    flow_evals: int = 0
    rhs_flow_evals: int = 0
    sweeps: int = 0
    steps: int = 0

    def copy(self) -> "Counters":
        return replace(self)

    @property
    def sweeps_per_step(self) -> float:
        return self.sweeps / self.steps if self.steps else 0.0

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


@dataclass(frozen=True)
class IntegratorConfig:
    h: float
    n_steps: int = 1
    m: int = 1
    #: None selects the stagnation rule; a float stops once max |dZ| <= fp_tol
    fp_tol: float | None = None
    fp_max_iters: int = 100
    init_mode: InitMode = InitMode.PREVIOUS_INTERPOLATION
    precision: PrecisionMode = PrecisionMode.MIXED

    def __post_init__(self):
        if self.h == 0 or not np.isfinite(self.h):
            raise ValueError("step size must be finite and nonzero")
        if self.n_steps < 0:
            raise ValueError("n_steps must be nonnegative")
        if self.m < 1:
            raise ValueError("sampling interval m must be >= 1")
        if self.fp_max_iters < 1:
            raise ValueError("fp_max_iters must be >= 1")

    def with_h(self, h: float) -> "IntegratorConfig":
        return replace(self, h=h)


@dataclass
class StepWork:
    """Per-step scratch: transformed state, stages and stage derivatives."""

    U_hi: np.ndarray
    U_lo: np.ndarray
    Z: np.ndarray  # stage increments W_i - U, shape (s, D)
    F: np.ndarray  # stage derivatives, shape (s, D)
    sweeps: int = 0
    counters: Counters = field(default_factory=Counters)

    @property
    def W(self) -> np.ndarray:
        return self.U_hi[None, :] + self.Z


class Sample(NamedTuple):
    t: float
    u: np.ndarray
    counters: Counters
    u_lo: np.ndarray | None = None


@dataclass
class IntegrationSummary:
    t: float
    state: np.ndarray
    state_lo: np.ndarray
    counters: Counters
    cpu_seconds: float
    wall_seconds: float


@dataclass
class BatchSummary:
    """Result of a batched run; failed members hold NaN from their failure on."""

    t: float
    state: np.ndarray
    state_lo: np.ndarray
    counters: Counters
    failed_at: np.ndarray  # start time of the failing step, NaN if none
    cpu_seconds: float
    wall_seconds: float


# ---------------------------------------------------------------------------
# transformed right-hand side and stage iteration
# ---------------------------------------------------------------------------


def transformed_rhs(sys: SystemDefinition, t, t_mid, U, counters: Counters | None = None):
    """``phi'_{t-t_mid}(U)^{-1} g(t, phi_{t-t_mid}(U))`` via ``J^{-1} phi'^T J``."""
    U = np.asarray(U, dtype=np.float64)
    tau = np.asarray(t, dtype=np.float64) - t_mid
    u, aux = sys.flow_with_aux(tau, U)
    R = sys.perturbation(t, u)
    w_hat = sys.structure_apply(R)
    f_hat = sys.flow_jacT_apply(tau, U, w_hat, aux)
    if counters is not None:
        n = U.size // U.shape[-1]
        counters.perturbation_evals += n
        counters.rhs_flow_evals += n
    return sys.structure_solve(f_hat)


def apply_stage_matrix(h: float, A: np.ndarray, F: np.ndarray) -> np.ndarray:
    """``h * (A @ F)`` over the stage axis, summed in fixed index order.

    ``F`` has shape ``(B, s, D)``.  The explicit loop keeps the rounding of
    every member independent of the batch size.
    """
    out = np.zeros_like(F)
    for col in range(A.shape[1]):
        out += A[None, :, col, None] * F[:, col : col + 1, :]
    return h * out


@dataclass
class StageSolution:
    Z: np.ndarray
    F: np.ndarray
    sweeps: np.ndarray
    failed: np.ndarray
    residual: np.ndarray


def solve_stages_batch(rhs, A: np.ndarray, h: float, U: np.ndarray, Z0: np.ndarray, cfg: IntegratorConfig, counters: Counters, refine=None) -> StageSolution:
    """Fixed-point iteration ``Z <- h A F(U + Z)`` for a batch of members.

    ``rhs(idx, W)`` evaluates stage derivatives for members ``idx`` at stage
    values ``W`` of shape ``(b, s, D)``.  A member stops when a sweep leaves
    its ``Z`` unchanged, or when no component improves on its smallest
    earlier change (stagnation); with ``cfg.fp_tol`` set it stops once the
    largest change is below that tolerance instead.  ``refine(idx, U, Z, F)``
    may return an updated ``F`` given the freshly computed ``Z`` (used by the
    partitioned iteration).
    """
    B = U.shape[0]
    Z = np.array(Z0, dtype=np.float64, copy=True)
    F = np.zeros_like(Z)
    dmin = np.full_like(Z, np.inf)
    sweeps = np.zeros(B, dtype=np.int64)
    residual = np.full(B, np.inf)
    active = np.arange(B)
    for sweep in range(1, cfg.fp_max_iters + 1):
        Ua = U[active]
        Za = Z[active]
        Fa = rhs(active, Ua[:, None, :] + Za)
        Zn = apply_stage_matrix(h, A, Fa)
        if refine is not None:
            Fa = refine(active, Ua, Zn, Fa)
            Zn = apply_stage_matrix(h, A, Fa)
        diff = np.abs(Zn - Za)
        Z[active] = Zn
        F[active] = Fa
        sweeps[active] = sweep
        worst = diff.max(axis=(1, 2))
        residual[active] = worst
        if cfg.fp_tol is not None:
            done = worst <= cfg.fp_tol
        else:
            improved = (diff < dmin[active]).any(axis=(1, 2))
            done = (worst == 0.0) | ~improved
            dmin[active] = np.minimum(dmin[active], diff)
        done |= ~np.isfinite(worst)
        active = active[~done]
        if active.size == 0:
            break
    failed = np.zeros(B, dtype=bool)
    failed[active] = True
    failed |= ~np.isfinite(residual)
    counters.sweeps += int(sweeps.sum())
    return StageSolution(Z, F, sweeps, failed, residual)


def compensated_increment(h: float, b: np.ndarray, F: np.ndarray):
    """``h sum_i b_i F_i`` over axis -2 with error-free additions in index order.

    Returns the increment as a ``(sum, carry)`` pair.
    """
    total = np.zeros(F.shape[:-2] + F.shape[-1:])
    carry = np.zeros_like(total)
    for i in range(F.shape[-2]):
        total, e = two_sum(total, (h * b[i]) * F[..., i, :])
        carry = carry + e
    return total, carry


def add_increment(U_hi, U_lo, inc):
    """Add a ``(sum, carry)`` increment to a double-double vector."""
    return dd_add_kernel(U_hi, U_lo, inc[0], inc[1])


# ---------------------------------------------------------------------------
# generic step engine
# ---------------------------------------------------------------------------


class StepScheme:
    """Hooks that turn the shared IRK engine into a concrete integrator.

    The engine carries an internal state ``U``.  Per step it solves the
    stages with ``rhs``, adds the increment and calls ``advance``; samples
    are mapped back to the original variables with ``leave``.
    """

    def __init__(self, sys: SystemDefinition, tab: Tableau, cfg: IntegratorConfig, t0: float):
        self.sys, self.tab, self.cfg, self.t0 = sys, tab, cfg, t0

    def enter(self, hi, lo, counters):
        return hi.copy(), lo.copy()

    def rhs(self, t_j, W, counters):
        raise NotImplementedError

    def advance(self, t_next, hi, lo, counters):
        return hi, lo

    def leave(self, t, hi, lo, counters):
        return hi.copy(), lo.copy()

    def guess(self, U_prev, Z_prev, U_now, counters):
        """Initial stage increments from the previous step's stages."""
        return apply_stage_matrix(1.0, self.tab.extrapolation_matrix, Z_prev)

    def refine(self, t_j, counters):
        """Optional in-sweep update hook, see :func:`solve_stages_batch`."""
        return None

    def flow_state(self, t, hi, lo, counters):
        """State flow at the tier selected by ``cfg.precision``."""
        counters.flow_evals += hi.shape[0]
        if self.cfg.precision is PrecisionMode.MIXED:
            return self.sys.flow_dd(t, hi, lo)
        out = self.sys.flow(t, hi + lo)
        return out, np.zeros_like(out)


class FCIRKScheme(StepScheme):
    """Half-flow, IRK on the locally transformed system, half-flow."""

    def enter(self, hi, lo, counters):
        return self.flow_state(0.5 * self.cfg.h, hi, lo, counters)

    def rhs(self, t_j, W, counters):
        h = self.cfg.h
        return transformed_rhs(self.sys, t_j + self.tab.c * h, t_j + 0.5 * h, W, counters)

    def advance(self, t_next, hi, lo, counters):
        return self.flow_state(self.cfg.h, hi, lo, counters)

    def leave(self, t, hi, lo, counters):
        return self.flow_state(-0.5 * self.cfg.h, hi, lo, counters)

    def guess(self, U_prev, Z_prev, U_now, counters):
        # extrapolate in the previous step's variables, then carry the
        # predicted stage values over with the h-flow
        Z_ext = apply_stage_matrix(1.0, self.tab.extrapolation_matrix, Z_prev)
        W = self.sys.flow(self.cfg.h, U_prev[:, None, :] + Z_ext)
        counters.rhs_flow_evals += Z_prev.shape[0] * Z_prev.shape[1]
        return W - U_now[:, None, :]


def _isolate(fn, idx):
    """Apply ``fn`` to the members ``idx``, splitting the batch when it raises.

    ``fn(sub)`` returns a tuple of arrays with leading dimension ``len(sub)``.
    Members are independent, so re-running a subset reproduces their
    results exactly; the members that still raise on their own are dropped.
    Returns the surviving indices and their stacked results (or ``None``).
    """
    if idx.size == 0:
        return idx, None
    try:
        return idx, fn(idx)
    except ArithmeticError:
        if idx.size <= 1:
            return idx[:0], None
    half = idx.size // 2
    i1, r1 = _isolate(fn, idx[:half])
    i2, r2 = _isolate(fn, idx[half:])
    if r1 is None:
        return i2, r2
    if r2 is None:
        return i1, r1
    return np.concatenate([i1, i2]), tuple(np.concatenate([x, y]) for x, y in zip(r1, r2))


def run_batch(scheme: StepScheme, t0: float, hi0, lo0=None, sink: Callable[[Sample], None] | None = None) -> BatchSummary:
    """Advance a batch of states ``(B, D)`` with ``scheme`` for ``cfg.n_steps`` steps.

    ``sink`` receives a :class:`Sample` with ``(B, D)`` arrays at ``t0`` and
    every ``cfg.m`` steps.  Members whose step fails (stage iteration not
    converging, non-finite values, or an arithmetic exception in the flow or
    the perturbation) are frozen and reported as NaN from then on.
    """
    cfg, tab = scheme.cfg, scheme.tab
    h = cfg.h
    counters = Counters()
    wall0, cpu0 = time.perf_counter(), time.process_time()
    hi = np.array(hi0, dtype=np.float64, ndmin=2)
    lo = np.zeros_like(hi) if lo0 is None else np.array(lo0, dtype=np.float64, ndmin=2)
    B, D = hi.shape
    failed_at = np.full(B, np.nan)
    alive = np.ones(B, dtype=bool)
    if sink is not None:
        sink(Sample(t0, hi + lo, counters.copy(), lo.copy()))

    def kill(lost, t):
        alive[lost] = False
        failed_at[lost] = t
        Uh[lost] = np.nan
        Ul[lost] = np.nan

    Uh = np.full_like(hi, np.nan)
    Ul = np.full_like(lo, np.nan)
    everyone = np.arange(B)
    done, res = _isolate(lambda sub: scheme.enter(hi[sub], lo[sub], counters), everyone)
    if res is not None:
        Uh[done], Ul[done] = res
    kill(np.setdiff1d(everyone, done), t0)

    U_prev = np.full((B, D), np.nan)
    Z_prev = np.full((B, tab.s, D), np.nan)
    have_prev = False
    out_hi, out_lo = hi, lo
    sampled_last = True
    for j in range(1, cfg.n_steps + 1):
        t_j = t0 + (j - 1) * h
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        warm = have_prev and cfg.init_mode is InitMode.PREVIOUS_INTERPOLATION

        def one_step(sub):
            if warm:
                Z0 = scheme.guess(U_prev[sub], Z_prev[sub], Uh[sub], counters)
            else:
                Z0 = np.zeros((sub.size, tab.s, D))
            sol = solve_stages_batch(
                lambda _, W: scheme.rhs(t_j, W, counters),
                tab.a, h, Uh[sub], Z0, cfg, counters, scheme.refine(t_j, counters),
            )
            new_h, new_l = add_increment(Uh[sub], Ul[sub], compensated_increment(h, tab.b, sol.F))
            ok = ~(sol.failed | ~np.all(np.isfinite(new_h), axis=1))
            adv_h = np.full_like(new_h, np.nan)
            adv_l = np.full_like(new_l, np.nan)
            if ok.any():
                adv_h[ok], adv_l[ok] = scheme.advance(t_j + h, new_h[ok], new_l[ok], counters)
            return ok, new_h, sol.Z, adv_h, adv_l

        done, res = _isolate(one_step, idx)
        kill(np.setdiff1d(idx, done), t_j)
        if res is not None:
            ok, new_h, Z, adv_h, adv_l = res
            kill(done[~ok], t_j)
            good = done[ok]
            U_prev[good] = new_h[ok]
            Z_prev[good] = Z[ok]
            Uh[good], Ul[good] = adv_h[ok], adv_l[ok]
        have_prev = True
        counters.steps += 1
        sampled_last = j % cfg.m == 0
        if sampled_last:
            out_hi, out_lo = _leave_alive(scheme, t_j + h, Uh, Ul, alive, counters)
            if sink is not None:
                sink(Sample(t_j + h, out_hi + out_lo, counters.copy(), out_lo.copy()))
    if not sampled_last:
        out_hi, out_lo = _leave_alive(scheme, t0 + cfg.n_steps * h, Uh, Ul, alive, counters)
    return BatchSummary(
        t0 + cfg.n_steps * h,
        out_hi + out_lo,
        out_lo,
        counters,
        failed_at,
        time.process_time() - cpu0,
        time.perf_counter() - wall0,
    )


def _leave_alive(scheme, t, Uh, Ul, alive, counters):
    out_hi = np.full_like(Uh, np.nan)
    out_lo = np.full_like(Ul, np.nan)
    done, res = _isolate(lambda sub: scheme.leave(t, Uh[sub], Ul[sub], counters), np.flatnonzero(alive))
    if res is not None:
        out_hi[done], out_lo[done] = res
    return out_hi, out_lo


def run_single(scheme: StepScheme, t0: float, u0, sink=None) -> IntegrationSummary:
    """Single-trajectory wrapper around :func:`run_batch`; raises on failure."""
    hi, lo = _as_dd(u0)
    last = {"t": t0, "u": hi + lo}

    def unbatch(sample: Sample):
        u = sample.u[0]
        if np.all(np.isfinite(u)):
            last["t"], last["u"] = sample.t, u
            if sink is not None:
                sink(Sample(sample.t, u, sample.counters, sample.u_lo[0]))

    res = run_batch(scheme, t0, hi[None, :], lo[None, :], unbatch)
    if not np.isnan(res.failed_at[0]):
        raise IntegrationError(
            f"step starting at t={res.failed_at[0]!r} failed to converge",
            last["t"],
            last["u"],
            res.counters,
        )
    return IntegrationSummary(res.t, res.state[0], res.state_lo[0], res.counters, res.cpu_seconds, res.wall_seconds)


def _as_dd(u):
    if isinstance(u, tuple):
        hi, lo = u
        return np.array(hi, dtype=np.float64), np.array(lo, dtype=np.float64)
    hi = np.array(u, dtype=np.float64)
    return hi, np.zeros_like(hi)


# ---------------------------------------------------------------------------
# public FCIRK operations
# ---------------------------------------------------------------------------


def fixed_point_stages(sys: SystemDefinition, tab: Tableau, cfg: IntegratorConfig, t_j: float, U_in, Z0=None, counters: Counters | None = None) -> StepWork:
    """Solve the FCIRK stage equations for one step starting at ``t_j``.

    ``U_in`` is the flow-transformed state ``phi_{h/2}(u_j)``, either an
    array or a ``(hi, lo)`` pair.  Raises :class:`FixedPointError` when the
    iteration cap is reached.
    """
    U_hi, U_lo = _as_dd(U_in)
    counters = counters if counters is not None else Counters()
    scheme = FCIRKScheme(sys, tab, cfg, t_j)
    if Z0 is None:
        Z0 = np.zeros((1, tab.s, U_hi.size))
    else:
        Z0 = np.asarray(Z0, dtype=np.float64)[None]
    sol = solve_stages_batch(lambda idx, W: scheme.rhs(t_j, W, counters), tab.a, cfg.h, U_hi[None, :], Z0, cfg, counters)
    if sol.failed[0]:
        raise FixedPointError(
            f"stage iteration did not converge in {cfg.fp_max_iters} sweeps",
            residual=float(sol.residual[0]),
            sweeps=int(sol.sweeps[0]),
        )
    return StepWork(U_hi, U_lo, sol.Z[0], sol.F[0], int(sol.sweeps[0]), counters)


def fcirk_step_dd(sys, tab, cfg, t_j, u_j, counters: Counters | None = None):
    """One FCIRK step returning the new state as a double-double pair."""
    counters = counters if counters is not None else Counters()
    scheme = FCIRKScheme(sys, tab, cfg, t_j)
    hi, lo = _as_dd(u_j)
    Uh, Ul = scheme.flow_state(0.5 * cfg.h, hi[None], lo[None], counters)
    work = fixed_point_stages(sys, tab, cfg, t_j, (Uh[0], Ul[0]), counters=counters)
    Uh, Ul = add_increment(Uh, Ul, compensated_increment(cfg.h, tab.b, work.F[None]))
    Uh, Ul = scheme.flow_state(0.5 * cfg.h, Uh, Ul, counters)
    counters.steps += 1
    return Uh[0], Ul[0]


def fcirk_step(sys: SystemDefinition, tab: Tableau, cfg: IntegratorConfig, t_j: float, u_j, counters: Counters | None = None) -> np.ndarray:
    """``u_{j+1} = phi_{h/2}(psi_h(phi_{h/2}(u_j)))`` rounded to working precision."""
    hi, lo = fcirk_step_dd(sys, tab, cfg, t_j, u_j, counters)
    return hi + lo


def integrate(sys: SystemDefinition, tab: Tableau, cfg: IntegratorConfig, t0: float, u0, sink: Callable[[Sample], None] | None = None) -> IntegrationSummary:
    """Integrate ``cfg.n_steps`` FCIRK steps, sampling every ``cfg.m`` steps.

    Interior half-flows are fused: one ``h``-flow per step plus one
    ``-h/2``-flow per sample.  The first sample is ``(t0, u0)``.
    """
    return run_single(FCIRKScheme(sys, tab, cfg, t0), t0, u0, sink)


def integrate_batch(sys: SystemDefinition, tab: Tableau, cfg: IntegratorConfig, t0: float, u0, sink=None, u0_lo=None) -> BatchSummary:
    """FCIRK on a batch of initial states ``u0`` of shape ``(B, D)``."""
    return run_batch(FCIRKScheme(sys, tab, cfg, t0), t0, u0, u0_lo, sink)


def time_symmetry_check(sys: SystemDefinition, tab: Tableau, cfg: IntegratorConfig, u, t0: float = 0.0) -> float:
    """``||step_{-h}(step_h(u)) - u|| / ||u||`` for one forward/backward pair."""
    u = np.asarray(u, dtype=np.float64)
    fwd = fcirk_step_dd(sys, tab, cfg, t0, u)
    back = fcirk_step_dd(sys, tab, cfg.with_h(-cfg.h), t0 + cfg.h, fwd)
    return float(np.linalg.norm((back[0] - u) + back[1]) / np.linalg.norm(u))
