"""Round-off propagation experiments on ensembles of perturbed initial states.

Every member starts from the reference state with each component scaled by
``1 + perturb_scale * xi``, ``xi ~ U[-1, 1]``.  The relative error of a
conserved quantity is recorded at every sample time, and its mean and
standard deviation over the ensemble are reported.  For an unbiased
integrator the standard deviation grows like ``sqrt(t)``.
"""

from __future__ import annotations

import csv
import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fcirk.comparators import IRKScheme, LawsonScheme
from fcirk.core import FCIRKScheme, InitMode, IntegratorConfig, PrecisionMode, run_batch
from fcirk.tableau import gauss_legendre_tableau
from fcirk.xprec import dd_add_kernel


class Quantity(enum.Enum):
    ENERGY = "energy"
    ANGULAR_MOMENTUM_NORM = "angular_momentum"


class FitError(ValueError):
    """Too few usable points for a power-law fit."""


@dataclass(frozen=True)
class IntegratorSpec:
    family: str = "fcirk"
    stages: int = 6
    precision: PrecisionMode = PrecisionMode.MIXED
    init_mode: InitMode = InitMode.PREVIOUS_INTERPOLATION
    fp_max_iters: int = 100
    partitioned: bool = False

    def config(self, h: float, n_steps: int, m: int) -> IntegratorConfig:
        return IntegratorConfig(h=h, n_steps=n_steps, m=m, fp_max_iters=self.fp_max_iters, init_mode=self.init_mode, precision=self.precision)

    def scheme(self, sys, cfg: IntegratorConfig, t0: float = 0.0):
        tab = gauss_legendre_tableau(self.stages)
        if self.family == "fcirk":
            return FCIRKScheme(sys, tab, cfg, t0)
        if self.family == "irk":
            return IRKScheme(sys, tab, cfg, t0, self.partitioned)
        if self.family == "lawson":
            return LawsonScheme(sys, tab, cfg, t0)
        raise ValueError(f"ensembles support fcirk, irk and lawson, not {self.family!r}")


@dataclass(frozen=True)
class EnsembleConfig:
    P: int = 100
    perturb_scale: float = 1e-6
    h_list: tuple = (10.0, 20.0)
    T: float = 1e5
    m: int = 100
    seed: int = 12345
    quantity: Quantity = Quantity.ANGULAR_MOMENTUM_NORM

    def __post_init__(self):
        if self.P < 1:
            raise ValueError("ensemble size must be at least 1")
        if not self.perturb_scale > 0:
            raise ValueError("perturb_scale must be positive")
        if not self.h_list:
            raise ValueError("need at least one step size")
        if self.T < 0 or self.m < 1:
            raise ValueError("T must be nonnegative and m >= 1")


@dataclass
class EnsembleReport:
    t: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    h: float = float("nan")
    quantity: Quantity = Quantity.ANGULAR_MOMENTUM_NORM
    P: int = 0
    failures: list = field(default_factory=list)
    exponent: float = float("nan")
    amplitude: float = float("nan")

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "mu", "sigma"])
            for row in zip(self.t, self.mu, self.sigma):
                writer.writerow([f"{x:.17g}" for x in row])

    def csv_name(self) -> str:
        return f"{self.quantity.value}_h{self.h:g}.csv"


@dataclass(frozen=True)
class RandomWalkFit:
    exponent: float
    amplitude: float

    @property
    def intercept(self) -> float:
        return math.log(self.amplitude)


def perturbed_states(u0, P: int, scale: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    xi = rng.uniform(-1.0, 1.0, size=(P, np.size(u0)))
    return np.asarray(u0, dtype=np.float64)[None, :] * (1.0 + scale * xi)


def relative_error_dd(model, quantity: Quantity, hi, lo, ref_hi, ref_lo) -> np.ndarray:
    """Relative change of the invariant, with the difference taken in double-double."""
    if quantity is Quantity.ENERGY:
        eh, el = model.energy_dd(hi, lo)
        dh, dl = dd_add_kernel(eh, el, -ref_hi, -ref_lo)
        return (dh + dl) / (ref_hi + ref_lo)
    Lh, Ll = model.angular_momentum_dd(hi, lo)
    dh, dl = dd_add_kernel(Lh, Ll, -ref_hi, -ref_lo)
    L0 = ref_hi + ref_lo
    # first-order change of |L|; the neglected term is O(|dL|^2)
    return np.sum((dh + dl) * L0, axis=-1) / np.sum(L0 * L0, axis=-1)


def _reference_invariant(model, quantity, hi, lo):
    if quantity is Quantity.ENERGY:
        return model.energy_dd(hi, lo)
    return model.angular_momentum_dd(hi, lo)


def _member_errors(model, spec, ec, h, members, ref_hi, ref_lo):
    """Relative errors of one contiguous block of members, one row per sample time."""
    n_steps = int(round(ec.T / h))
    times, rows = [], []

    def sink(sample):
        times.append(sample.t)
        rows.append(relative_error_dd(model, ec.quantity, sample.u, sample.u_lo, ref_hi, ref_lo))

    cfg = spec.config(h, n_steps, ec.m)
    res = run_batch(spec.scheme(model, cfg), 0.0, members, None, sink)
    return np.array(times), np.array(rows), res.failed_at


def run_ensemble_single_h(model, spec: IntegratorSpec, ec: EnsembleConfig, h: float, u0, threads: int = 1) -> EnsembleReport:
    members = perturbed_states(u0, ec.P, ec.perturb_scale, ec.seed)
    ref_hi, ref_lo = _reference_invariant(model, ec.quantity, members, np.zeros_like(members))
    blocks = np.array_split(np.arange(ec.P), max(1, min(int(threads), ec.P)))

    def work(idx):
        return _member_errors(model, spec, ec, h, members[idx], ref_hi[idx], ref_lo[idx])

    if len(blocks) == 1:
        parts = [work(blocks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
            parts = list(pool.map(work, blocks))
    # reduce in member order so the statistics do not depend on the split
    times = parts[0][0]
    err = np.concatenate([p[1] for p in parts], axis=1)
    failed_at = np.concatenate([p[2] for p in parts])
    mus, sigmas = [], []
    for row in err:
        ok = np.isfinite(row)
        mus.append(float(np.mean(row[ok])) if ok.any() else float("nan"))
        sigmas.append(float(np.std(row[ok])) if ok.any() else float("nan"))
    failures = [(int(i), float(failed_at[i])) for i in np.flatnonzero(~np.isnan(failed_at))]
    report = EnsembleReport(times, np.array(mus), np.array(sigmas), h, ec.quantity, ec.P, failures)
    try:
        fit = random_walk_fit(report)
        report.exponent, report.amplitude = fit.exponent, fit.amplitude
    except FitError:
        pass
    return report


def run_ensemble(model, spec: IntegratorSpec, ec: EnsembleConfig, u0, threads: int = 1) -> list[EnsembleReport]:
    """One report per step size in ``ec.h_list``, in that order.

    Members are split into ``threads`` contiguous blocks that advance as
    batches.  Each member keeps its own stage iteration, so the numbers do
    not depend on how the ensemble is split.
    """
    return [run_ensemble_single_h(model, spec, ec, float(h), u0, threads) for h in ec.h_list]


def random_walk_fit(report: EnsembleReport, start: float = 0.5) -> RandomWalkFit:
    """Least-squares fit ``log sigma = a log t + b``.

    Only samples after the fraction ``start`` of the time range are used; the
    default is the second half.  A smaller ``start`` spans more of ``log t``
    and gives a better conditioned exponent.
    """
    if not 0.0 <= start < 1.0:
        raise ValueError("start must be in [0, 1)")
    t = np.asarray(report.t, dtype=np.float64)
    sigma = np.asarray(report.sigma, dtype=np.float64)
    if t.size == 0:
        raise FitError("empty report")
    cut = t.min() + start * (t.max() - t.min())
    use = (t >= cut) & (t > 0) & np.isfinite(sigma) & (sigma > 0)
    if use.sum() < 10:
        raise FitError(f"need at least 10 sample times with sigma > 0, have {int(use.sum())}")
    slope, intercept = np.polyfit(np.log(t[use]), np.log(sigma[use]), 1)
    return RandomWalkFit(float(slope), float(math.exp(intercept)))
