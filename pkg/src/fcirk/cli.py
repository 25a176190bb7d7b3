"""Command-line experiment runner.

Commands: ``integrate``, ``sweep``, ``ensemble``, ``tableau`` and ``compare``.
Settings come from an optional JSON config file (keys named like the long
flags, with underscores) and are overridden by flags given on the command
line.  Exit status is 0 on success, 2 for configuration errors and 3 for
numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from fcirk.comparators import (
    CoefficientError,
    SplitCoefficients,
    composed_integrate,
    irk_integrate,
    kick_drift_kick,
    lawson_integrate,
    leapfrog_integrate,
    leapfrog_midpoint_step,
    wh_integrate,
)
from fcirk.core import InitMode, IntegrationError, IntegratorConfig, PrecisionMode, integrate
from fcirk.nbody import NBodyModel, solar_system
from fcirk.stats import EnsembleConfig, IntegratorSpec, Quantity, relative_error_dd, run_ensemble
from fcirk.tableau import gauss_legendre_tableau, quadrature_residual, symmetry_residual, symplecticity_residual
from fcirk.xprec import DDReal

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

COMMANDS = ("integrate", "sweep", "ensemble", "tableau", "compare")
FAMILIES = ("fcirk", "irk", "irk-partitioned", "lawson", "leapfrog", "wh", "composed")


class ConfigError(ValueError):
    """Inconsistent or unusable run configuration."""


def _floats(v) -> tuple:
    if isinstance(v, (list, tuple)):
        return tuple(float(x) for x in v)
    return tuple(float(x) for x in str(v).split(",") if x.strip())


def _ints(v) -> tuple:
    if isinstance(v, (list, tuple)):
        return tuple(int(x) for x in v)
    return tuple(int(x) for x in str(v).split(",") if x.strip())


def _names(v) -> tuple:
    if isinstance(v, (list, tuple)):
        return tuple(str(x) for x in v)
    return tuple(x.strip() for x in str(v).split(",") if x.strip())


@dataclass
class RunConfig:
    command: str = "integrate"
    model: str | None = None
    integrator: tuple = ("fcirk",)
    stages: tuple = (6,)
    coefficients: str = "triple_jump"
    h: tuple = (10.0,)
    T: float = 1e4
    m: int = 1
    precision: str = "mixed"
    init: str = "previous"
    fp_max_iters: int = 100
    threads: int = 1
    seed: int = 12345
    out: str = "-"
    P: int = 100
    perturb_scale: float = 1e-6
    quantity: str = "angular_momentum"

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        for fam in self.integrator:
            if fam not in FAMILIES:
                raise ConfigError(f"unknown integrator {fam!r}; choose from {', '.join(FAMILIES)}")
        if not self.stages or min(self.stages) < 1:
            raise ConfigError("stages must be positive integers")
        if not self.h or any(not np.isfinite(h) or h == 0 for h in self.h):
            raise ConfigError("step sizes must be finite and nonzero")
        if not np.isfinite(self.T) or self.T < 0:
            raise ConfigError("T must be finite and nonnegative")
        if self.m < 1 or self.threads < 1 or self.fp_max_iters < 1:
            raise ConfigError("m, threads and fp_max_iters must be at least 1")
        if self.precision not in ("working", "mixed"):
            raise ConfigError("precision must be 'working' or 'mixed'")
        if self.init not in ("previous", "zero"):
            raise ConfigError("init must be 'previous' or 'zero'")
        if self.quantity not in {q.value for q in Quantity}:
            raise ConfigError(f"quantity must be one of {[q.value for q in Quantity]}")
        if self.command in ("integrate", "ensemble") and (len(self.integrator) > 1 or len(self.stages) > 1):
            raise ConfigError(f"{self.command} takes a single integrator and stage count")
        if self.command == "ensemble":
            if self.P < 1 or not self.perturb_scale > 0:
                raise ConfigError("ensemble needs P >= 1 and perturb_scale > 0")
            if self.integrator[0] not in ("fcirk", "irk", "irk-partitioned", "lawson"):
                raise ConfigError("ensembles support fcirk, irk, irk-partitioned and lawson")
        if self.command == "integrate" and len(self.h) > 1:
            raise ConfigError("integrate takes a single step size")
        return self

    @property
    def precision_mode(self) -> PrecisionMode:
        return PrecisionMode.MIXED if self.precision == "mixed" else PrecisionMode.WORKING

    @property
    def init_mode(self) -> InitMode:
        return InitMode.PREVIOUS_INTERPOLATION if self.init == "previous" else InitMode.ZERO

    def n_steps(self, h: float) -> int:
        n = self.T / abs(h)
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ConfigError(f"T={self.T:g} is not a whole number of steps of h={h:g}")
        return int(round(n))

    def integrator_config(self, h: float) -> IntegratorConfig:
        return IntegratorConfig(
            h=h, n_steps=self.n_steps(h), m=self.m, fp_max_iters=self.fp_max_iters,
            init_mode=self.init_mode, precision=self.precision_mode,
        )


_CONVERTERS = {
    "integrator": _names, "stages": _ints, "h": _floats, "T": float, "m": int, "fp_max_iters": int,
    "threads": int, "seed": int, "P": int, "perturb_scale": float,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fcirk", description=__doc__.split("\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON file with run settings; flags override it")
    p.add_argument("--model", help="initial-conditions JSON (default: bundled solar system)")
    p.add_argument("--integrator", help=f"comma-separated families from {', '.join(FAMILIES)}")
    p.add_argument("--stages", help="Gauss stages s (comma-separated for sweeps)")
    p.add_argument("--coefficients", help="coefficient file, or a bundled name, for 'composed'")
    p.add_argument("--h", help="step size (comma-separated for sweeps and ensembles)")
    p.add_argument("--T", help="integration length")
    p.add_argument("--m", help="sample every m steps")
    p.add_argument("--precision", choices=("working", "mixed"))
    p.add_argument("--init", choices=("previous", "zero"), help="stage initial guess")
    p.add_argument("--fp-max-iters", dest="fp_max_iters")
    p.add_argument("--threads", help="worker threads for ensembles")
    p.add_argument("--seed")
    p.add_argument("--P", help="ensemble size")
    p.add_argument("--perturb-scale", dest="perturb_scale")
    p.add_argument("--quantity", choices=[q.value for q in Quantity])
    p.add_argument("--out", help="output file ('-' for stdout); a directory for ensembles")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    settings: dict = {}
    if args.config:
        try:
            settings = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(settings, dict):
            raise ConfigError("config file must hold a JSON object")
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            settings[f.name] = v
    known = {f.name for f in fields(RunConfig)}
    unknown = set(settings) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if settings.get("command", args.command) != args.command:
        raise ConfigError("command in config file disagrees with the command line")
    settings["command"] = args.command
    if args.command == "ensemble" and "out" not in settings:
        settings["out"] = "ensemble_out"
    if args.command == "ensemble" and "h" not in settings:
        settings["h"] = (10.0, 20.0)
    if args.command == "ensemble" and "T" not in settings:
        settings["T"] = 1e5
    if args.command == "ensemble" and "m" not in settings:
        settings["m"] = 100
    if args.command == "compare" and "integrator" not in settings:
        settings["integrator"] = ("fcirk", "irk", "irk-partitioned")
    try:
        for key, conv in _CONVERTERS.items():
            if key in settings:
                settings[key] = conv(settings[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value: {exc}") from exc
    return RunConfig(**settings).validate()


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


@contextmanager
def _open_out(path: str):
    if path == "-":
        yield sys.stdout
        sys.stdout.flush()
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            yield fh


def _load_model(cfg: RunConfig):
    return solar_system(cfg.model)


def _g17(x: float) -> str:
    return f"{x:.17g}"


def _state_columns(model: NBodyModel) -> list[str]:
    names = model.names[1:] if len(model.names) == model.n_bodies + 1 else [f"b{i + 1}" for i in range(model.n_bodies)]
    names = [n.replace(" ", "_") for n in names]
    return [f"{n}_{c}" for n in names for c in ("Qx", "Qy", "Qz", "Vx", "Vy", "Vz")]


def _run_family(model, fam: str, s: int, cfg: RunConfig, h: float, u0, sink):
    """Run one integrator on ``model`` and return its summary."""
    icfg = cfg.integrator_config(h)
    if fam == "fcirk":
        return integrate(model, gauss_legendre_tableau(s), icfg, 0.0, u0, sink)
    if fam in ("irk", "irk-partitioned"):
        return irk_integrate(model, gauss_legendre_tableau(s), icfg, 0.0, u0, sink, partitioned=fam == "irk-partitioned")
    if fam == "lawson":
        return lawson_integrate(model, gauss_legendre_tableau(s), icfg, 0.0, u0, sink)
    if fam == "leapfrog":
        return leapfrog_integrate(model, icfg, 0.0, u0, sink)
    if fam == "wh":
        return wh_integrate(model, icfg, 0.0, u0, sink)
    coeffs = _coefficients(cfg.coefficients)
    if coeffs.kind == "aba":
        return composed_integrate(kick_drift_kick(model), coeffs, icfg, 0.0, u0, sink, model)

    def base(t, hh, u, counters):
        return leapfrog_midpoint_step(model, hh, u, t, icfg.precision, counters)

    return composed_integrate(base, coeffs, icfg, 0.0, u0, sink)


def _coefficients(name: str) -> SplitCoefficients:
    path = Path(name)
    if path.exists():
        return SplitCoefficients.load(path)
    try:
        return SplitCoefficients.bundled(name)
    except FileNotFoundError as exc:
        raise ConfigError(f"no coefficient file or bundled set named {name!r}") from exc


class _ErrorTracker:
    """Relative energy and angular-momentum errors of each sample, in double-double."""

    def __init__(self, model, u0):
        z = np.zeros((1, u0.size))
        self.model = model
        self.e0 = model.energy_dd(u0[None], z)
        self.l0 = model.angular_momentum_dd(u0[None], z)
        self.max_e = 0.0
        self.max_l = 0.0

    def __call__(self, sample):
        hi = np.atleast_2d(sample.u)
        lo = np.zeros_like(hi) if sample.u_lo is None else np.atleast_2d(sample.u_lo)
        de = float(relative_error_dd(self.model, Quantity.ENERGY, hi, lo, *self.e0)[0])
        dl = float(relative_error_dd(self.model, Quantity.ANGULAR_MOMENTUM_NORM, hi, lo, *self.l0)[0])
        self.max_e = max(self.max_e, abs(de))
        self.max_l = max(self.max_l, abs(dl))
        return de, dl


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_integrate(cfg: RunConfig) -> int:
    model, u0 = _load_model(cfg)
    fam, s, h = cfg.integrator[0], cfg.stages[0], cfg.h[0]
    cfg.n_steps(h)
    track = _ErrorTracker(model, u0)
    mixed = cfg.precision_mode is PrecisionMode.MIXED and fam not in ("leapfrog", "wh", "composed")
    with _open_out(cfg.out) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + _state_columns(model) + ["rel_energy_error", "rel_angmom_error"])

        first = [True]

        def sink(sample):
            # the initial state is not a result row
            if first[0]:
                first[0] = False
                return
            de, dl = track(sample)
            if mixed:
                lo = sample.u_lo
                state = [DDReal(float(a), float(b)).format(34) for a, b in zip(sample.u, lo)]
            else:
                state = [_g17(x) for x in sample.u]
            writer.writerow([_g17(sample.t)] + state + [_g17(de), _g17(dl)])
            fh.flush()

        try:
            res = _run_family(model, fam, s, cfg, h, u0, sink)
        except (IntegrationError, ArithmeticError) as exc:
            print(f"error: integration failed: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
    c = res.counters
    print(
        f"summary: integrator={fam} s={s} h={h:g} steps={c.steps} perturbation_evals={c.perturbation_evals} "
        f"flow_evals={c.flow_evals + c.rhs_flow_evals} sweeps={c.sweeps} cpu_seconds={res.cpu_seconds:.3f} "
        f"wall_seconds={res.wall_seconds:.3f} max_rel_energy_error={track.max_e:.3e} max_rel_angmom_error={track.max_l:.3e}",
        file=sys.stderr if cfg.out == "-" else sys.stdout,
    )
    return EXIT_OK


SWEEP_HEADER = [
    "integrator", "stages", "h", "perturbation_evals", "sweeps_per_step", "cpu_seconds", "wall_seconds",
    "max_rel_energy_error", "max_rel_angmom_error",
]


def cmd_sweep(cfg: RunConfig) -> int:
    model, u0 = _load_model(cfg)
    for h in cfg.h:
        cfg.n_steps(h)
    status = EXIT_OK
    with _open_out(cfg.out) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_HEADER)
        for fam in cfg.integrator:
            stage_list = cfg.stages if fam in ("fcirk", "irk", "irk-partitioned", "lawson") else cfg.stages[:1]
            for s in stage_list:
                for h in cfg.h:
                    track = _ErrorTracker(model, u0)
                    cpu0, wall0 = time.process_time(), time.perf_counter()
                    try:
                        res = _run_family(model, fam, s, cfg, h, u0, track)
                    except (IntegrationError, ArithmeticError) as exc:
                        print(f"error: {fam} s={s} h={h:g} failed: {exc}", file=sys.stderr)
                        status = EXIT_NUMERIC
                        continue
                    cpu, wall = time.process_time() - cpu0, time.perf_counter() - wall0
                    c = res.counters
                    writer.writerow([
                        fam, s, _g17(h), c.perturbation_evals, _g17(c.sweeps_per_step), _g17(cpu), _g17(wall),
                        _g17(track.max_e), _g17(track.max_l),
                    ])
                    fh.flush()
    return status


def cmd_compare(cfg: RunConfig) -> int:
    """All requested integrators at one ``(s, h)`` pair, in sweep format."""
    if len(cfg.h) > 1 or len(cfg.stages) > 1:
        raise ConfigError("compare takes a single step size and stage count")
    return cmd_sweep(cfg)


def cmd_ensemble(cfg: RunConfig) -> int:
    model, u0 = _load_model(cfg)
    fam = cfg.integrator[0]
    spec = IntegratorSpec(
        family="irk" if fam == "irk-partitioned" else fam,
        stages=cfg.stages[0],
        precision=cfg.precision_mode,
        init_mode=cfg.init_mode,
        fp_max_iters=cfg.fp_max_iters,
        partitioned=fam == "irk-partitioned",
    )
    for h in cfg.h:
        cfg.n_steps(h)
    ec = EnsembleConfig(
        P=cfg.P, perturb_scale=cfg.perturb_scale, h_list=cfg.h, T=cfg.T, m=cfg.m, seed=cfg.seed,
        quantity=Quantity(cfg.quantity),
    )
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    for report in run_ensemble(model, spec, ec, u0, cfg.threads):
        path = out / report.csv_name()
        report.to_csv(path)
        print(f"{path}: P={report.P} h={report.h:g} exponent={report.exponent:.4f} failures={len(report.failures)}")
        if report.failures:
            status = EXIT_NUMERIC
    return status


def cmd_tableau(cfg: RunConfig) -> int:
    for s in cfg.stages:
        tab = gauss_legendre_tableau(s)
        target = cfg.out
        if target != "-" and len(cfg.stages) > 1:
            target = str(Path(target).with_name(f"{Path(target).stem}_s{s}{Path(target).suffix or '.csv'}"))
        with _open_out(target) as fh:
            tab.to_csv(fh)
        print(
            f"s={s}: symplecticity={symplecticity_residual(tab):.3e} symmetry={symmetry_residual(tab):.3e} "
            f"quadrature={quadrature_residual(tab):.3e}",
            file=sys.stderr,
        )
    return EXIT_OK


HANDLERS = {
    "integrate": cmd_integrate,
    "sweep": cmd_sweep,
    "ensemble": cmd_ensemble,
    "tableau": cmd_tableau,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = resolve_config(args)
        return HANDLERS[cfg.command](cfg)
    except (ConfigError, CoefficientError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # malformed initial conditions, units, normalization
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
