import numpy as np
import pytest

from fcirk.nbody import solar_system
from fcirk.stats import (
    EnsembleConfig,
    EnsembleReport,
    FitError,
    IntegratorSpec,
    Quantity,
    perturbed_states,
    random_walk_fit,
    relative_error_dd,
    run_ensemble,
)


@pytest.fixture(scope="module")
def solar():
    return solar_system()


def report_from(t, sigma):
    return EnsembleReport(np.asarray(t, float), np.zeros(len(t)), np.asarray(sigma, float))


def test_fit_recovers_square_root():
    t = np.linspace(0, 1e5, 101)
    fit = random_walk_fit(report_from(t, 3e-18 * np.sqrt(t)))
    assert fit.exponent == pytest.approx(0.5, abs=1e-6)
    assert fit.amplitude == pytest.approx(3e-18, rel=1e-6)
    assert fit.intercept == pytest.approx(np.log(3e-18), rel=1e-9)


def test_fit_recovers_linear_drift():
    t = np.linspace(0, 50, 60)
    assert random_walk_fit(report_from(t, 2.0 * t)).exponent == pytest.approx(1.0, abs=1e-9)


def test_fit_uses_second_half_only():
    t = np.linspace(0, 100, 201)
    sigma = np.where(t < 50, t**3, 10 * np.sqrt(t))
    assert random_walk_fit(report_from(t, sigma)).exponent == pytest.approx(0.5, abs=1e-9)


def test_fit_start_fraction():
    t = np.linspace(0, 100, 201)
    sigma = np.where(t < 10, t**3, 10 * np.sqrt(t))
    assert random_walk_fit(report_from(t, sigma), start=0.1).exponent == pytest.approx(0.5, abs=1e-9)
    assert abs(random_walk_fit(report_from(t, sigma), start=0.0).exponent - 0.5) > 0.1
    with pytest.raises(ValueError):
        random_walk_fit(report_from(t, sigma), start=1.0)


@pytest.mark.parametrize("sigma", [np.zeros(40), np.full(40, np.nan)])
def test_fit_rejects_degenerate_series(sigma):
    with pytest.raises(FitError):
        random_walk_fit(report_from(np.linspace(0, 10, 40), sigma))


def test_fit_needs_ten_points():
    t = np.linspace(0, 10, 18)
    with pytest.raises(FitError):
        random_walk_fit(report_from(t, np.sqrt(t)))


@pytest.mark.parametrize("kwargs", [{"P": 0}, {"perturb_scale": 0.0}, {"h_list": ()}, {"T": -1.0}, {"m": 0}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        EnsembleConfig(**kwargs)


def test_perturbations_are_bounded_and_seeded():
    u0 = np.arange(1.0, 7.0)
    a = perturbed_states(u0, 50, 1e-6, 3)
    assert np.all(np.abs(a / u0 - 1) <= 1e-6)
    assert np.array_equal(a, perturbed_states(u0, 50, 1e-6, 3))
    assert not np.array_equal(a, perturbed_states(u0, 50, 1e-6, 4))


def test_relative_error_of_unchanged_state_is_zero(solar):
    model, u0 = solar
    z = np.zeros((1, u0.size))
    for q in Quantity:
        ref = model.energy_dd(u0[None], z) if q is Quantity.ENERGY else model.angular_momentum_dd(u0[None], z)
        assert relative_error_dd(model, q, u0[None], z, *ref)[0] == 0.0


def test_zero_length_run(solar):
    model, u0 = solar
    (rep,) = run_ensemble(model, IntegratorSpec(), EnsembleConfig(P=2, T=0.0, h_list=(10.0,)), u0)
    assert list(rep.t) == [0.0] and list(rep.mu) == [0.0] and list(rep.sigma) == [0.0]


def test_single_member_has_zero_spread(solar):
    model, u0 = solar
    (rep,) = run_ensemble(model, IntegratorSpec(), EnsembleConfig(P=1, T=200.0, h_list=(20.0,), m=1), u0)
    assert np.all(rep.sigma == 0.0)
    assert np.all(np.isfinite(rep.mu))


def test_reports_are_deterministic_and_split_invariant(solar, tmp_path):
    model, u0 = solar
    ec = EnsembleConfig(P=6, T=400.0, h_list=(20.0, 40.0), m=2, seed=99)
    a = run_ensemble(model, IntegratorSpec(), ec, u0)
    b = run_ensemble(model, IntegratorSpec(), ec, u0, threads=4)
    assert [r.h for r in a] == [20.0, 40.0]
    for ra, rb in zip(a, b):
        ra.to_csv(tmp_path / "a.csv")
        rb.to_csv(tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert a[0].csv_name() == "angular_momentum_h20.csv"
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "t,mu,sigma"
    assert len(lines) == 1 + 400 // (40 * 2) + 1


def test_energy_quantity_and_other_families(solar):
    model, u0 = solar
    ec = EnsembleConfig(P=3, T=100.0, h_list=(10.0,), m=5, quantity=Quantity.ENERGY)
    for spec in (IntegratorSpec(), IntegratorSpec(family="irk"), IntegratorSpec(family="irk", partitioned=True), IntegratorSpec(family="lawson")):
        (rep,) = run_ensemble(model, spec, ec, u0)
        assert np.all(np.isfinite(rep.mu)) and np.all(rep.sigma >= 0)
        assert rep.quantity is Quantity.ENERGY
    with pytest.raises(ValueError):
        IntegratorSpec(family="leapfrog").scheme(model, IntegratorSpec().config(10.0, 1, 1))


def test_failures_are_reported(solar):
    model, u0 = solar
    ec = EnsembleConfig(P=3, T=40.0, h_list=(20.0,), m=1)
    (rep,) = run_ensemble(model, IntegratorSpec(fp_max_iters=2), ec, u0)
    assert [i for i, _ in rep.failures] == [0, 1, 2]
    assert all(t == 0.0 for _, t in rep.failures)
    assert np.isnan(rep.mu[-1])
