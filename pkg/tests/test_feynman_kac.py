import math

import numpy as np
import pytest

from nonlocal_fkpp.feynman_kac import (
    MAX_EXIT_FRACTION,
    PROBE_COLUMNS,
    CoverageError,
    FieldOracle,
    FKConfig,
    FKEstimate,
    estimate_u,
    estimate_u_from_initial,
    write_probe_csv,
    zscore,
)
from nonlocal_fkpp.front import front_location
from nonlocal_fkpp.kernels import Uniform, build_kernel
from nonlocal_fkpp.solver import Domain, Indicator, SolverConfig, run

KERNEL = build_kernel(Uniform(0.5), 0.05, 0.5)


def test_unit_field_is_exact():
    oracle = FieldOracle.constant(1.0, times=(0.0, 10.0), x_range=(-100, 100))
    est = estimate_u(0.0, 10.0, oracle, FKConfig(n_paths=2000, horizon=5.0))
    assert est.mean == 1.0 and est.standard_error == 0.0
    assert zscore(est, 1.0) == 0.0


def test_zero_field():
    oracle = FieldOracle.constant(0.0, times=(0.0, 10.0), x_range=(-100, 100))
    est = estimate_u(3.0, 10.0, oracle, FKConfig(n_paths=2000, horizon=5.0))
    assert est.mean == 0.0


def test_zero_initial_data():
    oracle = FieldOracle.constant(0.3, times=(0.0, 5.0), x_range=(-100, 100))
    est = estimate_u_from_initial(0.0, 2.0, lambda x: np.zeros_like(x), oracle,
                                  FKConfig(n_paths=1000))
    assert est.mean == 0.0


def test_t_zero_returns_initial_value():
    oracle = FieldOracle.constant(0.3)
    est = estimate_u_from_initial(0.5, 0.0, Indicator(0.0, 1.0, 0.7), oracle, FKConfig())
    assert est.mean == 0.7 and est.standard_error == 0.0


def test_frozen_potential_closed_form():
    # potential kappa, terminal Gaussian bump: mean = e^{(1-kappa) t'} (G_{t'} * g)(x)
    kappa, tp, v = 0.4, 2.0, 0.5
    xs = np.arange(-60.0, 60.0 + 1e-9, 0.05)
    bump = np.exp(-0.5 * xs**2 / v)
    u = np.vstack([bump, bump])
    oracle = FieldOracle(np.array([0.0, 10.0]), xs[0], 0.05, u, np.full_like(u, kappa))
    for i, x in enumerate((0.0, 1.0, 2.5)):
        est = estimate_u(x, 10.0, oracle, FKConfig(n_paths=40_000, horizon=tp, rng_seed=i))
        exact = math.exp((1 - kappa) * tp) * math.sqrt(v / (v + tp)) * math.exp(
            -0.5 * x * x / (v + tp)
        )
        assert abs(est.mean - exact) <= 3 * est.standard_error


def test_determinism_and_seed_dependence():
    xs = np.arange(-30.0, 30.0, 0.1)
    u = np.vstack([np.exp(-xs**2), np.exp(-xs**2)])
    oracle = FieldOracle(np.array([0.0, 5.0]), xs[0], 0.1, u, 0.5 * u)
    a = estimate_u(0.3, 5.0, oracle, FKConfig(n_paths=5000, horizon=2.0, rng_seed=3))
    b = estimate_u(0.3, 5.0, oracle, FKConfig(n_paths=5000, horizon=2.0, rng_seed=3))
    c = estimate_u(0.3, 5.0, oracle, FKConfig(n_paths=5000, horizon=2.0, rng_seed=4))
    assert (a.mean, a.standard_error) == (b.mean, b.standard_error)
    assert a.mean != c.mean


def test_standard_error_scaling():
    xs = np.arange(-30.0, 30.0, 0.1)
    u = np.vstack([np.exp(-xs**2 / 4), np.exp(-xs**2 / 4)])
    oracle = FieldOracle(np.array([0.0, 5.0]), xs[0], 0.1, u, u)
    ratios = []
    for s in range(3):
        small = estimate_u(0.0, 5.0, oracle, FKConfig(n_paths=4000, horizon=1.0, rng_seed=s))
        big = estimate_u(0.0, 5.0, oracle, FKConfig(n_paths=16000, horizon=1.0, rng_seed=s))
        ratios.append(small.standard_error / big.standard_error)
    assert np.mean(ratios) == pytest.approx(2.0, rel=0.2)


def test_coverage_errors():
    oracle = FieldOracle.constant(0.5, times=(2.0, 10.0), x_range=(-50, 50))
    with pytest.raises(CoverageError):
        estimate_u(0.0, 6.0, oracle, FKConfig(horizon=5.0))
    with pytest.raises(CoverageError):
        estimate_u(45.0, 10.0, oracle, FKConfig(horizon=5.0))
    with pytest.raises(ValueError):
        estimate_u(0.0, 3.0, oracle, FKConfig(horizon=5.0))
    with pytest.raises(CoverageError):
        estimate_u_from_initial(0.0, 5.0, Indicator(-1, 0), oracle, FKConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        FKConfig(n_paths=10)
    with pytest.raises(ValueError):
        FKConfig(path_dt=1.0, horizon=0.5)


def test_exit_flag():
    assert FKEstimate(0.5, 0.01, 1000, exit_fraction=2 * MAX_EXIT_FRACTION).flagged
    assert not FKEstimate(0.5, 0.01, 1000, exit_fraction=0.0).flagged


def test_zscore_examples():
    assert zscore(FKEstimate(1.0, 0.1, 100), 1.0) == 0.0
    assert zscore(FKEstimate(1.3, 0.1, 100), 1.0) == pytest.approx(3.0)
    with pytest.raises(ZeroDivisionError):
        zscore(FKEstimate(1.0, 0.0, 100), 0.5)


def test_probe_csv(tmp_path):
    row = {"x": 1.0, "t": 5.0, "grid_u": 0.5, "fk_mean": 0.51, "fk_se": 0.01, "z": 1.0,
           "n_paths": 100, "flagged": 0}
    write_probe_csv(tmp_path / "p.csv", [row])
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0].split(",") == PROBE_COLUMNS and len(lines) == 2


# -- against the solver -----------------------------------------------------------------


@pytest.fixture(scope="module")
def solver_run():
    dom = Domain.from_spacing(-60.0, 60.0, 0.05)
    times = tuple(round(0.1 * k, 10) for k in range(0, 101))
    cfg = SolverConfig(dt=0.02, T=10.0, snapshot_times=times)
    res = run(cfg, KERNEL, dom, Indicator(-20.0, 0.0))
    return res, FieldOracle.from_snapshots(list(res.snapshots.values()), KERNEL)


def test_from_initial_matches_solver(solver_run):
    res, oracle = solver_run
    grid = float(res.snapshots[5.0](0.0))
    est = estimate_u_from_initial(0.0, 5.0, Indicator(-20.0, 0.0), oracle,
                                  FKConfig(n_paths=100_000, rng_seed=7))
    assert abs(zscore(est, grid)) <= 3
    assert not est.flagged


def test_lookback_matches_solver_at_front(solver_run):
    res, oracle = solver_run
    x = front_location(res.final, 0.5)
    i = int(round(res.final.domain.index_of(x)))
    x = float(res.final.x[i])
    est = estimate_u(x, 10.0, oracle, FKConfig(n_paths=100_000, horizon=5.0, rng_seed=8))
    assert abs(zscore(est, float(res.final.values[i]))) <= 3


def test_path_step_bias_below_noise(solver_run):
    res, oracle = solver_run
    x = front_location(res.final, 0.5)
    a = estimate_u(x, 10.0, oracle, FKConfig(n_paths=100_000, path_dt=0.01, rng_seed=9))
    b = estimate_u(x, 10.0, oracle, FKConfig(n_paths=100_000, path_dt=0.005, rng_seed=9))
    assert abs(a.mean - b.mean) < a.standard_error
