import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nonlocal_fkpp.kernels import PowerTail, Uniform, build_kernel
from nonlocal_fkpp.solver import (
    BlowUpError,
    Custom,
    Domain,
    HalfLine,
    HeatFlow,
    Indicator,
    ScalarField,
    SolverConfig,
    SolverError,
    Stepper,
    convolve,
    heat_kernel,
    initial_field,
    reference_solve,
    run,
    step,
)

from oracles import gaussian, logistic, naive_convolution

UNIFORM = build_kernel(Uniform(0.5), 0.05, 0.5)


def field(domain, values, t=0.0):
    return ScalarField(domain, np.asarray(values, dtype=float), t)


# -- convolution -----------------------------------------------------------------


def test_convolution_of_step_is_half_at_the_step():
    dom = Domain(-10.0, 10.0, 400)  # x = 0 is a cell boundary
    u = HalfLine(0.0).sample(dom)
    c = convolve(UNIFORM, field(dom, u))
    assert c(0.0) == pytest.approx(0.5, abs=1e-14)


def test_convolution_of_constant():
    dom = Domain(-10.0, 10.0, 400)
    c = convolve(UNIFORM, field(dom, np.full(dom.n, 0.7)))
    inner = dom.x < dom.x_hi - UNIFORM.radius - dom.dx
    np.testing.assert_allclose(c.values[inner], 0.7, rtol=1e-14)
    assert c.values[-1] < 0.7


def test_convolution_matches_naive_short_kernel():
    rng = np.random.default_rng(1)
    dom = Domain(0.0, 6.4, 64)
    k = build_kernel(Uniform(0.4), 0.1, 0.4)
    assert k.values.size == 9
    u = rng.random(64)
    got = convolve(k, field(dom, u)).values
    np.testing.assert_allclose(got, naive_convolution(k.values, u, 0.1), rtol=0, atol=1e-12)


def test_convolution_matches_naive_fft_path():
    rng = np.random.default_rng(2)
    dom = Domain(0.0, 60.0, 600)
    k = build_kernel(PowerTail(1.0, 1.0), 0.1, 55.0)
    assert k.values.size > 129
    u = rng.random(600)
    got = convolve(k, field(dom, u)).values
    np.testing.assert_allclose(got, naive_convolution(k.values, u, 0.1), rtol=0, atol=1e-12)


def test_convolution_grid_mismatch():
    dom = Domain(0.0, 10.0, 100)
    with pytest.raises(ValueError, match="does not match"):
        convolve(UNIFORM, field(dom, np.zeros(100)))


# -- single steps ----------------------------------------------------------------


def test_logistic_exactness():
    dom = Domain(-20.0, 20.0, 800)
    n = round(math.log(3.0) / 0.01)
    dt = math.log(3.0) / n
    fld = field(dom, np.full(dom.n, 0.5))
    for _ in range(n):
        fld = step(fld, UNIFORM, dt)
    inner = np.abs(dom.x) < 5
    exact = logistic(0.5, math.log(3.0))
    assert exact == pytest.approx(0.75)
    assert np.max(np.abs(fld.values[inner] - 0.75)) <= 1e-3


def test_logistic_second_order():
    dom = Domain(-10.0, 10.0, 400)
    errs = []
    for n in (16, 32):
        dt = 1.0 / n
        fld = field(dom, np.full(dom.n, 0.2))
        for _ in range(n):
            fld = step(fld, UNIFORM, dt)
        errs.append(abs(fld.values[100] - logistic(0.2, 1.0)))
    assert 3.5 < errs[0] / errs[1] < 4.5


@pytest.mark.parametrize("method", ["kernel", "spectral", "discrete"])
def test_pure_diffusion_of_gaussian(method):
    dom = Domain(-15.0, 15.0, 600)
    v, dt = 1.0, 0.1
    u0 = gaussian(dom.x, 0.0, v)
    out = step(field(dom, u0), UNIFORM, dt, reaction=False, diffusion=method)
    tol = 1e-8 if method != "discrete" else 1e-4  # 3-point Laplacian has O(dx^2) error
    assert np.max(np.abs(out.values - gaussian(dom.x, 0.0, v + dt))) <= tol


def test_zero_is_fixed():
    dom = Domain(-5.0, 5.0, 200)
    out = step(field(dom, np.zeros(dom.n)), UNIFORM, 0.05)
    assert not out.values.any()


def test_step_rejects_large_dt():
    dom = Domain(-5.0, 5.0, 200)
    with pytest.raises(ValueError):
        step(field(dom, np.zeros(dom.n)), UNIFORM, 0.5)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_reported():
    dom = Domain(-5.0, 5.0, 200)
    u = np.zeros(dom.n)
    u[100] = np.inf
    with pytest.raises(BlowUpError) as exc:
        step(field(dom, u), UNIFORM, 0.05, clamp_negative=False)
    assert exc.value.time == pytest.approx(0.05)


def test_clamp_audit_rejects_ringing():
    dom = Domain(-5.0, 5.0, 200)
    u = Indicator(-1.0, 1.0).sample(dom)
    with pytest.raises(SolverError, match="clamp tolerance"):
        step(field(dom, u), UNIFORM, 0.001, diffusion="spectral")


def test_under_resolved_heat_kernel_rejected():
    with pytest.raises(ValueError, match="under-resolved"):
        heat_kernel(1e-4, 0.05)


def test_heat_weights_are_positive_and_unit_mass():
    for method in ("kernel", "discrete"):
        h = HeatFlow(0.01, 0.05, method)
        assert np.all(h.weights > 0)
        assert h.weights.sum() == pytest.approx(1.0, abs=1e-12)


@given(
    seed=st.integers(0, 2**31),
    dt=st.sampled_from([0.02, 0.05, 0.1]),
    scale=st.floats(0.0, 5.0),
)
def test_positivity_and_finiteness(seed, dt, scale):
    rng = np.random.default_rng(seed)
    dom = Domain(-5.0, 5.0, 200)
    u = scale * rng.random(dom.n)
    u[150:] = 0.0
    fld = field(dom, u)
    for _ in range(5):
        fld = step(fld, UNIFORM, dt)
    assert np.all(fld.values >= 0) and np.all(np.isfinite(fld.values))
    assert fld.time == pytest.approx(5 * dt)


# -- run -------------------------------------------------------------------------


def small_problem(T=5.0, **kw):
    dom = Domain.from_spacing(-20.0, 20.0, 0.05)
    cfg = SolverConfig(dt=0.02, T=T, **kw)
    return dom, cfg


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(dt=0.5, T=1.0)
    with pytest.raises(ValueError):
        SolverConfig(dt=0.01, T=1.0, snapshot_times=(0.5, 2.0))
    with pytest.raises(ValueError):
        SolverConfig(dt=0.01, T=1.0, snapshot_times=(0.5, 0.2))


def test_run_snapshots_observers_and_determinism():
    dom, cfg = small_problem(T=2.0, snapshot_times=(0.5, 1.0, 2.0))
    seen = []
    a = run(cfg, UNIFORM, dom, Indicator(-5.0, 0.0), [lambda f: seen.append(f.time)])
    b = run(cfg, UNIFORM, dom, Indicator(-5.0, 0.0))
    assert sorted(a.snapshots) == [0.5, 1.0, 2.0]
    assert seen[0] == 0.0 and seen[-1] == pytest.approx(2.0)
    assert len(seen) == 21  # t = 0 and every 5 steps of 0.02
    assert a.steps == 100 and not a.aborted
    np.testing.assert_array_equal(a.final.values, b.final.values)
    assert a.snapshots[2.0].values.tobytes() == a.final.values.tobytes()
    assert 1.0 <= a.running_max < 1.01


def test_active_prefix_matches_plain_steps():
    dom, cfg = small_problem(T=1.0)
    res = run(cfg, UNIFORM, dom, Indicator(-5.0, 0.0))
    fld = initial_field(dom, Indicator(-5.0, 0.0))
    for _ in range(50):
        fld = step(fld, UNIFORM, 0.02)
    np.testing.assert_allclose(res.final.values, fld.values, rtol=0, atol=1e-13)


def test_stepper_grows_active_region():
    dom = Domain.from_spacing(-10.0, 500.0, 0.05)
    st_ = Stepper(UNIFORM, dom, 0.02)
    u = Indicator(-5.0, 0.0).sample(dom)
    assert st_._active(u) < dom.n
    out = st_.advance(u, 0.0, 10)
    assert out.shape == (dom.n,)


def test_translation_equivariance():
    dom, cfg = small_problem(T=2.0)
    k = 40
    a = run(cfg, UNIFORM, dom, Indicator(-8.0, -4.0)).final
    b = run(cfg, UNIFORM, dom, Indicator(-8.0 + k * dom.dx, -4.0 + k * dom.dx)).final
    sl = slice(100, 600)
    np.testing.assert_allclose(b.values[sl.start + k : sl.stop + k], a.values[sl], atol=1e-13)


def test_diffusion_operators_agree_on_fronts():
    dom, cfg = small_problem(T=5.0)
    a = run(cfg, UNIFORM, dom, Indicator(-10.0, 0.0)).final
    cfg_d = SolverConfig(dt=0.02, T=5.0, diffusion="discrete")
    b = run(cfg_d, UNIFORM, dom, Indicator(-10.0, 0.0)).final
    assert np.max(np.abs(a.values - b.values)) < 1e-3


def test_exhaustion_aborts_with_partial_results():
    dom = Domain.from_spacing(-10.0, 20.0, 0.05)
    cfg = SolverConfig(dt=0.02, T=30.0, snapshot_times=(1.0, 29.0), exhaustion_guard=5.0)

    def rightmost(f):
        nz = np.flatnonzero(f.values >= 0.1)
        return f.x[nz[-1]] if nz.size else -np.inf

    res = run(cfg, UNIFORM, dom, Indicator(-5.0, 0.0), exhaustion_probe=rightmost)
    assert res.aborted and "right boundary" in res.abort_reason
    assert 1.0 in res.snapshots and 29.0 not in res.snapshots
    assert res.final.time < 30.0


def test_initial_conditions():
    dom = Domain(-5.0, 5.0, 100)
    v = Indicator(-1.0, 1.0, 2.0).sample(dom)
    assert v.max() == 2.0 and v[dom.x > 1.0].sum() == 0
    h = HalfLine(0.0).sample(dom)
    assert h[dom.x <= 0].min() == 1.0 and h[dom.x > 0].max() == 0.0
    with pytest.raises(ValueError):
        Custom(tuple(-np.ones(100))).sample(dom)
    with pytest.raises(ValueError):
        Custom((1.0, 2.0)).sample(dom)


def test_domain_validation():
    with pytest.raises(ValueError):
        Domain(1.0, 0.0, 100)
    with pytest.raises(ValueError):
        Domain(0.0, 1.0, 8)
    d = Domain.from_spacing(-1.0, 1.0, 0.1)
    assert d.n == 20 and d.dx == pytest.approx(0.1)


# -- reference -----------------------------------------------------------------------


def test_reference_limits():
    dom = Domain.from_spacing(-120.0, 120.0, 0.05)
    with pytest.raises(ValueError):
        reference_solve(UNIFORM, dom, Indicator(-1, 0), 1.0)
    small = Domain.from_spacing(-5.0, 5.0, 0.05)
    with pytest.raises(ValueError):
        reference_solve(UNIFORM, small, Indicator(-1, 0), 11.0)
    with pytest.raises(ValueError):
        reference_solve(UNIFORM, small, Indicator(-1, 0), 1.0, dt_ref=0.01)


def test_reference_zero_and_logistic():
    dom = Domain.from_spacing(-5.0, 5.0, 0.05)
    z = reference_solve(UNIFORM, dom, Custom(tuple(np.zeros(dom.n))), 1.0)
    assert not z.values.any()
    half = Custom(tuple(np.full(dom.n, 0.5)))
    ref = reference_solve(UNIFORM, dom, half, math.log(3.0))
    inner = np.abs(dom.x) < 1.0
    assert np.max(np.abs(ref.values[inner] - 0.75)) < 1e-3
    n = round(math.log(3.0) / 0.01)
    cfg = SolverConfig(dt=math.log(3.0) / n, T=math.log(3.0))
    sol = run(cfg, UNIFORM, dom, half).final
    assert np.max(np.abs(sol.values[inner] - 0.75)) < 1e-3
