import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nonlocal_fkpp.kernels import (
    KernelError,
    PowerTail,
    TruncGaussian,
    Uniform,
    audit_conditions,
    build_kernel,
    read_kernel_csv,
    tail_mass,
)

from oracles import sampled_powertail


def test_uniform_half_width_half_cell_kernel():
    k = build_kernel(Uniform(0.5), 0.1, 1.0)
    assert k.values.size == 11
    assert k.half_width_cells == 5
    # interior cells carry the density 1, the two cells on the jump carry the midpoint 1/2
    np.testing.assert_allclose(k.values[1:-1], 1.0, rtol=0, atol=1e-14)
    np.testing.assert_allclose(k.values[[0, -1]], 0.5, atol=1e-14)
    assert abs(k.discrete_mass - 1.0) < 1e-12


def test_powertail_matches_scalar_oracle():
    k = build_kernel(PowerTail(1.0, 1.0), 0.05, 200.0)
    ref = sampled_powertail(1.0, 1.0, 0.05, 200.0)
    assert abs(k.discrete_mass - 1.0) < 1e-12
    np.testing.assert_allclose(k.values, ref, rtol=1e-12, atol=0)
    # the core height, rescaled by the renormalisation that restores the discarded tail
    centre = k.values[k.half_width_cells]
    assert centre == pytest.approx(0.25 / (1.0 - k.discarded_mass), rel=1e-3)


def test_powertail_aggressive_truncation_rejected():
    with pytest.raises(KernelError, match="discards kernel mass"):
        build_kernel(PowerTail(1.0, 1.0), 0.05, 2.0)


@pytest.mark.parametrize("dx", [0.0, -0.1])
def test_nonpositive_dx(dx):
    with pytest.raises(KernelError):
        build_kernel(Uniform(0.5), dx, 1.0)


def test_dx_must_resolve_core():
    with pytest.raises(KernelError):
        build_kernel(Uniform(0.5), 0.5, 2.0)


def test_invalid_specs():
    with pytest.raises(KernelError):
        Uniform(0.0)
    with pytest.raises(KernelError):
        PowerTail(-1.0)
    with pytest.raises(KernelError):
        PowerTail(1.0, 0.0)
    with pytest.raises(KernelError):
        TruncGaussian(0.0, 1.0)


def test_tail_mass_examples():
    assert tail_mass(Uniform(0.5), 0.5) == 0.0
    assert tail_mass(Uniform(0.5), 0.0) == 0.5
    spec = PowerTail(1.0, 1.0)
    assert spec.tail_coefficient == pytest.approx(0.25)
    assert tail_mass(spec, 10.0) == pytest.approx(0.025, rel=1e-15)
    assert tail_mass(spec, 0.0) == pytest.approx(0.5, rel=1e-15)
    assert tail_mass(TruncGaussian(1.0, 4.0), 0.0) == pytest.approx(0.5, rel=1e-14)


@pytest.mark.parametrize("alpha", [0.5, 2.0 / 3.0, 1.0, 1.5])
def test_powertail_tail_slope(alpha):
    spec = PowerTail(alpha, 1.3)
    r = np.geomspace(2.6, 1e4, 30)
    lt = np.log([spec.tail_mass(x) for x in r])
    slopes = np.diff(lt) / np.diff(np.log(r))
    np.testing.assert_allclose(slopes, -alpha, atol=1e-9)


@pytest.mark.parametrize("spec", [Uniform(0.7), PowerTail(1.0, 1.0), TruncGaussian(0.8, 3.0)])
def test_tail_mass_monotone(spec):
    r = np.linspace(0.0, 50.0, 501)
    t = np.array([spec.tail_mass(x) for x in r])
    assert np.all(np.diff(t) <= 1e-15)


def test_tail_mass_matches_quadrature():
    from scipy.integrate import quad

    spec = PowerTail(0.8, 1.5)
    for r in (0.3, 1.5, 4.0, 40.0):
        q = quad(lambda x: float(spec.density(x)), r, np.inf, limit=400)[0]
        assert spec.tail_mass(r) == pytest.approx(q, rel=1e-7)


@given(
    family=st.sampled_from(["uniform", "power", "gauss"]),
    width=st.floats(0.3, 3.0),
    alpha=st.floats(0.6, 1.9),
    dx=st.sampled_from([0.025, 0.05, 0.1]),
)
def test_kernel_mass_and_symmetry(family, width, alpha, dx):
    if family == "uniform":
        spec, radius = Uniform(width), 2 * width
    elif family == "power":
        spec = PowerTail(alpha, width)
        radius = width * (2 * spec.tail_coefficient / width**alpha / 0.009) ** (1 / alpha)
        radius = min(max(radius, 4 * width), 400.0)
        if 2 * spec.tail_mass(radius) > 0.01:
            return
    else:
        spec, radius = TruncGaussian(width, 3 * width), 3 * width
    if dx >= spec.core:
        return
    k = build_kernel(spec, dx, radius)
    assert abs(k.discrete_mass - 1.0) < 1e-12
    assert np.all(k.values >= 0)
    assert np.max(np.abs(k.values - k.values[::-1])) <= 1e-15
    assert not k.values.flags.writeable


def test_audit_uniform():
    rep = audit_conditions(Uniform(0.5), 3.0)
    assert rep.upper_holds
    assert not rep.lower_holds
    assert rep.eta == pytest.approx(1.0)
    assert rep.sigma == 0.5
    assert rep.core_holds


def test_audit_powertail_matching_exponent():
    spec = PowerTail(1.0, 1.0)
    rep = audit_conditions(spec, 1.0, K=2.0)
    assert rep.upper_holds and rep.lower_holds
    # tail(r) = C / r and window(r) = C / (2 r) beyond the core
    assert rep.upper_constant == pytest.approx(spec.tail_coefficient, rel=1e-12)
    assert rep.lower_constant == pytest.approx(spec.tail_coefficient / 2, rel=1e-12)
    assert rep.eta == pytest.approx(spec.height)


def test_audit_powertail_wrong_exponent():
    rep = audit_conditions(PowerTail(1.0, 1.0), 3.0)
    assert not rep.upper_holds


def test_audit_rejects_bad_arguments():
    with pytest.raises(KernelError):
        audit_conditions(Uniform(1.0), 0.0)
    with pytest.raises(KernelError):
        audit_conditions(Uniform(1.0), 1.0, K=1.0)


def test_kernel_csv_round_trip(tmp_path):
    k = build_kernel(PowerTail(2.0 / 3.0, 1.0), 0.1, 2000.0)
    k.to_csv(tmp_path / "k.csv")
    x, v = read_kernel_csv(tmp_path / "k.csv")
    np.testing.assert_array_equal(v, k.values)
    np.testing.assert_allclose(x, k.offsets, atol=1e-12)
    assert math.isclose(k.discarded_mass, 2 * PowerTail(2.0 / 3.0, 1.0).tail_mass(2000.0))
