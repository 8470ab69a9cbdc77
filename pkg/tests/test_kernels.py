import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy import integrate

from nonlocal_mp import kernels as K
from nonlocal_mp.errors import HypothesisViolation, Inconclusive, UnsupportedShape


def test_total_mass_ball_2d():
    assert K.total_mass(K.unit_ball(2)) == pytest.approx(math.pi, rel=1e-12)


@pytest.mark.parametrize("rho", [1.5, 2.0, 3.0])
def test_cusp_mass_matches_closed_form(rho):
    # area of {|x2| <= |x1|^rho, |x1| <= 1} is 4/(rho+1)
    assert K.total_mass(K.cusp_kernel(2, rho)) == pytest.approx(4 / (rho + 1), rel=1e-10)


def test_cusp_mass_3d_by_quadrature():
    # volume of revolution: int_{-1}^{1} pi |t|^(2 rho) dt
    rho = 2.0
    assert K.total_mass(K.cusp_kernel(3, rho)) == pytest.approx(2 * math.pi / (2 * rho + 1), rel=1e-9)


def test_two_level_mass():
    assert K.total_mass(K.two_level_kernel()) == pytest.approx(3.0)


def test_mass_of_singular_kernel_is_infinite():
    assert math.isinf(K.total_mass(K.full_space_power(1, -2.0)))


def test_shell_mass_vs_quad():
    k = K.KernelSpec(2, (K.Cone((1.0, 0.0), math.pi / 6, 2.0),), -1.5)
    got = K.shell_mass(k, 0.3, 1.7).value
    frac = 1 / 3  # double cone of half-angle pi/6 in the plane
    ref, _ = integrate.quad(lambda s: 2 * math.pi * s * s ** -1.5 * frac, 0.3, 1.7)
    assert got == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("N,tau,verdict", [
    (1, -2.0, "finite"), (1, -3.0, "infinite"), (1, -0.5, "infinite"),
    (2, -3.5, "finite"), (3, -4.5, "finite"), (2, -4.0, "infinite"),
])
def test_levy_verdicts_full_space(N, tau, verdict):
    assert K.check_levy_integrability(K.full_space_power(N, tau)).verdict == verdict


def test_levy_value_fractional_1d():
    # int min(1, z^2) |z|^-2 dz = 2 + 2
    rep = K.check_levy_integrability(K.full_space_power(1, -2.0))
    assert rep.integral_estimate == pytest.approx(4.0, rel=1e-6)


def test_levy_cusp_threshold():
    # near 0 the integrand scales like s^(tau + 2 + N - 1 + (rho-1)(N-1))
    assert K.check_levy_integrability(K.cusp_kernel(2, 2.0, exponent=-4.8)).verdict == "finite"
    assert K.check_levy_integrability(K.cusp_kernel(2, 2.0, exponent=-5.2)).verdict == "infinite"


def test_levy_rejects_bad_args():
    with pytest.raises(ValueError):
        K.check_levy_integrability(K.unit_ball(1), tolerance=0)


def test_nontriviality():
    res = K.check_nontriviality(K.annulus_kernel(2), [0.5, 1.5])
    assert [r.positive for r in res] == [False, True]
    res = K.check_nontriviality(K.cusp_kernel(2, 4.0), [1e-3])
    assert res[0].positive and res[0].measure > 0


def test_nontriviality_union_sampled():
    k = K.KernelSpec(2, (K.Cone((1.0, 0.0), 0.2), K.Cusp(2.0, 1.0, axis=1)))
    res = K.check_nontriviality(k, [0.01], seed=3)
    assert res[0].positive


def test_eval_kernel_at_origin():
    assert math.isinf(K.eval_kernel(K.full_space_power(2, -3.0), np.zeros(2)))
    assert K.eval_kernel(K.unit_ball(2), np.zeros(2)) == 1.0
    assert K.eval_kernel(K.annulus_kernel(2), np.zeros(2)) == 0.0


def test_two_level_values():
    k = K.two_level_kernel()
    assert list(K.eval_kernel(k, np.array([0.1, 0.5, 0.7, 1.0, 1.2]))) == [2, 2, 1, 1, 0]


def test_sphere_profile_cone():
    k = K.KernelSpec(2, (K.Cone((0.0, 1.0), math.pi / 4),))
    val, err = K.sphere_profile(k, 2.0, n_samples=4000, with_error=True)
    assert abs(val - 2 * math.pi) <= err + 1e-12
    with pytest.raises(UnsupportedShape):
        K.sphere_profile(K.two_level_kernel(), 0.3)


def test_json_round_trip():
    k = K.KernelSpec(3, (K.Cusp(2.5, 0.5, axis=2), K.Annulus(0.1, 0.4)), -3.2,
                     K.RadialProfile((0.2, 1.0), (2.0, 0.5)))
    k2 = K.KernelSpec.from_json(k.dumps())
    assert k2 == k
    z = np.random.default_rng(0).normal(size=(50, 3)) * 0.3
    assert np.array_equal(k(z), k2(z))
    assert K.KernelSpec.from_json(K.full_space_power(1, -2.0).to_json()).is_full_space


def test_unknown_primitive():
    with pytest.raises(UnsupportedShape):
        K.KernelSpec.from_json({"dimension": 2, "shape": [{"type": "star"}]})


def test_envelope_bounds_and_limit():
    base = K.unit_ball(1)
    xs = K.XKernelSpec(base, K.PeriodicMultiplier((1.0,), 0.5), m_min=0.25)
    z = np.linspace(-1.2, 1.2, 25)[:, None]
    env = K.lower_envelope(xs, z, seed=1, n_x=512)
    j = K.eval_kernel(base, z)
    assert np.all(env.values >= xs.m_min * j - 1e-15)
    rng = np.random.default_rng(5)
    for x in rng.uniform(-5, 5, size=20):
        assert np.all(env.values <= xs(np.full_like(z, x), x + z) + 1e-15)
    assert np.max(np.abs(env.values - 0.5 * j)) < 1e-3


def test_declared_bounds_checked():
    with pytest.raises(HypothesisViolation):
        K.XKernelSpec(K.unit_ball(1), K.PeriodicMultiplier((1.0,), 0.5), m_min=0.75)


def test_j3_constant_multiplier_is_zero():
    xs = K.XKernelSpec(K.full_space_power(1, -2.0))
    assert K.check_J3(xs, n_x=2).estimate == 0.0


def test_j3_periodic_is_finite():
    xs = K.XKernelSpec(K.unit_ball(2, exponent=-2.5), K.PeriodicMultiplier((1.0, 0.0), 0.3))
    rep = K.check_J3(xs, n_x=4, n_directions=64)
    assert 0 < rep.estimate < math.inf


def test_j3_divergent_is_inconclusive():
    xs = K.XKernelSpec(K.unit_ball(1, exponent=-3.5), K.PeriodicMultiplier((1.0,), 0.3))
    with pytest.raises(Inconclusive):
        K.check_J3(xs, n_x=2, budget=60)


primitives = st.one_of(
    st.builds(K.Ball, st.floats(0.1, 3)),
    st.builds(lambda a, b: K.Annulus(a, a + b), st.floats(0, 2), st.floats(0.05, 2)),
    st.builds(lambda t, a: K.Cone((math.cos(t), math.sin(t)), a), st.floats(0, 6.3), st.floats(0.05, 1.57)),
    st.builds(K.Cusp, st.floats(1.0, 4.0), st.floats(0.2, 2.0), st.integers(0, 1)),
)


@settings(max_examples=40, deadline=None)
@given(st.lists(primitives, min_size=1, max_size=3), st.floats(-3.5, 1.0),
       st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_kernel_is_even_and_nonnegative(prims, tau, z):
    k = K.KernelSpec(2, tuple(prims), tau)
    z = np.asarray(z)
    a, b = K.eval_kernel(k, z), K.eval_kernel(k, -z)
    assert a == b and a >= 0


@settings(max_examples=40, deadline=None)
@given(primitives, st.floats(0.05, 4.0))
def test_exact_fraction_matches_sampling(prim, s):
    k = K.KernelSpec(2, (prim,))
    assume(all(abs(s - b) > 1e-6 for b in k.breakpoints()))
    exact = float(k.sphere_fraction(np.array([s]))[0])
    dirs = np.stack([np.cos(t := 2 * np.pi * (np.arange(20000) + 0.5) / 20000), np.sin(t)], 1)
    sampled = k.contains(s * dirs).mean()
    assert exact == pytest.approx(sampled, abs=2e-3)
