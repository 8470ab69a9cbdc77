import math
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nonlocal_mp import discrete_form as D
from nonlocal_mp import kernels as K
from nonlocal_mp import maxprinciple as MP
from nonlocal_mp import spectral as S
from nonlocal_mp.errors import HypothesisViolation


@lru_cache(maxsize=None)
def setup_1d():
    k = K.full_space_power(1, -1.5)
    g = D.Grid.cube(1, 1 / 32, 1.5)
    form = D.DiscreteForm.build(k, g, 2.0)
    mask = D.DomainMask.ball(g, 0.75)
    return k, form, mask, S.lambda1(form, mask).value


def problem(c=0.0, g=0.0, ext=0.0):
    k, form, mask, _ = setup_1d()
    return MP.ProblemData(form, mask, c, g, ext, k)


def test_exact_solution_has_zero_slack():
    p = problem(c=0.3, g=1.0, ext=0.5)
    u = MP.solve_dirichlet(p)
    rep = MP.verify_supersolution(p, u)
    assert rep.ok and abs(rep.min_slack) < 1e-8


def test_plus_ground_state_is_supersolution():
    p = problem(c=0.3, g=1.0)
    u = MP.solve_dirichlet(p)
    lam1 = S.lambda1(p.form, p.mask)
    phi = np.abs(lam1.vector)  # ground state of the c-shifted operator (c constant)
    rep = MP.verify_supersolution(p, u + 0.7 * phi)
    assert rep.ok and rep.min_slack >= -1e-9


def test_pushed_down_node_is_localized():
    p = problem(g=1.0)
    u = MP.solve_dirichlet(p)
    node = np.argwhere(p.mask.interior)[5]
    u2 = u.copy()
    u2[tuple(node)] -= 0.1  # lowers (Iu)(x) - c u(x) by (d(x) - c) * 0.1
    rep = MP.verify_supersolution(p, u2)
    assert not rep.ok and rep.worst_node == tuple(node)


def test_exterior_mismatch_rejected():
    p = problem(ext=1.0)
    with pytest.raises(ValueError):
        MP.verify_supersolution(p, np.zeros(p.form.grid.shape))


def test_constant_data_stays_between_bounds():
    p = problem(ext=1.0)
    u = MP.solve_dirichlet(p)
    assert u.min() >= -1e-12 and u.max() <= 1 + 1e-12


def test_nonnegative_source_gives_nonnegative_solution():
    p = problem(g=np.linspace(0, 1, setup_1d()[1].grid.size))
    u = MP.solve_dirichlet(p)
    assert u.min() >= -1e-12


def test_reflection_symmetry():
    k, form, mask, _ = setup_1d()
    x = form.grid.coordinates()[..., 0]
    p = MP.ProblemData(form, mask, 0.2 * np.cos(3 * x), 1 + x ** 2, 0.0, k)
    u = MP.solve_dirichlet(p)
    assert np.allclose(u, u[::-1], atol=1e-9 * np.abs(u).max())


def test_coercivity_guard():
    lam = setup_1d()[3]
    with pytest.raises(HypothesisViolation):
        MP.solve_dirichlet(problem(c=1.01 * lam, g=1.0))
    with pytest.raises(HypothesisViolation):
        MP.weak_mp_bound_check(problem(c=lam), np.zeros(setup_1d()[1].grid.shape))


def test_weak_mp_bound_signed_source():
    k, form, mask, lam = setup_1d()
    x = form.grid.coordinates()[..., 0]
    p = MP.ProblemData(form, mask, 0.5 * lam, np.sin(4 * x), 0.0, k)
    u = MP.solve_dirichlet(p, lam=lam)
    rep = MP.weak_mp_bound_check(p, u, lam=lam)
    assert rep.lhs > 0 and rep.ok and rep.tightness <= 1


def test_weak_mp_trivial_for_nonnegative_source():
    p = problem(c=-1.0, g=2.0)
    rep = MP.weak_mp_bound_check(p, MP.solve_dirichlet(p))
    assert rep.lhs == 0 and rep.ok


def test_hypothesis_is_sharp():
    # c slightly above Lambda_1: nonnegative data can produce a negative solution
    k, form, mask, lam = setup_1d()
    p = MP.ProblemData(form, mask, 1.02 * lam, 1.0, 0.0, k)
    u = MP.solve_dirichlet(p, check_coercivity=False)
    assert u.min() < 0


def test_small_volume_radius_examples():
    ball = K.unit_ball(2)
    assert MP.small_volume_radius(ball, 0.0).r == 2.0
    br = MP.small_volume_radius(ball, 2.0)
    assert br.r == pytest.approx(math.pi - 2, rel=1e-5) and br.r < math.pi - 2 < br.r_fail
    with pytest.raises(HypothesisViolation):
        MP.small_volume_radius(ball, 4.0)


def test_regional_single_node():
    k, form, _, _ = setup_1d()
    m = D.DomainMask.single_cell(form.grid)
    ct = MP.regional_to_full(form, m, 0.25)
    assert ct[form.grid.center_index()] == pytest.approx(0.25 + form.weights.degree, rel=1e-13)


def test_regional_deep_interior():
    k = K.unit_ball(1)
    g = D.Grid.cube(1, 1 / 16, 3.0)
    form = D.DiscreteForm.build(k, g, 1.0)
    mask = D.DomainMask.ball(g, 2.9)
    ct = MP.regional_to_full(form, mask, 0.0)
    # tail vanishes for a compactly supported kernel inside the truncation radius
    assert ct[g.center_index()] == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32))
def test_regional_identity(seed):
    rng = np.random.default_rng(seed)
    k, form, mask, _ = setup_1d()
    u = rng.normal(size=form.grid.shape) * mask.interior
    c = rng.normal(size=form.grid.shape)
    g = rng.normal(size=form.grid.shape)
    regional = MP.regional_apply(form, mask, u) - c * u - g
    p = MP.ProblemData(form, mask, MP.regional_to_full(form, mask, c), g, 0.0, k)
    full = MP.nodal_residual(p, u)
    m = mask.interior
    assert np.allclose(full[m], regional[m], rtol=0, atol=1e-11 * (1 + np.abs(regional[m]).max()))


def test_random_problem_and_io(tmp_path):
    p, lam = MP.random_problem(3, signed_g=True)
    assert p.c_plus_norm < lam
    MP.save_problem(tmp_path / "inst.json", p)
    q = MP.load_problem(tmp_path / "inst.json")
    assert np.array_equal(q.mask.interior, p.mask.interior)
    assert np.array_equal(q.g, p.g) and q.form.weights.degree == p.form.weights.degree
