from collections import deque
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nonlocal_mp import discrete_form as D
from nonlocal_mp import kernels as K
from nonlocal_mp import maxprinciple as MP
from nonlocal_mp import propagation as P
from nonlocal_mp.errors import InsufficientPositivity


def bfs_components(form, mask):
    """Plain BFS over node pairs with positive weight (oracle)."""
    nodes = [tuple(v) for v in np.argwhere(mask.interior)]
    st_ = form.weights.stencil()
    Kx = (st_.shape[0] - 1) // 2
    label = {}
    comp = 0
    for s in nodes:
        if s in label:
            continue
        label[s] = comp
        dq = deque([s])
        while dq:
            a = dq.popleft()
            for b in nodes:
                if b in label:
                    continue
                z = np.subtract(b, a)
                if np.all(np.abs(z) <= Kx) and st_[tuple(z + Kx)] > 0:
                    label[b] = comp
                    dq.append(b)
        comp += 1
    return [label[v] for v in nodes], comp


def test_ball_kernel_single_component():
    g = D.Grid.cube(2, 0.25, 1.0)
    form = D.DiscreteForm.build(K.unit_ball(2), g, 1.5)
    sg = P.support_graph(form, D.DomainMask.ball(g, 0.9))
    assert sg.n_components == 1


def test_annulus_components_match_bfs():
    g = D.Grid.cube(1, 0.3, 3.0)
    form = D.DiscreteForm.build(K.annulus_kernel(1, 1.0, 2.0), g, 2.5)
    for half in (0.45, 1.0, 1.6):
        mask = D.DomainMask.box(g, [half])
        sg = P.support_graph(form, mask)
        labels, n = bfs_components(form, mask)
        assert sg.n_components == n and sg.labels.tolist() == labels
    assert P.support_graph(form, D.DomainMask.box(g, [0.45])).n_components == 3


def test_empty_mask():
    g = D.Grid.cube(1, 0.25, 1.0)
    form = D.DiscreteForm.build(K.unit_ball(1), g, 1.0)
    assert P.support_graph(form, D.DomainMask(g, np.zeros(g.shape, bool))).n_components == 0


@lru_cache(maxsize=None)
def base():
    k = K.full_space_power(1, -1.5)
    g = D.Grid.cube(1, 1 / 32, 1.5)
    return k, D.DiscreteForm.build(k, g, 2.0)


def test_positive_data_gives_positive_verdict():
    k, form = base()
    x = form.grid.coordinates()[..., 0]
    mask = D.DomainMask.ball(form.grid, 0.7)
    p = MP.ProblemData(form, mask, -0.5, 0.0, np.where(x > 1.0, 1.0, 0.0), k)
    u = MP.solve_dirichlet(p)
    rep = P.strong_mp_check(p, u)
    assert rep.valid and rep.verdicts == ["strictly-positive"]


def test_zero_is_identically_small():
    k, form = base()
    mask = D.DomainMask.ball(form.grid, 0.7)
    p = MP.ProblemData(form, mask, 0.0, 0.0, 0.0, k)
    rep = P.strong_mp_check(p, np.zeros(form.grid.shape))
    assert rep.verdicts == ["identically-small"]


def test_fake_mixed_function_is_caught():
    # a zero node inside a positive block fails the nodal inequality there
    k, form = base()
    mask = D.DomainMask.ball(form.grid, 0.7)
    u = mask.interior.astype(float)
    u[form.grid.center_index()] = 0.0
    p = MP.ProblemData(form, mask, -1.0, 0.0, 0.0, k)
    rep = P.strong_mp_check(p, u)
    assert not rep.valid  # the zero node is not a supersolution point
    p2 = MP.ProblemData(form, mask, 0.0, -1e3, 0.0, k)
    assert not P.strong_mp_check(p2, u).valid  # negative g is rejected


def test_annulus_negative_control():
    p, u, rep = P.annulus_negative_control()
    assert rep.valid and not rep.mixed
    assert "identically-small" in rep.verdicts and "strictly-positive" in rep.verdicts
    assert MP.verify_supersolution(p, u).min_slack >= -1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32))
def test_dichotomy_on_solutions(seed):
    p, lam = MP.random_problem(seed)
    p.c = -np.abs(p.c)
    p.g = np.abs(p.g) * (seed % 3 != 0)
    p.exterior_data = np.abs(p.exterior_data) * ~p.mask.interior
    u = MP.solve_dirichlet(p, lam=lam)
    rep = P.strong_mp_check(p, u)
    assert rep.valid and not rep.mixed


def test_generators_ball():
    gens = P.choose_generators(K.unit_ball(2), 0.25)
    norms = np.linalg.norm(gens.vectors, axis=1)
    assert np.all((norms >= 0.25) & (norms <= 0.5)) and gens.conditioning >= 1e-2
    assert gens.theta == 1.0 and not gens.flagged


def test_generators_cusp_near_axis():
    gens = P.choose_generators(K.cusp_kernel(), 0.1)
    v = gens.vectors
    assert np.all(np.abs(v[:, 1]) <= v[:, 0] ** 2)
    assert 0 < gens.conditioning < 0.5


def test_generators_need_positivity_near_zero():
    with pytest.raises(InsufficientPositivity):
        P.choose_generators(K.annulus_kernel(2, 1.0, 2.0), 0.25)


@lru_cache(maxsize=None)
def ball_cert():
    return P.build_ssp_chain(K.unit_ball(2), [0, 0], [3, 0], 0.25)


def test_ball_chain_round_trip():
    cert = ball_cert()
    assert cert.n_links >= 6 and min(cert.kappa) > 0
    rep = P.verify_certificate(cert, K.unit_ball(2), seed=7)
    assert rep.ok
    again = P.PositivityCertificate.from_json(cert.dumps())
    assert P.verify_certificate(again).ok


def test_trivial_chain():
    cert = P.build_ssp_chain(K.unit_ball(2), [1.0, 2.0], [1.0, 2.0], 0.25)
    assert cert.n_links == 0 and len(cert.points) == 1
    assert P.verify_certificate(cert)


def test_cusp_chain():
    cert = P.build_ssp_chain(K.cusp_kernel(), [0, 0], [0, 1.0], 0.1)
    assert cert.n_links > 20
    assert P.verify_certificate(cert, seed=3).ok


def test_corruption_detected():
    cert = ball_cert()
    j = 3
    shrunk = P.PositivityCertificate.from_json(cert.to_json())
    shrunk.k_radii[j - 1] = 1e-9
    rep = P.verify_certificate(shrunk)
    assert not rep.ok and rep.failures[0][0] == j
    moved = P.PositivityCertificate.from_json(cert.to_json())
    moved.points[j] += 0.01
    assert {f[0] for f in P.verify_certificate(moved).failures} >= {j}
    inflated = P.PositivityCertificate.from_json(cert.to_json())
    inflated.kappa[j - 1] *= 10
    rep = P.verify_certificate(inflated)
    assert [f[0] for f in rep.failures] == [j]


def test_link_coupling_against_exact_area():
    # j = 1 on B_1 and |x - y| < 1 throughout: the integral is the area of the ball
    est, err = P.link_coupling(K.unit_ball(2), [[0.3, 0.0]], [0.0, 0.0], 0.1)
    assert abs(est[0] - np.pi * 0.01) <= err[0]
