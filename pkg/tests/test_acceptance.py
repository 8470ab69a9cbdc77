"""Acceptance criteria, one test each, at their stated tolerances and time budgets.

Every test prints a single line ``ACCEPTANCE <k> PASS|FAIL ...`` whatever the
outcome, then asserts.
"""
import math
import time
from functools import lru_cache

import numpy as np
import pytest

from nonlocal_mp import discrete_form as D
from nonlocal_mp import kernels as K
from nonlocal_mp import lattice as L
from nonlocal_mp import maxprinciple as MP
from nonlocal_mp import propagation as P
from nonlocal_mp import spectral as S


@pytest.fixture
def announce(capsys):
    def _announce(k, title, ok, elapsed, budget, detail=""):
        within = elapsed <= budget
        status = "PASS" if ok and within else "FAIL"
        with capsys.disabled():
            print(f"\nACCEPTANCE {k:>2} {status} {title}: {detail} [{elapsed:.1f}s / {budget}s]")
        assert ok, detail
        assert within, f"runtime {elapsed:.1f}s exceeds {budget}s"
    return _announce


def test_01_lattice_confinement(announce):
    t0 = time.perf_counter()
    bad, oracle_bad, worst = [], [], 0.0
    for N in (1, 2, 3, 4):
        rng = np.random.default_rng(1000 + N)
        for i in range(1000):
            lat, rho, a, b = L.random_instance(rng, N)
            R = 4.0 ** (N - 1) * rho
            path = L.construct_path(lat, a, b, rho)
            if not L.verify_path(path, lat, a, R, start=a, end=b):
                bad.append((N, i))
            if L.bfs_confined_path(lat, a, b, R) is None:
                oracle_bad.append((N, i))
            worst = max(worst, path.meta["excursion_ratio"])
    ok = not bad and not oracle_bad
    announce(1, "lattice confinement", ok, time.perf_counter() - t0, 60,
             f"4000 instances, {len(bad)} confinement failures, {len(oracle_bad)} oracle "
             f"disagreements, max excursion ratio {worst:.3f}")


def test_02_lattice_rounding(announce):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    fails = 0
    for i in range(10_000):
        N = 1 + i % 4
        V = rng.normal(size=(N, N))
        while abs(np.linalg.det(V)) < 1e-3:
            V = rng.normal(size=(N, N))
        lat = L.Lattice(V)
        x0 = rng.uniform(-100, 100, size=N)
        v = L.lattice_point_in_ball(lat, x0, lat.gram_scale)
        if np.linalg.norm(v - x0) > 0.5 * lat.gram_scale * (1 + 1e-12):
            fails += 1
    announce(2, "lattice rounding", fails == 0, time.perf_counter() - t0, 5,
             f"10000 pairs, {fails} outside half the generator length sum")


def test_03_rearrangement_bound(announce):
    t0 = time.perf_counter()
    worst = 0.0
    for N in (1, 2):
        k = K.unit_ball(N)
        mass = K.ball_volume(N)
        for r in np.linspace(0.01, mass, 25):
            lb = S.lambda1_lower_bound(k, r)
            worst = max(worst, abs(lb - (mass - r)) / max(mass - r, 1e-300) if r < mass else lb)
    two = S.lambda1_lower_bound(K.two_level_kernel(), 0.5)
    err2 = abs(two - 2.0) / 2.0
    ok = worst <= 1e-3 and err2 <= 1e-3
    announce(3, "rearrangement bound", ok, time.perf_counter() - t0, 10,
             f"ball max rel err {worst:.2e}, two-level value {two!r} (rel err {err2:.1e})")


def test_04_small_volume_limit(announce):
    t0 = time.perf_counter()
    h, trunc = 1 / 64, 4.0
    lines, ok = [], True
    for name, k in [("ball N=1", K.unit_ball(1)), ("two-level", K.two_level_kernel()),
                    ("ball N=2", K.unit_ball(2)), ("cusp", K.cusp_kernel())]:
        rows = S.small_volume_limit_check(k, [h ** k.dimension, 0.1, 0.5, 1.0], h, trunc)
        single = rows[0]
        rel_slack = single.slack / single.total_mass
        c1 = abs(single.lambda1 - single.total_mass) <= single.slack and rel_slack <= 0.02
        c2 = all(r.bound_ok for r in rows[1:])
        ok &= c1 and c2
        lines.append(f"{name}: |L1-mass|={abs(single.limit_gap):.2e} slack={rel_slack:.2%} "
                     f"bounds {'ok' if c2 else 'VIOLATED'}")
    announce(4, "small-volume limit", ok, time.perf_counter() - t0, 120, "; ".join(lines))


def test_05_eigen_correctness(announce):
    t0 = time.perf_counter()
    catalog = [K.full_space_power(1, -2.0), K.full_space_power(1, -1.5), K.unit_ball(1),
               K.two_level_kernel(), K.unit_ball(2), K.cusp_kernel(), K.full_space_power(2, -3.0)]
    worst, n_max = 0.0, 0
    for seed in range(50):
        rng = np.random.default_rng(500 + seed)
        k = catalog[seed % len(catalog)]
        N = k.dimension
        h = rng.choice([1 / 40, 1 / 60, 1 / 80]) if N == 1 else rng.choice([1 / 8, 1 / 10, 1 / 12])
        form = _form(k, float(h), 1.2)
        x = form.grid.coordinates()
        c = rng.uniform(-0.3, 0.3, size=N)
        mask = D.DomainMask(form.grid, np.linalg.norm(x - c, axis=-1) <= rng.uniform(0.3, 0.65))
        if N == 1:
            mask = D.DomainMask(form.grid, mask.interior & (np.abs(x[..., 0]) < 1))
        n_max = max(n_max, mask.count)
        lam = S.lambda1(form, mask, rel_tol=1e-8, seed=seed).value
        ref = S.lambda1_dense(form, mask)
        worst = max(worst, abs(lam - ref) / ref)
    ok = worst <= 1e-8 and n_max <= 200
    announce(5, "eigenvalue correctness", ok, time.perf_counter() - t0, 30,
             f"50 cases up to {n_max} nodes, max rel err {worst:.2e}")


@lru_cache(maxsize=None)
def _form(kernel, h, half, trunc=2.0):
    return D.DiscreteForm.build(kernel, D.Grid.cube(kernel.dimension, h, half), trunc)


def test_06_form_inequalities(announce):
    t0 = time.perf_counter()
    forms = [(_form(K.unit_ball(2, exponent=-3.0), 0.2, 1.0, 0.8), 0.7),
             (_form(K.full_space_power(1, -1.5), 1 / 32, 1.5), 0.8),
             (_form(K.cusp_kernel(), 0.125, 1.0, 1.0), 0.6)]
    counts = {"cauchy-schwarz": 0, "rho(u+-)": 0, "E(u+,u-)": 0, "E(u-,u-)": 0}
    worst_cs = 0.0
    for i in range(1000):
        f, rad = forms[i % len(forms)]
        g = f.grid
        m = D.DomainMask.ball(g, rad)
        rng = np.random.default_rng(6000 + i)
        u = rng.normal(size=g.shape) * rng.uniform(0.1, 10)
        v = np.where(m.interior, rng.normal(size=g.shape), 0.0)
        r = f.rho(u, m)
        cs = (2 + math.sqrt(2)) * math.sqrt(r * f.energy(v))
        worst_cs = max(worst_cs, f.abs_pairing(u, v) / cs)
        if f.abs_pairing(u, v) > cs * (1 + 1e-10):
            counts["cauchy-schwarz"] += 1
        up, um = np.maximum(u, 0), np.maximum(-u, 0)
        if f.rho(up, m) > r * (1 + 1e-10) or f.rho(um, m) > r * (1 + 1e-10):
            counts["rho(u+-)"] += 1
        if f.energy(up, um) > 1e-10 * f.energy(u):
            counts["E(u+,u-)"] += 1
        w = np.where(m.interior, u, np.abs(u))
        wm = np.maximum(-w, 0)
        if f.energy(wm, wm) > -f.energy(w, wm) + 1e-10 * f.energy(w):
            counts["E(u-,u-)"] += 1
    ok = not any(counts.values())
    announce(6, "form inequalities", ok, time.perf_counter() - t0, 30,
             f"1000 pairs, violations {counts}, max CS ratio {worst_cs:.3f}")


def test_07_weak_mp(announce):
    t0 = time.perf_counter()
    worst_min, bad_sign, tight = 0.0, 0, []
    for s in range(100):
        p, lam = MP.random_problem(7000 + s)
        u = MP.solve_dirichlet(p, lam=lam)
        if not MP.verify_supersolution(p, u, 1e-8).ok:
            bad_sign += 1
        worst_min = min(worst_min, u.min() / max(1.0, np.abs(u).max()))
    bad_bound = 0
    for s in range(100):
        p, lam = MP.random_problem(7500 + s, signed_g=True)
        u = MP.solve_dirichlet(p, lam=lam)
        rep = MP.weak_mp_bound_check(p, u, lam=lam)
        bad_bound += not rep.ok
        tight.append(rep.tightness)
    ok = worst_min >= -1e-8 and bad_bound == 0 and bad_sign == 0
    announce(7, "weak maximum principle", ok, time.perf_counter() - t0, 120,
             f"min u/max(1,|u|) {worst_min:.1e} over 100 g>=0 instances; {bad_bound}/100 signed "
             f"instances violate the L2 bound (max tightness {max(tight):.3f})")


def test_08_strong_mp(announce):
    t0 = time.perf_counter()
    mixed, invalid, used, seed = 0, 0, 0, 0
    while used < 200:
        p, lam = MP.random_problem(8000 + seed)
        seed += 1
        graph = P.support_graph(p.form, p.mask)
        if graph.n_components != 1:
            continue
        p.c = -np.abs(p.c)
        p.g = np.abs(p.g) * (seed % 4 != 0)
        p.exterior_data = np.abs(p.exterior_data) * ~p.mask.interior
        u = MP.solve_dirichlet(p, lam=lam)
        rep = P.strong_mp_check(p, u, graph=graph)
        invalid += not rep.valid
        mixed += rep.mixed
        used += 1
    pc, uc, control = P.annulus_negative_control()
    control_ok = (control.valid and not control.mixed
                  and {"identically-small", "strictly-positive"} <= set(control.verdicts)
                  and MP.verify_supersolution(pc, uc).min_slack >= 0)
    ok = mixed == 0 and invalid == 0 and control_ok
    announce(8, "strong MP dichotomy", ok, time.perf_counter() - t0, 180,
             f"200 connected instances ({seed} drawn): {mixed} mixed, {invalid} invalid; annulus "
             f"control verdicts {control.verdicts}")


def _corrupt(cert, rng):
    bad = P.PositivityCertificate.from_json(cert.to_json())
    j = int(rng.integers(1, cert.n_links + 1))
    kind = ["kappa", "radius", "point"][int(rng.integers(3))]
    if kind == "kappa":
        bad.kappa[j - 1] *= 10.0
    elif kind == "radius":
        bad.k_radii[j - 1] *= 1e-6
    else:
        bad.points[j] += 0.05 * cert.eps1
    return bad, j, kind


def test_09_certificates(announce):
    t0 = time.perf_counter()
    catalog = [(K.unit_ball(2), 0.25), (K.unit_ball(3), 0.25), (K.full_space_power(2, -2.5), 0.2),
               (K.KernelSpec(2, (K.Cone((1.0, 0.0), 0.4),)), 0.2), (K.cusp_kernel(), 0.1)]
    failed, undetected, cusp = [], [], 0
    for s in range(50):
        rng = np.random.default_rng(9000 + s)
        k, eps1 = catalog[s % len(catalog)]
        N = k.dimension
        target = rng.uniform(-1, 1, size=N) * (0.5 if s % len(catalog) == 4 else 1.5)
        cert = P.build_ssp_chain(k, np.zeros(N), target, eps1, seed=s)
        cusp += s % len(catalog) == 4
        if not P.verify_certificate(cert, k, seed=10_000 + s).ok:
            failed.append(s)
        if cert.n_links:
            bad, j, kind = _corrupt(cert, rng)
            rep = P.verify_certificate(bad, k, seed=20_000 + s)
            if rep.ok or j not in {f[0] for f in rep.failures}:
                undetected.append((s, kind))
    ok = not failed and not undetected
    announce(9, "certificate round-trip", ok, time.perf_counter() - t0, 120,
             f"50 chains ({cusp} cusp): {len(failed)} failed fresh verification, "
             f"{len(undetected)} corruptions undetected")


def test_10_representation(announce):
    t0 = time.perf_counter()
    f = _form(K.unit_ball(2, exponent=-2.5), 0.1, 1.0, 0.5)
    g = f.grid
    worst = 0.0
    for s in range(100):
        rng = np.random.default_rng(10_000 + s)
        u = g.sample(D.PolynomialBump(tuple(rng.uniform(-0.3, 0.3, 2)), rng.uniform(0.2, 0.6), 3))
        v = g.sample(D.GaussianBump(tuple(rng.uniform(-0.3, 0.3, 2)), rng.uniform(0.1, 0.3)))
        v *= D.DomainMask.ball(g, 0.6).interior
        e = f.energy(u, v, "direct")
        worst = max(worst, abs(e - np.sum(f.apply(u) * v) * f.hN) / abs(e))
    k = K.full_space_power(1, -2.0)
    ref = D.pointwise_pv(k, D.GaussianBump((0.0,)), [0.0], [0.01, 0.005], tolerance=0.01).value
    errs = []
    for h in (1 / 16, 1 / 32):
        grid = D.Grid.cube(1, h, 8.0)
        form = D.DiscreteForm.build(k, grid, 8.0)
        errs.append(abs(form.apply(grid.sample(D.GaussianBump((0.0,))))[grid.center_index()] - ref))
    ratio = errs[0] / errs[1]
    ok = worst <= 1e-10 and 2 * 0.7 <= ratio <= 2 * 1.3
    announce(10, "representation identity", ok, time.perf_counter() - t0, 60,
             f"summation by parts max rel err {worst:.1e}; PV error ratio {ratio:.2f} "
             f"(errors {errs[0]:.2e}, {errs[1]:.2e})")


def test_11_mollification(announce):
    t0 = time.perf_counter()
    h = 1 / 32
    forms = [_form(K.full_space_power(1, -2.0), h, 3.0, 1.0), _form(K.unit_ball(2, exponent=-2.5), 1 / 16, 1.5, 0.5)]
    bad_mono, bad_end, worst_end = 0, 0, 0.0
    for s in range(20):
        rng = np.random.default_rng(11_000 + s)
        f = forms[s % 2]
        g = f.grid
        hh = g.spacing
        N = g.dimension
        u = g.sample(D.PolynomialBump(tuple(rng.uniform(-0.3, 0.3, N)), rng.uniform(0.4, 0.9),
                                      int(rng.integers(3, 6)), rng.uniform(0.5, 2)))
        es = [f.energy(u - D.mollify(u, m * hh, hh)) for m in range(8, 0, -1)]
        if any(b > a * (1 + 1e-12) for a, b in zip(es, es[1:])):
            bad_mono += 1
        e0 = f.energy(u)
        worst_end = max(worst_end, es[-1] / e0)
        bad_end += es[-1] > 1e-3 * e0
    ok = bad_mono == 0 and bad_end == 0
    announce(11, "mollification", ok, time.perf_counter() - t0, 30,
             f"20 functions: {bad_mono} non-monotone sequences, final ratio max {worst_end:.1e}")
