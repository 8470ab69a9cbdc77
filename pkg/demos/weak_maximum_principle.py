"""Solve a random Dirichlet problem and check the weak maximum principle estimate."""
import numpy as np

from nonlocal_mp import maxprinciple as MP

for seed in range(5):
    p, lam = MP.random_problem(seed, signed_g=True)
    u = MP.solve_dirichlet(p, lam=lam)
    rep = MP.weak_mp_bound_check(p, u, lam=lam)
    print(f"seed {seed}: nodes {p.mask.count:4d} lambda1 {lam:.4f} "
          f"|u-|^2 {rep.lhs:.3e} <= {rep.rhs:.3e} ({rep.ok}), min u {np.min(u):+.3f}")

p, lam = MP.random_problem(0)
u = MP.solve_dirichlet(p, lam=lam)
print("nonnegative data gives min u =", float(np.min(u)))
