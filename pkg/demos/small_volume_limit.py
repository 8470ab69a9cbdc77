"""First Dirichlet eigenvalue against the rearrangement lower bound as the domain shrinks."""
from nonlocal_mp import kernels as K
from nonlocal_mp import spectral as S

h = 1 / 32
kernel = K.unit_ball(2)
rows = S.small_volume_limit_check(kernel, [h * h, 0.05, 0.2, 0.5, 1.0], h, trunc_radius=2.0)
print(f"total mass {K.ball_volume(2):.6f}")
print("      r    lambda1  lower bound    slack  ok")
for r in rows:
    print(f"{r.r:7.4f} {r.lambda1:10.6f} {r.lower_bound:12.6f} {r.slack:8.2e}  {r.bound_ok}")
