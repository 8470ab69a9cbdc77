"""Build a positivity chain for a cusp-shaped kernel, verify it, then tamper with it."""
import numpy as np

from nonlocal_mp import kernels as K
from nonlocal_mp import propagation as P

kernel = K.cusp_kernel()
cert = P.build_ssp_chain(kernel, [0.0, 0.0], [0.3, -0.2], eps1=0.1, seed=0)
print(f"{cert.n_links} links, conditioning {cert.conditioning:.3f}, min kappa {min(cert.kappa):.3e}")
print("fresh verification:", P.verify_certificate(cert, kernel, seed=1).ok)

bad = P.PositivityCertificate.from_json(cert.to_json())
bad.kappa[2] *= 10
rep = P.verify_certificate(bad, kernel, seed=1)
print("inflated kappa on link 3 detected at links", [f[0] for f in rep.failures])
