"""Weak maximum principle on the grid.

On a finite grid the variational supersolution inequality, tested against all
nonnegative functions supported in the domain, is equivalent to the nodal
inequalities (Iu)(x) >= c(x) u(x) + g(x): node indicators are the extreme
rays of that cone.  Everything here works with those nodal residuals.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import linalg as spla

from . import _rng
from .discrete_form import DiscreteForm, DomainMask, Grid
from .errors import HypothesisViolation, Inconclusive, NonConvergence
from .kernels import KernelSpec, total_mass
from .spectral import lambda1, lambda1_lower_bound

__all__ = ["ProblemData", "SupersolutionReport", "verify_supersolution", "solve_dirichlet",
           "WeakMPReport", "weak_mp_bound_check", "RadiusBracket", "small_volume_radius",
           "nodal_residual", "regional_apply", "regional_to_full", "random_problem",
           "save_problem", "load_problem"]


@dataclass
class ProblemData:
    """Iu = c u + g in the mask, u = exterior_data off it.

    c, g and exterior_data are full grid arrays; c and g are read on the
    interior, exterior_data everywhere else (and zero beyond the grid).
    """
    form: DiscreteForm
    mask: DomainMask
    c: np.ndarray
    g: np.ndarray
    exterior_data: np.ndarray
    kernel: KernelSpec | None = None

    def __post_init__(self):
        shape = self.form.grid.shape
        self.c = np.broadcast_to(np.asarray(self.c, dtype=float), shape).copy()
        self.g = np.broadcast_to(np.asarray(self.g, dtype=float), shape).copy()
        self.exterior_data = np.broadcast_to(np.asarray(self.exterior_data, dtype=float), shape).copy()
        m = self.mask.interior
        if not (np.all(np.isfinite(self.c[m])) and np.all(np.isfinite(self.g[m]))):
            raise ValueError("c and g must be finite on the interior")
        self.exterior_data[m] = 0.0

    @property
    def c_plus_norm(self):
        return float(max(np.max(self.c[self.mask.interior]), 0.0))

    def extend(self, interior_values):
        """Full grid function equal to the exterior data off the mask."""
        u = self.exterior_data.copy()
        u[self.mask.interior] = interior_values
        return u


# ---------------------------------------------------------------------------
# supersolutions


@dataclass
class SupersolutionReport:
    min_slack: float
    worst_node: tuple
    ok: bool
    tol: float

    def to_json(self):
        d = asdict(self)
        d["worst_node"] = list(d["worst_node"])
        return d


def nodal_residual(p, u):
    """(Iu)(x) - c(x) u(x) - g(x) on the grid (meaningful on the interior)."""
    u = np.asarray(u, dtype=float)
    return p.form.apply(u) - p.c * u - p.g


def verify_supersolution(p, u, tol=1e-10):
    """Minimum nodal slack of (Iu) - cu - g over the interior and where it occurs.

    ``ok`` means the slack is >= -tol * scale, with scale the size of the terms.
    """
    u = np.asarray(u, dtype=float)
    m = p.mask.interior
    off = ~m
    mismatch = np.max(np.abs(u[off] - p.exterior_data[off]), initial=0.0)
    if mismatch > tol * max(1.0, np.max(np.abs(p.exterior_data), initial=0.0)):
        raise ValueError(f"u does not match the exterior data (max deviation {mismatch:.3e})")
    r = nodal_residual(p, u)
    scale = max(1.0, p.form.weights.degree * np.max(np.abs(u)), np.max(np.abs(p.g[m]), initial=0.0))
    masked = np.where(m, r, np.inf)
    worst = np.unravel_index(int(np.argmin(masked)), masked.shape)
    s = float(masked[worst])
    return SupersolutionReport(s, tuple(int(i) for i in worst), bool(s >= -tol * scale), tol)


# ---------------------------------------------------------------------------
# solver


def _system(p):
    form, mask = p.form, p.mask
    box, idx = form.interior_index(mask)
    base = form.interior_operator(mask)
    c_int = p.c[box][idx]
    A = spla.LinearOperator(base.shape, matvec=lambda x: base @ x - c_int * x, dtype=float)
    # exterior data enters the right-hand side through the off-diagonal coupling
    b = p.g[box][idx] - form.apply(p.exterior_data)[box][idx]
    diag = form.degree[box][idx] - c_int
    return A, b, diag


def solve_dirichlet(p, rel_tol=1e-10, check_coercivity=True, lam=None, seed=0):
    """Solve Iu - cu = g in the mask with u = exterior data outside.

    Coercivity (||c+|| < Lambda_1) is checked first and conjugate gradients
    are used.  With ``check_coercivity=False`` the system may be indefinite;
    MINRES is used instead (this is how the sharpness of the hypothesis is probed).
    """
    A, b, diag = _system(p)
    if check_coercivity:
        lam = lambda1(p.form, p.mask, seed=seed).value if lam is None else lam
        if p.c_plus_norm >= lam:
            raise HypothesisViolation(f"||c+|| = {p.c_plus_norm:.6g} >= Lambda_1 = {lam:.6g}: "
                                      "the problem is not coercive")
        M = spla.LinearOperator(A.shape, matvec=lambda x: x / diag, dtype=float)
        x, info = spla.cg(A, b, rtol=rel_tol, maxiter=20 * len(b) + 200, M=M)
    else:
        x, info = spla.minres(A, b, rtol=1e-3 * rel_tol, maxiter=50 * len(b) + 200)
    if info != 0:
        raise NonConvergence(f"linear solve did not converge (info={info})")
    res = np.linalg.norm(A @ x - b)
    if res > 10 * rel_tol * max(np.linalg.norm(b), 1e-300):
        raise NonConvergence(f"relative residual {res / np.linalg.norm(b):.3e} above tolerance")
    return p.extend(x)


# ---------------------------------------------------------------------------
# quantitative bound


@dataclass
class WeakMPReport:
    lhs: float  # ||u-||_{L2(Omega)}
    rhs: float  # ||g-|| / (Lambda_1 - ||c+||)
    lambda1: float
    c_plus_norm: float
    ok: bool
    tightness: float

    def to_json(self):
        return asdict(self)


def _l2(form, v):
    return math.sqrt(float(np.sum(v * v)) * form.hN)


def weak_mp_bound_check(p, u, lam=None, rel_slack=1e-9, seed=0):
    """Check ||u-|| <= ||g-|| / (Lambda_1 - ||c+||) for a supersolution u >= 0 off the mask."""
    lam = lambda1(p.form, p.mask, seed=seed).value if lam is None else lam
    cp = p.c_plus_norm
    if cp >= lam:
        raise HypothesisViolation(f"||c+|| = {cp:.6g} >= Lambda_1 = {lam:.6g}")
    m = p.mask.interior
    u = np.asarray(u, dtype=float)
    lhs = _l2(p.form, np.maximum(-u[m], 0.0))
    rhs = _l2(p.form, np.maximum(-p.g[m], 0.0)) / (lam - cp)
    ok = lhs <= rhs * (1 + rel_slack) + 1e-300
    tight = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    return WeakMPReport(lhs, rhs, lam, cp, bool(ok), tight)


# ---------------------------------------------------------------------------
# small-volume radius


@dataclass
class RadiusBracket:
    r: float  # largest tested radius with lower_bound(r) > c_plus_norm
    r_fail: float | None  # smallest tested radius where it fails (None if r is r_max)

    def __float__(self):
        return self.r


def small_volume_radius(kernel, c_plus_norm, seed=0, r_max=2.0, rel_tol=1e-6):
    """Volume r below which the rearrangement bound exceeds ||c+||.

    Requires ||c+|| < int j; the bound tends to the total mass as r -> 0.
    """
    mass = total_mass(kernel, seed)
    if not c_plus_norm < mass:
        raise HypothesisViolation(f"||c+|| = {c_plus_norm} is not below the total mass {mass}")

    def good(r):
        return lambda1_lower_bound(kernel, r, seed) > c_plus_norm

    if good(r_max):
        return RadiusBracket(r_max, None)
    hi, lo = r_max, r_max / 2
    while not good(lo):
        hi, lo = lo, lo / 2
        if lo < 1e-300:
            raise Inconclusive("no radius satisfies the bound down to 1e-300")
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if good(mid):
            lo = mid
        else:
            hi = mid
    return RadiusBracket(lo, hi)


# ---------------------------------------------------------------------------
# regional operator


def regional_apply(form, mask, u):
    """I_Omega u(x) = sum_{y in Omega} w(y - x)(u(x) - u(y)) h^N, on interior nodes."""
    m = mask.interior.astype(float)
    u = np.asarray(u, dtype=float) * m
    return form.hN * (u * form._convolve(m) - form._convolve(u))


def regional_to_full(form, mask, c):
    """c~ = c + (coupling of each interior node to the exterior, tail included)."""
    m = mask.interior.astype(float)
    coupling = form.degree - form.hN * form._convolve(m)
    return np.asarray(c, dtype=float) + coupling


# ---------------------------------------------------------------------------
# instances


_FORMS = {}


def _cached_form(kernel, N, h, half, trunc):
    key = (kernel.dumps(), h, half, trunc)
    if key not in _FORMS:
        _FORMS[key] = DiscreteForm.build(kernel, Grid.cube(N, h, half), trunc)
    return _FORMS[key]


def _catalog(N):
    from .kernels import full_space_power, two_level_kernel, unit_ball
    cat = [unit_ball(N), full_space_power(N, -(N + 1.0))]
    if N == 1:
        cat.append(two_level_kernel())
    return cat


def random_problem(seed, signed_g=False, N=None):
    """Seeded solvable instance: small grid, random blob mask, ||c+|| below Lambda_1.

    Returns (problem, lambda1).
    """
    rng = _rng.generator(seed, "problem")
    N = int(rng.integers(1, 3)) if N is None else N
    kernels = _catalog(N)
    kernel = kernels[int(rng.integers(len(kernels)))]
    h, half = (1 / 32, 1.25) if N == 1 else (1 / 12, 1.0)
    form = _cached_form(kernel, N, h, half, 2.0)
    grid = form.grid
    x = grid.coordinates()
    # union of a few random balls
    interior = np.zeros(grid.shape, dtype=bool)
    for _ in range(int(rng.integers(1, 4))):
        ctr = rng.uniform(-0.4, 0.4, size=N)
        rad = rng.uniform(0.2, 0.6)
        interior |= np.linalg.norm(x - ctr, axis=-1) <= rad
    interior[grid.center_index()] = True
    mask = DomainMask(grid, interior)
    lam = lambda1(form, mask, seed=seed).value
    c = rng.uniform(-1.0, 1.0, size=grid.shape) * lam * rng.uniform(0.1, 0.9)
    g = rng.uniform(0.0, 1.0, size=grid.shape)
    if signed_g:
        g = g - rng.uniform(0.2, 0.8)
    ext = rng.uniform(0.0, 1.0, size=grid.shape) * rng.integers(0, 2)
    return ProblemData(form, mask, c, g, ext, kernel), lam


def save_problem(path, p, trunc_radius=None, subdivision=None):
    """JSON header next to an .npz with mask, c, g and exterior data."""
    path = Path(path)
    if p.kernel is None:
        raise ValueError("saving needs the kernel that built the form")
    wt = p.form.weights
    header = {"grid": p.form.grid.to_json(), "kernel": p.kernel.to_json(),
              "trunc_radius": wt.trunc_radius if trunc_radius is None else trunc_radius,
              "subdivision": wt.subdivision if subdivision is None else subdivision,
              "restricted": p.form.restricted, "arrays": path.with_suffix(".npz").name}
    path.write_text(json.dumps(header, indent=2))
    np.savez(path.with_suffix(".npz"), mask=p.mask.interior, c=p.c, g=p.g,
             exterior_data=p.exterior_data)


def load_problem(path):
    path = Path(path)
    header = json.loads(path.read_text())
    kernel = KernelSpec.from_json(header["kernel"])
    grid = Grid.from_json(header["grid"])
    arrays = np.load(path.parent / header["arrays"])
    form = DiscreteForm.build(kernel, grid, header["trunc_radius"], header["subdivision"],
                              restricted=header.get("restricted", False))
    mask = DomainMask(grid, arrays["mask"])
    return ProblemData(form, mask, arrays["c"], arrays["g"], arrays["exterior_data"], kernel)
