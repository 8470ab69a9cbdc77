"""First Dirichlet eigenvalue of the discrete operator and the rearrangement lower bound.

For a kernel j and a volume r the continuum bound reads

    Lambda_1(r) >= int_{j < d(r)} j + d(r) (|{j >= d(r)}| - r),

with d(r) = sup{c : |{j >= c}| >= r}.  All level-set measures are reduced to
radial integrals of the indicator of A, so they inherit the exactness of the
kernel module (closed forms for radial sets and single primitives).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg as sla
from scipy.sparse import linalg as spla

from . import _rng
from .discrete_form import DiscreteForm, DomainMask, Grid, build_weight_table
from .errors import HypothesisViolation, Inconclusive, NonConvergence
from .kernels import KernelSpec, ball_volume, shell_mass, total_mass

__all__ = ["Lambda1Result", "lambda1", "lambda1_dense", "gershgorin_lower_bound",
           "superlevel_measure", "sublevel_mass", "decreasing_rearrangement",
           "lambda1_lower_bound", "LowerBound", "RearrangementProfile", "rearrangement_profile",
           "discretization_slack", "SmallVolumeRow", "small_volume_limit_check", "rows_to_csv"]


# ---------------------------------------------------------------------------
# eigenvalue


@dataclass
class Lambda1Result:
    value: float
    residual: float
    iterations: int
    vector: np.ndarray
    rayleigh: float


def gershgorin_lower_bound(form, mask):
    """min_x (d(x) - sum_{y in Omega} w(y-x) h^N): a lower bound for Lambda_1 (weights >= 0)."""
    box = mask.bbox()
    m = mask.interior[box].astype(float)
    inner = form.hN * form._convolve(m)
    return float(np.min((form.degree[box] - inner)[mask.interior[box]]))


def lambda1_dense(form, mask):
    """Smallest eigenvalue by a dense symmetric eigensolve (oracle for small masks)."""
    mask.require_nonempty()
    A = form.interior_matrix(mask)
    return float(sla.eigvalsh(A, subset_by_index=[0, 0])[0])


def lambda1(form, mask=None, rel_tol=1e-8, seed=0, max_iter=1000):
    """Smallest eigenvalue of the interior operator by shifted inverse iteration.

    Inner solves use conjugate gradients with a Jacobi preconditioner; the
    shift is just below the Gershgorin bound, which is itself <= Lambda_1.
    Stops once ||A v - lambda v|| <= rel_tol * lambda ||v||.
    """
    mask = form.mask if mask is None else mask
    mask.require_nonempty()
    if not rel_tol > 0:
        raise ValueError("rel_tol must be positive")
    if not form.weights.degree > 0:
        raise HypothesisViolation("the kernel has zero mass on the grid; the operator vanishes")
    box, idx = form.interior_index(mask)
    deg = form.degree[box][idx]
    if mask.count == 1:
        v = np.ones(1)
        return Lambda1Result(float(deg[0]), 0.0, 0, form.embed(v, mask), float(deg[0]))
    A = form.interior_operator(mask)
    g_lb = max(gershgorin_lower_bound(form, mask), 0.0)
    sigma = 0.9 * g_lb
    shifted = form.interior_operator(mask, shift=sigma)
    precond = spla.LinearOperator(shifted.shape, matvec=lambda x: x / (deg - sigma), dtype=float)
    rng = _rng.generator(seed, "lambda1")
    v = rng.uniform(0.5, 1.5, size=mask.count)
    v /= np.linalg.norm(v)
    lam, res = math.nan, math.inf
    for it in range(1, max_iter + 1):
        x0 = v / (lam - sigma) if lam > sigma else None
        w, info = spla.cg(shifted, v, x0=x0, rtol=1e-12, maxiter=10 * mask.count + 100, M=precond)
        if info < 0:
            raise NonConvergence("inner CG breakdown")
        v = w / np.linalg.norm(w)
        Av = A @ v
        lam = float(v @ Av)
        res = float(np.linalg.norm(Av - lam * v))
        if res <= rel_tol * abs(lam):
            return Lambda1Result(lam, res, it, form.embed(v, mask), lam)
    raise NonConvergence(f"inverse iteration did not reach rel_tol={rel_tol} "
                         f"(residual {res:.3e}, lambda {lam:.6g})")


# ---------------------------------------------------------------------------
# level sets of the kernel


def _pieces(kernel):
    """Radial intervals on which the profile factor is a constant P > 0."""
    if kernel.radial_profile is None:
        return [(0.0, math.inf, 1.0)]
    out, lo = [], 0.0
    for e, v in zip(kernel.radial_profile.edges, kernel.radial_profile.values):
        if v > 0:
            out.append((lo, e, v))
        lo = e
    return out


def _level_split(kernel, c):
    """For each piece, the radial sub-intervals where j >= c and where 0 < j < c."""
    tau = kernel.exponent
    above, below = [], []
    for a, b, P in _pieces(kernel):
        if tau == 0:
            (above if P >= c else below).append((a, b, P))
            continue
        t = (c / P) ** (1.0 / tau)
        if tau < 0:  # j decreasing in s: j >= c on s <= t
            cut = min(max(t, a), b)
            above.append((a, cut, P))
            below.append((cut, b, P))
        else:
            cut = min(max(t, a), b)
            below.append((a, cut, P))
            above.append((cut, b, P))
    return [p for p in above if p[1] > p[0]], [p for p in below if p[1] > p[0]]


def _indicator(kernel):
    return KernelSpec(kernel.dimension, kernel.shape, 0.0)


def _sum_shells(spec, intervals, seed, scale_by_profile):
    val, err = 0.0, 0.0
    for a, b, P in intervals:
        res = shell_mass(spec, a, b, seed)
        if res.verdict == "infinite":
            return math.inf, math.inf
        if res.verdict == "inconclusive":
            raise Inconclusive("level-set measure did not resolve")
        f = P if scale_by_profile else 1.0
        val += f * res.value
        err += f * res.error
    return val, err


def superlevel_measure(kernel, c, seed=0):
    """|{j >= c}| for c > 0, with its error estimate."""
    if not c > 0:
        raise ValueError("level must be positive")
    above, _ = _level_split(kernel, c)
    return _sum_shells(_indicator(kernel), above, seed, False)


def sublevel_mass(kernel, c, seed=0):
    """int_{j < c} j with its error estimate."""
    if c <= 0:
        return 0.0, 0.0
    _, below = _level_split(kernel, c)
    return _sum_shells(KernelSpec(kernel.dimension, kernel.shape, kernel.exponent), below, seed, True)


def decreasing_rearrangement(kernel, r, seed=0, rel_tol=1e-13):
    """d(r) = sup{c >= 0 : |{j >= c}| >= r}."""
    if not r > 0:
        raise ValueError("r must be positive")
    levels = sorted({P for _, _, P in _pieces(kernel)}, reverse=True)
    if kernel.exponent == 0:
        # j only takes the profile values: d(r) is the largest level whose set is big enough
        for P in levels:
            if superlevel_measure(kernel, P, seed)[0] >= r:
                return P
        return 0.0
    if not levels:
        return 0.0
    # |{j > 0}| is the measure of the support
    support = _sum_shells(_indicator(kernel), _pieces(kernel), seed, False)[0]
    if support < r:
        return 0.0
    lo, hi = 1e-300, 1.0
    while superlevel_measure(kernel, hi, seed)[0] >= r:
        lo, hi = hi, hi * 2.0
        if hi > 1e300:
            return math.inf
    if lo == 1e-300:
        lo = 0.5
        while superlevel_measure(kernel, lo, seed)[0] < r:
            hi, lo = lo, lo / 2.0
            if lo < 1e-300:
                return 0.0
    # bisection in log scale
    while hi - lo > rel_tol * hi:
        mid = math.sqrt(lo * hi) if hi / lo > 4 else 0.5 * (lo + hi)
        if superlevel_measure(kernel, mid, seed)[0] >= r:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass
class LowerBound:
    value: float
    d: float
    superlevel: float
    sublevel: float
    error: float


def lambda1_lower_bound(kernel, r, seed=0, detail=False):
    """int_{j < d} j + d (|{j >= d}| - r), or 0 when d(r) = 0."""
    d = decreasing_rearrangement(kernel, r, seed)
    if d == 0:
        lb = LowerBound(0.0, 0.0, 0.0, 0.0, 0.0)
    else:
        sub, e1 = sublevel_mass(kernel, d, seed)
        sup, e2 = superlevel_measure(kernel, d, seed)
        surplus = max(sup - r, 0.0)
        lb = LowerBound(sub + d * surplus, d, sup, sub, e1 + d * e2)
    return lb if detail else lb.value


@dataclass
class RearrangementProfile:
    kernel: KernelSpec
    radii: np.ndarray
    d: np.ndarray
    lower_bound: np.ndarray
    error: np.ndarray


def rearrangement_profile(kernel, radii, seed=0):
    radii = np.asarray(sorted(radii), dtype=float)
    res = [lambda1_lower_bound(kernel, r, seed, detail=True) for r in radii]
    return RearrangementProfile(kernel, radii, np.array([b.d for b in res]),
                                np.array([b.value for b in res]), np.array([b.error for b in res]))


# ---------------------------------------------------------------------------
# small-volume limit


def discretization_slack(form, kernel, lam=0.0, rel_tol=1e-8, seed=0):
    """Documented slack for comparing a discrete Lambda_1 with continuum quantities.

    Sum of: the diagonal-cell mass bound, a quadrature term, the tail estimate
    error and the solver tolerance.  The quadrature term is the larger of the
    subdivision refinement delta of the stencil mass and, for finite-mass
    kernels, the mass defect |sum_z w h^N + tail - int j| of the table.  The
    refinement delta alone underestimates midpoint bias on thin sets
    (odd subdivisions sample exactly on a cusp axis).
    """
    wt = form.weights
    finer = build_weight_table(kernel, wt.spacing, wt.trunc_radius, 2 * wt.subdivision, seed)
    quad = abs(finer.stencil_mass - wt.stencil_mass)
    mass = total_mass(kernel, seed)
    if math.isfinite(mass):
        quad = max(quad, abs(wt.degree - mass))
    parts = {"diagonal": wt.diagonal_mass, "quadrature": quad,
             "tail": float(wt.meta.get("tail_error", 0.0)), "solver": abs(lam) * rel_tol}
    return sum(parts.values()), parts


@dataclass
class SmallVolumeRow:
    r: float
    lambda1: float
    lower_bound: float
    total_mass: float
    slack: float
    nodes: int
    bound_ok: bool
    limit_gap: float


def small_volume_limit_check(kernel, r_sequence, h, trunc_radius, subdivision=3, seed=0,
                             rel_tol=1e-8, csv_path=None):
    """For each r: Lambda_1 of the discrete ball of volume r vs the rearrangement bound.

    ``bound_ok`` records lambda1 >= lower_bound - slack; ``limit_gap`` is
    total_mass - lambda1, which should fall inside the slack as r shrinks to h^N.
    """
    mass = total_mass(kernel, seed)
    if not math.isfinite(mass):
        raise HypothesisViolation("small-volume limit check needs a finite-mass kernel")
    N = kernel.dimension
    rows = []
    form_cache = {}
    for r in r_sequence:
        radius = (r / ball_volume(N)) ** (1.0 / N)
        half = radius + 2 * h
        grid = Grid.cube(N, h, half)
        key = grid.shape
        if key not in form_cache:
            form_cache[key] = DiscreteForm.build(kernel, grid, trunc_radius, subdivision, seed=seed)
        form = form_cache[key]
        mask = DomainMask.ball_of_volume(grid, r)
        res = lambda1(form, mask, rel_tol, seed)
        slack, _ = discretization_slack(form, kernel, res.value, rel_tol, seed)
        lb = lambda1_lower_bound(kernel, mask.volume, seed)
        rows.append(SmallVolumeRow(float(r), res.value, lb, mass, slack, mask.count,
                                   bool(res.value >= lb - slack), mass - res.value))
    if csv_path is not None:
        Path(csv_path).write_text(rows_to_csv(rows))
    return rows


def rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["r", "lambda1", "lower_bound", "total_mass", "slack"])
    for row in rows:
        w.writerow([repr(row.r), repr(row.lambda1), repr(row.lower_bound),
                    repr(row.total_mass), repr(row.slack)])
    return buf.getvalue()
