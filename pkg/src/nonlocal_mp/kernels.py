"""Kernel functions j(z) = 1_A(z) |z|^tau p(|z|) and x-dependent kernels J(x, y).

The symmetric set A is a union of primitives from a fixed catalog (ball,
annulus, double cone, cusp).  Every primitive is symmetric by construction and
membership is additionally evaluated as ``pred(z) or pred(-z)`` so that
evenness holds bitwise.  ``p`` is an optional piecewise-constant radial
profile, which lets the catalog express multi-level kernels.

Integrals of j are reduced to one-dimensional radial integrals

    int_a^b s^(tau + N - 1) p(s) |S^(N-1)| frac_A(s) ds,

where ``frac_A(s)`` is the fraction of the sphere of radius s lying in A.  The
fraction is exact for every single primitive (regularized incomplete beta
functions for caps) and for unions of radial primitives; unions involving
non-radial primitives are handled by seeded sphere sampling.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special

from . import _rng
from .errors import HypothesisViolation, Inconclusive, UnsupportedShape

__all__ = [
    "Ball", "Annulus", "Cone", "Cusp", "RadialProfile", "KernelSpec",
    "ConstantMultiplier", "PeriodicMultiplier", "StepMultiplier",
    "XKernelSpec", "TabulatedKernel", "IntegrabilityReport",
    "NontrivialityResult", "J3Report",
    "eval_kernel", "check_levy_integrability", "check_nontriviality",
    "sphere_profile", "total_mass", "shell_mass", "lower_envelope", "check_J3",
    "sphere_area", "ball_volume", "unit_ball", "full_space_power",
    "two_level_kernel", "cusp_kernel", "annulus_kernel",
]

_GAUSS_NODES = 24
_GL_CACHE = {}


def _gauss_legendre(n):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


def sphere_area(N):
    """(N-1)-dimensional area of the unit sphere in R^N (2 points for N=1)."""
    return 2.0 * math.pi ** (N / 2) / math.gamma(N / 2)


def ball_volume(N, r=1.0):
    return math.pi ** (N / 2) / math.gamma(N / 2 + 1) * r ** N


def _cap_fraction(N, phi):
    """Fraction of S^(N-1) within angle phi (<= pi/2) of the axis pair {+e, -e}."""
    phi = np.clip(np.asarray(phi, dtype=float), 0.0, math.pi / 2)
    if N == 1:
        return np.ones_like(phi)
    return special.betainc((N - 1) / 2.0, 0.5, np.sin(phi) ** 2)


def _norm(z):
    return np.sqrt(np.sum(z * z, axis=-1))


# ---------------------------------------------------------------------------
# primitive shapes


@dataclass(frozen=True)
class Ball:
    radius: float

    kind = "ball"
    is_radial = True

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")

    def _pred(self, z):
        return _norm(z) <= self.radius

    def breakpoints(self, N):
        return [self.radius]

    def support_radius(self, N):
        return self.radius

    def fraction(self, s, N):
        return (np.asarray(s, dtype=float) <= self.radius).astype(float)

    def to_json(self):
        return {"type": "ball", "radius": self.radius}


@dataclass(frozen=True)
class Annulus:
    inner: float
    outer: float

    kind = "annulus"
    is_radial = True

    def __post_init__(self):
        if not 0 <= self.inner < self.outer:
            raise ValueError("annulus needs 0 <= inner < outer")

    def _pred(self, z):
        r = _norm(z)
        return (r >= self.inner) & (r <= self.outer)

    def breakpoints(self, N):
        return [b for b in (self.inner, self.outer) if b > 0]

    def support_radius(self, N):
        return self.outer

    def fraction(self, s, N):
        s = np.asarray(s, dtype=float)
        return ((s >= self.inner) & (s <= self.outer)).astype(float)

    def to_json(self):
        return {"type": "annulus", "inner": self.inner, "outer": self.outer}


@dataclass(frozen=True)
class Cone:
    """Double cone {z : angle(z, +-axis) <= half_angle, |z| <= radius}."""

    axis: tuple
    half_angle: float
    radius: float = math.inf

    kind = "cone"
    is_radial = False

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=float)
        n = float(np.linalg.norm(a))
        if n == 0:
            raise ValueError("cone axis must be nonzero")
        object.__setattr__(self, "axis", tuple(float(v) / n for v in a))
        if not 0 < self.half_angle <= math.pi / 2:
            raise ValueError("cone half_angle must lie in (0, pi/2]")

    def _pred(self, z):
        r = _norm(z)
        proj = np.abs(z @ np.asarray(self.axis))
        return (proj >= r * math.cos(self.half_angle)) & (r <= self.radius)

    def breakpoints(self, N):
        return [self.radius] if math.isfinite(self.radius) else []

    def support_radius(self, N):
        return self.radius

    def fraction(self, s, N):
        s = np.asarray(s, dtype=float)
        f = float(_cap_fraction(N, self.half_angle))
        return np.where(s <= self.radius, f, 0.0)

    def to_json(self):
        d = {"type": "cone", "axis": list(self.axis), "half_angle": self.half_angle}
        if math.isfinite(self.radius):
            d["radius"] = self.radius
        return d


@dataclass(frozen=True)
class Cusp:
    """{z : |z_axis| <= length, |z'| <= |z_axis|^rho}, z' the other coordinates."""

    rho: float
    length: float = 1.0
    axis: int = 0

    kind = "cusp"
    is_radial = False

    def __post_init__(self):
        if not self.rho > 0 or not self.length > 0:
            raise ValueError("cusp needs rho > 0 and length > 0")

    def _pred(self, z):
        t = np.abs(z[..., self.axis])
        rest = np.sqrt(np.maximum(np.sum(z * z, axis=-1) - z[..., self.axis] ** 2, 0.0))
        if z.shape[-1] == 1:
            return t <= self.length
        return (t <= self.length) & (rest <= t ** self.rho)

    def breakpoints(self, N):
        if N == 1:
            return [self.length]
        return [self.length, math.hypot(self.length, self.length ** self.rho)]

    def support_radius(self, N):
        return self.breakpoints(N)[-1]

    def _phi_star(self, s):
        # angle to the axis where |z'| = |z_axis|^rho on the sphere of radius s;
        # solve log t + (rho-1)/2 log(1+t^2) = (rho-1) log s for t = tan(phi)
        c = (self.rho - 1.0) * np.log(s)
        y = c.copy()
        for _ in range(100):
            e2 = np.exp(np.minimum(2 * y, 700.0))
            f = y + 0.5 * (self.rho - 1.0) * np.log1p(e2) - c
            fp = 1.0 + (self.rho - 1.0) * e2 / (1.0 + e2)
            step = f / fp
            y = y - step
            if np.all(np.abs(step) <= 1e-15 * np.maximum(1.0, np.abs(y))):
                break
        return np.arctan(np.exp(y))

    def fraction(self, s, N):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if N == 1:
            return (s <= self.length).astype(float)
        out = np.zeros_like(s)
        pos = s > 0
        sp = s[pos]
        phi_hi = self._phi_star(sp)
        phi_lo = np.arccos(np.minimum(1.0, self.length / sp))
        val = np.where(phi_hi > phi_lo, _cap_fraction(N, phi_hi) - _cap_fraction(N, phi_lo), 0.0)
        out[pos] = np.maximum(val, 0.0)
        return out

    def to_json(self):
        return {"type": "cusp", "rho": self.rho, "length": self.length, "axis": self.axis}


_PRIMITIVES = {"ball": Ball, "annulus": Annulus, "cone": Cone, "cusp": Cusp}


def _primitive_from_json(d):
    d = dict(d)
    kind = d.pop("type")
    if kind not in _PRIMITIVES:
        raise UnsupportedShape(f"unknown primitive type {kind!r}")
    if kind == "cone" and "axis" in d:
        d["axis"] = tuple(d["axis"])
    return _PRIMITIVES[kind](**d)


@dataclass(frozen=True)
class RadialProfile:
    """Piecewise-constant factor p(s) = values[i] for edges[i-1] < s <= edges[i]; 0 beyond."""

    edges: tuple
    values: tuple

    def __post_init__(self):
        e = tuple(float(v) for v in self.edges)
        v = tuple(float(x) for x in self.values)
        if len(e) != len(v) or not e:
            raise ValueError("profile needs matching nonempty edges/values")
        if any(b <= a for a, b in zip((0.0,) + e[:-1], e)):
            raise ValueError("profile edges must be positive and increasing")
        if any(x < 0 for x in v):
            raise ValueError("profile values must be nonnegative")
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "values", v)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(np.asarray(self.edges), s, side="left")
        vals = np.append(np.asarray(self.values), 0.0)
        return vals[idx]


# ---------------------------------------------------------------------------
# translation-invariant kernels


@dataclass(frozen=True)
class KernelSpec:
    """Even kernel j(z) = 1_A(z) |z|^exponent p(|z|); empty ``shape`` means A = R^N."""

    dimension: int
    shape: tuple = ()
    exponent: float = 0.0
    radial_profile: Optional[RadialProfile] = None
    analytic_total_mass: Optional[float] = None

    def __post_init__(self):
        if int(self.dimension) < 1:
            raise ValueError("dimension must be a positive integer")
        object.__setattr__(self, "dimension", int(self.dimension))
        object.__setattr__(self, "shape", tuple(self.shape))
        for p in self.shape:
            if isinstance(p, Cone) and len(p.axis) != self.dimension:
                raise ValueError("cone axis dimension mismatch")
            if isinstance(p, Cusp) and not 0 <= p.axis < self.dimension:
                raise ValueError("cusp axis out of range")

    # -- structure ---------------------------------------------------------
    @property
    def is_full_space(self):
        return len(self.shape) == 0

    @property
    def is_indicator(self):
        return self.radial_profile is None

    @property
    def is_radial(self):
        return all(p.is_radial for p in self.shape)

    def support_radius(self):
        N = self.dimension
        r = math.inf if self.is_full_space else max(p.support_radius(N) for p in self.shape)
        if self.radial_profile is not None:
            r = min(r, self.radial_profile.edges[-1])
        return r

    def breakpoints(self):
        pts = set()
        for p in self.shape:
            pts.update(p.breakpoints(self.dimension))
        if self.radial_profile is not None:
            pts.update(self.radial_profile.edges)
        return sorted(b for b in pts if 0 < b < math.inf)

    def _fraction_exact(self):
        return self.dimension == 1 or self.is_full_space or self.is_radial or len(self.shape) == 1

    # -- evaluation --------------------------------------------------------
    def contains(self, z):
        z = self._as_points(z)
        if self.is_full_space:
            return np.ones(z.shape[:-1], dtype=bool)
        out = np.zeros(z.shape[:-1], dtype=bool)
        for p in self.shape:
            out |= p._pred(z) | p._pred(-z)
        return out

    def _as_points(self, z):
        z = np.asarray(z, dtype=float)
        if self.dimension == 1 and (z.ndim == 0 or z.shape[-1] != 1):
            z = z[..., None]
        if z.shape[-1] != self.dimension:
            raise ValueError(f"expected points of dimension {self.dimension}")
        return z

    def radial_factor(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            val = np.power(s, self.exponent) if self.exponent != 0 else np.ones_like(s)
        if self.radial_profile is not None:
            val = val * self.radial_profile(s)
        return val

    def __call__(self, z):
        return eval_kernel(self, z)

    def sphere_fraction(self, s, rng=None, n_samples=1024):
        """Fraction of the sphere of radius s inside A (exact where possible)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        N = self.dimension
        if self.is_full_space:
            return np.ones_like(s)
        if N == 1:
            return self.contains(s[:, None]).astype(float) * 0.5 + self.contains(-s[:, None]) * 0.5
        if self.is_radial:
            pts = np.zeros((s.size, N))
            pts[:, 0] = s
            return self.contains(pts).astype(float)
        if len(self.shape) == 1:
            return self.shape[0].fraction(s, N)
        dirs, w = _sphere_directions(N, n_samples, rng)
        pts = s[:, None, None] * dirs[None, :, :]
        return self.contains(pts).astype(float) @ w

    def support_indicator(self):
        """Kernel 1_{j > 0} (same set A, exponent 0, 0/1 profile)."""
        prof = None
        if self.radial_profile is not None:
            prof = RadialProfile(self.radial_profile.edges,
                                 tuple(1.0 if v > 0 else 0.0 for v in self.radial_profile.values))
        return KernelSpec(self.dimension, self.shape, 0.0, prof)

    # -- serialization -----------------------------------------------------
    def to_json(self):
        d = {
            "dimension": self.dimension,
            "shape": "full" if self.is_full_space else [p.to_json() for p in self.shape],
            "exponent": self.exponent,
        }
        if self.radial_profile is not None:
            d["radial_profile"] = {"edges": list(self.radial_profile.edges),
                                   "values": list(self.radial_profile.values)}
        if self.analytic_total_mass is not None:
            d["analytic_total_mass"] = ("inf" if math.isinf(self.analytic_total_mass)
                                        else self.analytic_total_mass)
        return d

    def dumps(self):
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def from_json(cls, d):
        if isinstance(d, str):
            d = json.loads(d)
        shape = d.get("shape", "full")
        prims = () if shape in ("full", None, []) else tuple(_primitive_from_json(p) for p in shape)
        prof = d.get("radial_profile")
        if prof is not None:
            prof = RadialProfile(tuple(prof["edges"]), tuple(prof["values"]))
        mass = d.get("analytic_total_mass")
        if mass is not None:
            mass = math.inf if mass in ("inf", "infinity") else float(mass)
        return cls(int(d["dimension"]), prims, float(d.get("exponent", 0.0)), prof, mass)


def unit_ball(N, radius=1.0, exponent=0.0):
    return KernelSpec(N, (Ball(radius),), exponent)


def full_space_power(N, exponent):
    return KernelSpec(N, (), exponent)


def annulus_kernel(N, inner=1.0, outer=2.0, exponent=0.0):
    return KernelSpec(N, (Annulus(inner, outer),), exponent)


def cusp_kernel(N=2, rho=2.0, exponent=0.0, length=1.0):
    return KernelSpec(N, (Cusp(rho, length),), exponent)


def two_level_kernel():
    """j = 2 on [-1/2, 1/2], 1 on [-1, 1] minus that, 0 elsewhere (N = 1)."""
    return KernelSpec(1, (), 0.0, RadialProfile((0.5, 1.0), (2.0, 1.0)))


def eval_kernel(spec, z):
    """j(z) = 1_A(z)|z|^tau p(|z|); at z = 0, inf if tau < 0 else 1_A(0) p(0)."""
    z = spec._as_points(z)
    r = _norm(z)
    inside = spec.contains(z)
    val = np.where(inside, spec.radial_factor(np.where(r > 0, r, 1.0)), 0.0)
    at0 = r == 0
    if np.any(at0):
        if spec.exponent < 0:
            v0 = np.where(inside, math.inf, 0.0)
        else:
            p0 = 1.0 if spec.radial_profile is None else float(spec.radial_profile(0.0))
            v0 = np.where(inside, p0, 0.0)
        val = np.where(at0, v0, val)
    return val if val.ndim else float(val)


def _sphere_directions(N, n, rng):
    """Quadrature directions on S^(N-1) with weights summing to one."""
    if N == 1:
        return np.array([[1.0], [-1.0]]), np.array([0.5, 0.5])
    if N == 2:
        shift = 0.5 if rng is None else rng.random()
        th = 2 * math.pi * (np.arange(n) + shift) / n
        return np.stack([np.cos(th), np.sin(th)], axis=1), np.full(n, 1.0 / n)
    if rng is None:
        rng = _rng.generator(0, "directions", N, n)
    g = rng.standard_normal((n, N))
    return g / np.linalg.norm(g, axis=1, keepdims=True), np.full(n, 1.0 / n)


# ---------------------------------------------------------------------------
# radial integration engine


@dataclass
class _Radial:
    value: float = 0.0
    error: float = 0.0
    evals: int = 0
    verdict: str = "finite"

    def add(self, other):
        self.value += other.value
        self.error += other.error
        self.evals += other.evals
        order = {"finite": 0, "inconclusive": 1, "infinite": 2}
        if order[other.verdict] > order[self.verdict]:
            self.verdict = other.verdict


def _gauss(fn, a, b, n=_GAUSS_NODES):
    """Gauss-Legendre on [a, b] with an n vs n/2 error estimate; fn is vectorized."""
    x, w = _gauss_legendre(n)
    s = 0.5 * (b - a) * x + 0.5 * (b + a)
    fs = fn(s)
    hi = 0.5 * (b - a) * float(np.dot(w, fs))
    x2, w2 = _gauss_legendre(n // 2)
    s2 = 0.5 * (b - a) * x2 + 0.5 * (b + a)
    lo = 0.5 * (b - a) * float(np.dot(w2, fn(s2)))
    return hi, abs(hi - lo), n + n // 2


def _adaptive(fn, a, b, tol, max_depth=40):
    """Bisect [a, b] until each Gauss panel's error is below its share of tol."""
    value, error, evals = 0.0, 0.0, 0
    stack = [(a, b, 0)]
    while stack:
        lo, hi, depth = stack.pop()
        v, e, n = _gauss(fn, lo, hi)
        evals += n
        if e <= tol * (hi - lo) / (b - a) or depth >= max_depth:
            value += v
            error += e
        else:
            mid = 0.5 * (lo + hi)
            stack.extend([(lo, mid, depth + 1), (mid, hi, depth + 1)])
    return value, error, evals


def _integrate_radial(piece, lo, hi, breakpoints, tol, budget, anchor=1.0, far_start=0.0):
    """Integrate over lo < s < hi given ``piece(a, b) -> (value, err, evals)``
    valid on breakpoint-free intervals.

    Near 0 and near infinity (beyond ``far_start`` and all breakpoints) the
    range is split into dyadic shells.  A region
    is declared infinite when the shell contributions fail to decay over three
    successive dyadic refinements, and finite once the geometric tail bound
    falls below the tolerance.
    """
    pts = sorted(b for b in breakpoints if lo < b < hi)
    total = _Radial()
    if lo == 0:
        first = pts[0] if pts else (min(anchor, hi) if math.isfinite(hi) else anchor)
        total.add(_shells(piece, first, -1, tol, budget))
        if not pts and first < hi:
            pts = [first]
    else:
        pts = [lo] + pts
    if math.isinf(hi):
        inner = pts
        if far_start > (inner[-1] if inner else 0.0):
            inner = inner + [far_start]
        last = inner[-1] if inner else anchor
        for a, b in zip(inner[:-1], inner[1:]):
            v, e, n = piece(a, b)
            total.add(_Radial(v, e, n))
        total.add(_shells(piece, last, +1, tol, budget))
    else:
        inner = pts + [hi]
        for a, b in zip(inner[:-1], inner[1:]):
            if b > a:
                v, e, n = piece(a, b)
                total.add(_Radial(v, e, n))
    return total


def _shells(piece, start, direction, tol, budget):
    res = _Radial()
    contrib = []
    for k in range(budget):
        if direction < 0:
            a, b = start * 2.0 ** (-k - 1), start * 2.0 ** (-k)
        else:
            a, b = start * 2.0 ** k, start * 2.0 ** (k + 1)
        v, e, n = piece(a, b)
        res.value += v
        res.error += e
        res.evals += n
        contrib.append(abs(v))
        if len(contrib) >= 2 and contrib[-1] == 0 and contrib[-2] == 0:
            return res
        if len(contrib) >= 4:
            c = contrib[-4:]
            if c[0] > 0 and all(c[i + 1] >= c[i] * (1 - 1e-9) for i in range(3)):
                res.verdict = "infinite"
                res.value = math.inf
                return res
            ratios = [c[i + 1] / c[i] for i in range(3) if c[i] > 0]
            if ratios:
                q = max(ratios)
                if q < 1:
                    tail = contrib[-1] * q / (1 - q)
                    if tail <= 0.1 * tol * max(abs(res.value), 1.0):
                        res.value += tail
                        res.error += tail
                        return res
    res.verdict = "inconclusive"
    return res


def _kernel_piece(spec, shift, rng_seed, n_samples=1024, tol=1e-12):
    """Piece integrator for int s^(tau+shift+N-1) p(s) |S| frac(s) ds."""
    N = spec.dimension
    area = sphere_area(N)
    q = spec.exponent + shift + N - 1
    exact_fraction = spec._fraction_exact()
    constant_fraction = spec.is_full_space or spec.is_radial or N == 1 or (
        len(spec.shape) == 1 and isinstance(spec.shape[0], Cone))
    counter = [0]

    def frac(s):
        if exact_fraction:
            return spec.sphere_fraction(s)
        counter[0] += 1
        rng = _rng.generator(rng_seed, "shell", counter[0])
        return spec.sphere_fraction(s, rng=rng, n_samples=n_samples)

    def piece(a, b):
        mid = 0.5 * (a + b)
        pval = 1.0 if spec.radial_profile is None else float(spec.radial_profile(mid))
        if pval == 0:
            return 0.0, 0.0, 1
        if constant_fraction:
            f = float(frac(np.array([mid]))[0])
            if f == 0:
                return 0.0, 0.0, 1
            if abs(q + 1) < 1e-14:
                integral = math.log(b / a)
            else:
                integral = (b ** (q + 1) - a ** (q + 1)) / (q + 1)
            return pval * area * f * integral, 0.0, 1

        def fn(s):
            return pval * area * s ** q * frac(s)

        if exact_fraction:
            scale = abs(_gauss(fn, a, b)[0])
            return _adaptive(fn, a, b, tol * max(scale, 1e-300))
        return _gauss(fn, a, b)

    return piece


def shell_mass(spec, a, b, seed=0, tolerance=1e-10, budget=400, shift=0.0):
    """int_{a < |z| < b} |z|^shift j(z) dz with its error and verdict."""
    piece = _kernel_piece(spec, shift, seed)
    res = _integrate_radial(piece, a, b, spec.breakpoints(), tolerance, budget)
    return res


def total_mass(spec, seed=0, tolerance=1e-10, budget=400):
    """Total mass int j; math.inf when it diverges; Inconclusive if undecided."""
    if spec.analytic_total_mass is not None:
        return spec.analytic_total_mass
    res = shell_mass(spec, 0.0, math.inf, seed, tolerance, budget)
    if res.verdict == "infinite":
        return math.inf
    if res.verdict == "inconclusive":
        raise Inconclusive("total mass: shell budget exhausted before the tail resolved")
    return res.value


@dataclass
class IntegrabilityReport:
    integral_estimate: float
    verdict: str
    error_estimate: float
    samples_used: int
    tolerance: float = 0.0


def check_levy_integrability(spec, tolerance=1e-6, budget=200, seed=0):
    """Estimate int (1 ^ |z|^2) j(z) dz by dyadic radial shells."""
    if not tolerance > 0 or not budget > 0:
        raise ValueError("tolerance and budget must be positive")
    near = _integrate_radial(_kernel_piece(spec, 2.0, seed), 0.0, 1.0, spec.breakpoints(),
                             tolerance, budget)
    far = _integrate_radial(_kernel_piece(spec, 0.0, seed + 1), 1.0, math.inf,
                            spec.breakpoints(), tolerance, budget)
    near.add(far)
    verdict = near.verdict
    est = near.value
    if verdict == "finite" and near.error / max(est, 1.0) > tolerance:
        verdict = "inconclusive"
    return IntegrabilityReport(est, verdict, near.error, near.evals, tolerance)


@dataclass
class NontrivialityResult:
    radius: float
    positive: bool
    measure: float
    floor: float
    sampling_limited: bool


def check_nontriviality(spec, radii, seed=0, n_samples=1024):
    """Per radius r: does {j > 0} meet B_r(0) in a set of positive measure?"""
    radii = list(radii)
    if not radii or any(not r > 0 for r in radii):
        raise ValueError("radii must be nonempty and positive")
    ind = spec.support_indicator()
    exact = ind._fraction_exact()
    out = []
    for i, r in enumerate(radii):
        res = _integrate_radial(_kernel_piece(ind, 0.0, _rng.tag("j2") + seed + i, n_samples),
                                0.0, r, ind.breakpoints(), 1e-12, 400)
        measure = max(res.value, 0.0)
        floor = 0.0 if exact else ball_volume(spec.dimension, r) / n_samples
        positive = measure > floor
        out.append(NontrivialityResult(r, bool(positive), measure, floor,
                                       bool(not exact and not positive)))
    return out


def sphere_profile(spec, r, seed=0, n_samples=4096, with_error=False):
    """vol_{N-1}(A cap S_r) by uniform sphere sampling times the sphere area."""
    if not isinstance(spec, KernelSpec) or spec.radial_profile is not None:
        raise UnsupportedShape("sphere profile needs an indicator-set kernel")
    if not r > 0:
        raise ValueError("r must be positive")
    N = spec.dimension
    area = sphere_area(N) * r ** (N - 1)
    rng = _rng.generator(seed, "sphere_profile")
    dirs, w = _sphere_directions(N, n_samples, rng)
    hits = spec.contains(r * dirs).astype(float)
    frac = float(hits @ w)
    if N == 1:
        err = 0.0
    elif N == 2:
        # stratified angles: only strata straddling the boundary of A are uncertain
        changes = np.count_nonzero(hits != np.roll(hits, 1))
        err = changes / n_samples
    else:
        err = math.sqrt(max(frac * (1 - frac), 1.0 / n_samples) / n_samples)
    return (area * frac, area * err) if with_error else area * frac


# ---------------------------------------------------------------------------
# x-dependent kernels


@dataclass(frozen=True)
class ConstantMultiplier:
    value: float = 1.0

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        return np.full(np.broadcast_shapes(x.shape, np.shape(y))[:-1], self.value)

    @property
    def bounds(self):
        return self.value, self.value

    def sample_x(self, rng, n, N):
        return rng.uniform(-1.0, 1.0, size=(n, N))

    def to_json(self):
        return {"type": "constant", "value": self.value}


@dataclass(frozen=True)
class PeriodicMultiplier:
    """m(x, y) = base + amplitude * sin(k . (x + y))."""

    wavevector: tuple
    amplitude: float = 0.5
    base: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "wavevector", tuple(float(v) for v in self.wavevector))
        if not 0 <= abs(self.amplitude) < self.base:
            raise ValueError("need |amplitude| < base for a positive multiplier")

    def __call__(self, x, y):
        k = np.asarray(self.wavevector)
        return self.base + self.amplitude * np.sin((np.asarray(x) + np.asarray(y)) @ k)

    @property
    def bounds(self):
        a = abs(self.amplitude)
        return self.base - a, self.base + a

    def sample_x(self, rng, n, N):
        # one period of k.(2x) covers every phase; jittered strata densify evenly
        k = np.asarray(self.wavevector)
        kk = float(k @ k)
        t = (np.arange(n) + rng.random(n)) / n * math.pi
        x = (t / kk)[:, None] * k[None, :]
        perp = rng.standard_normal((n, N))
        perp -= (perp @ k)[:, None] * k[None, :] / kk
        return x + perp

    def to_json(self):
        return {"type": "periodic", "wavevector": list(self.wavevector),
                "amplitude": self.amplitude, "base": self.base}


@dataclass(frozen=True)
class StepMultiplier:
    """m(x, y) = low if e . (x + y) < 0 else high."""

    direction: tuple
    low: float
    high: float

    def __post_init__(self):
        object.__setattr__(self, "direction", tuple(float(v) for v in self.direction))
        if not (self.low > 0 and self.high > 0):
            raise ValueError("step multiplier values must be positive")

    def __call__(self, x, y):
        e = np.asarray(self.direction)
        return np.where((np.asarray(x) + np.asarray(y)) @ e < 0, self.low, self.high)

    @property
    def bounds(self):
        return min(self.low, self.high), max(self.low, self.high)

    def sample_x(self, rng, n, N):
        e = np.asarray(self.direction)
        e = e / np.linalg.norm(e)
        t = rng.uniform(-2.0, 2.0, size=n)
        return t[:, None] * e[None, :] + 0.1 * rng.standard_normal((n, N))

    def to_json(self):
        return {"type": "step", "direction": list(self.direction),
                "low": self.low, "high": self.high}


@dataclass(frozen=True)
class XKernelSpec:
    """J(x, y) = m(x, y) j(x - y) with declared bounds m_min <= m <= m_max."""

    base: KernelSpec
    multiplier: object = field(default_factory=ConstantMultiplier)
    m_min: Optional[float] = None
    m_max: Optional[float] = None

    def __post_init__(self):
        lo, hi = self.multiplier.bounds
        m_min = lo if self.m_min is None else float(self.m_min)
        m_max = hi if self.m_max is None else float(self.m_max)
        if not 0 < m_min <= lo or not m_max >= hi:
            raise HypothesisViolation("declared multiplier bounds do not enclose the multiplier")
        object.__setattr__(self, "m_min", m_min)
        object.__setattr__(self, "m_max", m_max)

    @property
    def dimension(self):
        return self.base.dimension

    def __call__(self, x, y):
        x = self.base._as_points(x)
        y = self.base._as_points(y)
        j = eval_kernel(self.base, x - y)
        return self.multiplier(x, y) * j


@dataclass(frozen=True)
class TabulatedKernel:
    """Kernel values known on a finite list of offsets (lookup by exact offset)."""

    dimension: int
    offsets: np.ndarray
    values: np.ndarray

    def lookup(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = np.empty(len(z))
        for i, p in enumerate(z):
            hit = np.flatnonzero(np.all(self.offsets == p, axis=1))
            if hit.size == 0:
                raise KeyError(f"offset {p} not tabulated")
            out[i] = self.values[hit[0]]
        return out


def lower_envelope(xspec, offsets, seed=0, n_x=256):
    """Tabulate min over sampled x of min(J(x, x+z), J(x, x-z)) at each offset z.

    Sampling can only over-estimate the essential infimum; ``xspec.m_min * j``
    is the certified floor.
    """
    N = xspec.dimension
    z = xspec.base._as_points(offsets).reshape(-1, N)
    rng = _rng.generator(seed, "envelope")
    xs = xspec.multiplier.sample_x(rng, n_x, N)
    j = np.asarray(eval_kernel(xspec.base, z), dtype=float)
    env = np.full(len(z), math.inf)
    for x in xs:
        mp = xspec.multiplier(x[None, :], x[None, :] + z)
        mm = xspec.multiplier(x[None, :], x[None, :] - z)
        env = np.minimum(env, np.minimum(mp, mm) * j)
    env = np.where(j == 0, 0.0, env)
    return TabulatedKernel(N, z.copy(), env)


@dataclass
class J3Report:
    estimate: float
    per_x: np.ndarray
    per_x_error: np.ndarray
    samples: np.ndarray


def check_J3(xspec, seed=0, budget=200, n_x=16, n_directions=256, tolerance=1e-6):
    """Estimate sup_x int (1 ^ |z|) |J(x, x+z) - J(x, x-z)| dz over sampled x."""
    if not budget > 0:
        raise ValueError("budget must be positive")
    N = xspec.dimension
    base = xspec.base
    rng = _rng.generator(seed, "J3")
    xs = xspec.multiplier.sample_x(rng, n_x, N)
    dirs, dw = _sphere_directions(N, n_directions, _rng.generator(seed, "J3dirs"))
    area = sphere_area(N)
    vals, errs = [], []
    for x in xs:
        def piece(a, b, x=x):
            def fn(s):
                zs = s[:, None, None] * dirs[None, :, :]
                j = np.asarray(eval_kernel(base, zs))
                dm = np.abs(xspec.multiplier(x, x + zs) - xspec.multiplier(x, x - zs))
                return area * s ** (N - 1) * np.minimum(1.0, s) * ((j * dm) @ dw)
            return _gauss(fn, a, b)

        res = _integrate_radial(piece, 0.0, math.inf, base.breakpoints() + [1.0],
                                tolerance, budget)
        if res.verdict != "finite":
            raise Inconclusive("J3 inner integral did not resolve (diverging or budget exhausted)")
        vals.append(res.value)
        errs.append(res.error)
    vals = np.asarray(vals)
    return J3Report(float(vals.max()), vals, np.asarray(errs), xs)
