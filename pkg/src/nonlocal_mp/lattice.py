"""Lattice geometry: rounding to the lattice, integer coordinates and confined paths.

A lattice G = sum_k Z v_k is stored with its generators as rows.  Paths are
produced in integer coordinates and emitted as signed generator indices
(+k means +v_k, -k means -v_k), so the step sequence is independent of where
the path starts.

``construct_path`` follows the inductive construction for paths confined to
B_{4^(N-1) rho}: the last active coordinate is peeled off one step at a time,
each time re-centering by a rounded projection onto the span of the lower
generators, and the lower levels are solved with doubled radius.
``bfs_confined_path`` is an exhaustive A* search used as an oracle.
"""
from __future__ import annotations

import heapq
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (CapExceeded, NotALatticePoint, PathConstructionError,
                     PreconditionViolation, RadiusTooSmall)

__all__ = ["Lattice", "GPath", "PathCheck", "lattice_point_in_ball", "decompose",
           "construct_path", "bfs_confined_path", "verify_path", "max_excursion",
           "random_instance"]

TOL = 1e-9


class Lattice:
    """Lattice spanned by the rows of ``generators`` (an N x N matrix)."""

    def __init__(self, generators):
        g = np.array(generators, dtype=float)
        if g.ndim == 1:
            g = g.reshape(1, -1)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError("need N generators in R^N")
        sv = np.linalg.svd(g, compute_uv=False)
        if not sv[-1] > 1e-10 * sv[0]:
            raise ValueError("generators are not linearly independent")
        self.generators = g
        self.generators.setflags(write=False)
        self.dimension = g.shape[0]
        self.lengths = np.linalg.norm(g, axis=1)
        self.gram_scale = float(self.lengths.sum())
        # columns of V are the generators; R gives coordinates in an orthonormal
        # frame adapted to the flag W_1 < W_2 < ...
        self._V = g.T.copy()
        _, self._R = np.linalg.qr(self._V)

    @classmethod
    def standard(cls, N):
        return cls(np.eye(N))

    def point(self, coords):
        return np.asarray(coords, dtype=float) @ self.generators

    def step_vector(self, step):
        return math.copysign(1.0, step) * self.generators[abs(step) - 1]

    def norm_of(self, coords):
        return float(np.linalg.norm(self._R @ np.asarray(coords, dtype=float)))

    def dist_to_span(self, coords, m):
        """Distance from the point with these coordinates to W_m = span(v_1..v_m)."""
        y = self._R @ np.asarray(coords, dtype=float)
        return float(np.linalg.norm(y[m:]))

    def projection_coefficients(self, m):
        """alpha with P_{W_m} v_{m+1} = sum_i alpha_i v_i."""
        R = self._R
        return np.linalg.solve(R[:m, :m], R[:m, m])

    def to_json(self):
        return {"generators": self.generators.tolist()}

    @classmethod
    def from_json(cls, d):
        if isinstance(d, str):
            d = json.loads(d)
        return cls(d["generators"])

    def __eq__(self, other):
        return isinstance(other, Lattice) and np.array_equal(self.generators, other.generators)

    def __repr__(self):
        return f"Lattice({self.generators.tolist()})"


@dataclass
class GPath:
    points: np.ndarray
    steps: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.steps = [int(s) for s in self.steps]
        if len(self.points) != len(self.steps) + 1:
            raise ValueError("points must have one more entry than steps")

    def __len__(self):
        return len(self.steps)

    @classmethod
    def from_steps(cls, lat, start, steps, meta=None):
        start = np.asarray(start, dtype=float)
        steps = np.asarray(steps, dtype=np.int64)
        disp = np.zeros((len(steps) + 1, lat.dimension))
        if len(steps):
            vecs = np.sign(steps)[:, None] * lat.generators[np.abs(steps) - 1]
            disp[1:] = np.cumsum(vecs, axis=0)
        return cls(start + disp, steps.tolist(), meta or {})

    def to_json(self):
        return {"points": self.points.tolist(), "steps": list(self.steps)}

    @classmethod
    def from_json(cls, d):
        if isinstance(d, str):
            d = json.loads(d)
        return cls(np.asarray(d["points"]), d["steps"])


def lattice_point_in_ball(lat, x0, r):
    """Nearest-coordinate rounding V round(V^-1 x0); within gram_scale/2 of x0."""
    if not r > 0.5 * lat.gram_scale:
        raise RadiusTooSmall(f"r={r} must exceed half the generator length sum "
                             f"{0.5 * lat.gram_scale}")
    x0 = np.asarray(x0, dtype=float)
    coef = np.linalg.solve(lat._V, x0)
    return lat.point(np.rint(coef))


def decompose(lat, x, tol=1e-8):
    """Integer coordinates k with V k = x (within tol * gram_scale)."""
    x = np.asarray(x, dtype=float)
    k = np.rint(np.linalg.solve(lat._V, x))
    if np.linalg.norm(lat.point(k) - x) > tol * lat.gram_scale:
        raise NotALatticePoint(f"{x.tolist()} is not a lattice point")
    return k.astype(np.int64)


class _Builder:
    """Inductive path construction in integer coordinates, memoized per call.

    Works on plain Python ints and floats: the dimensions are tiny and the
    recursion makes many small calls.
    """

    def __init__(self, lat):
        self.lat = lat
        self.N = lat.dimension
        self.R = [list(map(float, row)) for row in lat._R]
        self.alpha = [None] + [list(map(float, lat.projection_coefficients(m)))
                               for m in range(1, lat.dimension)]
        self.half_sums = [0.5 * float(lat.lengths[:m].sum()) for m in range(lat.dimension + 1)]
        self.tol = TOL * lat.gram_scale
        self.memo = {}
        self.max_depth = 0

    def _frame(self, c):
        R, N = self.R, self.N
        return [sum(R[i][j] * c[j] for j in range(i, N)) for i in range(N)]

    def _admissible(self, c, m, rho):
        # |x| < rho + sum_{i<=m} |v_i| / 2 and dist(x, W_m) < rho
        y = self._frame(c)
        tail = sum(v * v for v in y[m:])
        full = tail + sum(v * v for v in y[:m])
        return (math.sqrt(full) < rho + self.half_sums[m] + self.tol
                and math.sqrt(tail) < rho + self.tol)

    def path(self, level, c, rho, depth=1):
        key = (level, c, rho)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        if depth > self.N:
            raise PathConstructionError("recursion deeper than the dimension")
        self.max_depth = max(self.max_depth, depth)
        if not self._admissible(c, level - 1, rho):
            raise PathConstructionError(f"level {level} precondition failed for {c}")
        if level == 1:
            k = c[0]
            steps = (1 if k > 0 else -1,) * abs(k)
            self.memo[key] = steps
            return steps
        m = level - 1  # index of the peeled coordinate, 0-based
        k = c[m]
        if k == 0:
            steps = self.path(level - 1, c, 2 * rho, depth + 1)
            self.memo[key] = steps
            return steps
        s = 1 if k > 0 else -1
        alpha = self.alpha[m]
        cur = list(c)
        pieces = []
        while cur[m] != 0:
            before = abs(cur[m])
            cur[m] -= s
            # round the projection of x1 onto W_m to G_m (half-integers go to even)
            ystar = [round(cur[i] + cur[m] * alpha[i]) for i in range(m)]
            for i in range(m):
                cur[i] -= ystar[i]
            if not abs(cur[m]) < before:
                raise PathConstructionError("peeled coordinate failed to decrease")
            if not self._admissible(cur, m, rho):
                raise PathConstructionError("re-centered point left the admissible region")
            pieces.append(tuple(ystar) + (0,) * (self.N - m))
        out = list(self.path(level - 1, tuple(cur), 2 * rho, depth + 1))
        for y in reversed(pieces):
            out.extend(self.path(level - 1, y, 2 * rho, depth + 1))
            out.append(s * level)
        steps = tuple(out)
        self.memo[key] = steps
        return steps


def construct_path(lat, x_start, x_end, rho):
    """G-path from x_start to x_end inside the closed ball B_{4^(N-1) rho}(x_start).

    Only x_end - x_start must lie in G.
    """
    x_start = np.asarray(x_start, dtype=float)
    x_end = np.asarray(x_end, dtype=float)
    N = lat.dimension
    if not rho >= lat.gram_scale * (1 - TOL):
        raise PreconditionViolation(f"rho={rho} is below the generator length sum {lat.gram_scale}")
    dist = float(np.linalg.norm(x_end - x_start))
    if not dist < rho:
        raise PreconditionViolation(f"|x_end - x_start| = {dist} is not below rho={rho}")
    coords = decompose(lat, x_end - x_start)
    builder = _Builder(lat)
    steps = builder.path(N, tuple(int(v) for v in coords), float(rho))
    path = GPath.from_steps(lat, x_start, steps)
    bound = 4.0 ** (N - 1) * rho
    exc = max_excursion(path, x_start)
    path.meta = {"rho": float(rho), "bound": bound, "max_excursion": exc,
                 "excursion_ratio": exc / bound, "depth": builder.max_depth}
    return path


def max_excursion(path, center):
    return float(np.max(np.linalg.norm(path.points - np.asarray(center, dtype=float), axis=1)))


def bfs_confined_path(lat, x_start, x_end, radius, node_cap=1_000_000):
    """Shortest G-path from x_start to x_end inside the closed ball B_radius(x_start).

    A* over integer coordinates; the L1 coordinate distance is the exact
    unconstrained step count, so it is consistent and the first path found is
    shortest.  Neighbor order is +1, -1, +2, -2, ...  Returns None when no
    confined path exists.
    """
    if not node_cap > 0:
        raise ValueError("node_cap must be positive")
    x_start = np.asarray(x_start, dtype=float)
    N = lat.dimension
    target = tuple(int(v) for v in decompose(lat, np.asarray(x_end, dtype=float) - x_start))
    rr2 = (radius + TOL * lat.gram_scale) ** 2
    # orthonormal-frame coordinates y = R c are updated incrementally per move
    cols = [tuple(float(v) for v in lat._R[:, i]) for i in range(N)]
    if lat.norm_of(target) ** 2 > rr2:
        return None
    moves = [(sgn * (i + 1), i, sgn) for i in range(N) for sgn in (1, -1)]
    origin = (0,) * N
    h0 = sum(abs(t) for t in target)
    counter = itertools.count()
    frontier = [(h0, 0, next(counter), origin, (0.0,) * N)]
    parent = {origin: None}
    gbest = {origin: 0}
    closed = set()
    while frontier:
        f, neg_g, _, c, y = heapq.heappop(frontier)
        if c in closed:
            continue
        if c == target:
            steps = []
            while parent[c] is not None:
                prev, st = parent[c]
                steps.append(st)
                c = prev
            return GPath.from_steps(lat, x_start, steps[::-1])
        closed.add(c)
        if len(closed) > node_cap:
            raise CapExceeded(f"search exceeded node_cap={node_cap}")
        g = 1 - neg_g
        hc = f + neg_g
        for st, i, sgn in moves:
            nb = c[:i] + (c[i] + sgn,) + c[i + 1:]
            if nb in closed or gbest.get(nb, math.inf) <= g:
                continue
            col = cols[i]
            ny = tuple(a + sgn * b for a, b in zip(y, col))
            if sum(v * v for v in ny) > rr2:
                continue
            gbest[nb] = g
            parent[nb] = (c, st)
            hn = hc + (1 if abs(nb[i] - target[i]) > abs(c[i] - target[i]) else -1)
            heapq.heappush(frontier, (g + hn, -g, next(counter), nb, ny))
    return None


@dataclass
class PathCheck:
    ok: bool
    index: Optional[int] = None
    reason: str = ""

    def __bool__(self):
        return self.ok


def verify_path(path, lat, center, radius, start=None, end=None):
    """Check steps, optional endpoints and confinement; report the first violation."""
    tol = TOL * lat.gram_scale
    pts = path.points
    center = np.asarray(center, dtype=float)
    if start is not None and np.linalg.norm(pts[0] - np.asarray(start, dtype=float)) > tol:
        return PathCheck(False, 0, "start point mismatch")
    steps = np.asarray(path.steps, dtype=np.int64)
    bad_index = (np.abs(steps) < 1) | (np.abs(steps) > lat.dimension)
    safe = np.where(bad_index, 1, np.abs(steps))
    vecs = np.sign(steps)[:, None] * lat.generators[safe - 1] if len(steps) else np.zeros((0, lat.dimension))
    step_err = np.linalg.norm(np.diff(pts, axis=0) - vecs, axis=1) > tol
    step_bad = np.concatenate([[False], bad_index | step_err])
    out = np.linalg.norm(pts - center, axis=1) > radius + tol
    first = np.flatnonzero(step_bad | out)
    if first.size:
        ell = int(first[0])
        if step_bad[ell]:
            reason = ("step index out of range" if bad_index[ell - 1]
                      else "increment is not the named generator")
        else:
            reason = "point leaves the ball"
        return PathCheck(False, ell, reason)
    if end is not None and np.linalg.norm(pts[-1] - np.asarray(end, dtype=float)) > tol:
        return PathCheck(False, len(pts) - 1, "end point mismatch")
    return PathCheck(True)


def random_instance(rng, N, max_condition=1e3, rho_range=(1.0, 4.0)):
    """Seeded (lattice, rho, start, end) with cond(V) <= max_condition and |end - start| < rho."""
    q1, _ = np.linalg.qr(rng.standard_normal((N, N)))
    q2, _ = np.linalg.qr(rng.standard_normal((N, N)))
    kappa = math.exp(rng.uniform(0.0, math.log(max_condition)))
    sv = np.exp(rng.uniform(0.0, math.log(kappa), size=N))
    sv[0], sv[-1] = 1.0, kappa
    lat = Lattice((q1 * sv) @ q2.T * rng.uniform(0.2, 2.0))
    rho = lat.gram_scale * rng.uniform(*rho_range)
    start = lattice_point_in_ball(lat, rng.uniform(-3, 3, size=N) * lat.gram_scale, lat.gram_scale)
    while True:
        y = rng.standard_normal(N)
        y *= rho * rng.random() ** (1.0 / N) / np.linalg.norm(y)
        c = np.rint(np.linalg.solve(lat._V, y))
        d = lat.point(c)
        if np.linalg.norm(d) < rho * (1 - 1e-9):
            return lat, rho, start, start + d
