"""Strong maximum principle: support connectivity, nodal propagation, positivity chains.

A chain certificate records how positivity spreads from a ball around a source
point to a target through balls K_j = B(w_j, eps1/(2j)) and
M_{j+1} = B(w_{j+1}, eps1/(2j+1)), with consecutive centres differing by a
generator of a lattice built from directions where the kernel is positive.
Each link carries a lower bound kappa_j for inf_{x in M_{j+1}} int_{K_j} j(x - y) dy.
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from . import _rng
from .errors import CertificationFailure, InsufficientPositivity, PreconditionViolation
from .kernels import KernelSpec, check_nontriviality
from .lattice import Lattice, construct_path, lattice_point_in_ball
from .maxprinciple import verify_supersolution

__all__ = ["SupportGraph", "support_graph", "StrongMPReport", "strong_mp_check",
           "Generators", "choose_generators", "PositivityCertificate", "build_ssp_chain",
           "link_coupling", "CertificateReport", "verify_certificate", "annulus_negative_control"]


# ---------------------------------------------------------------------------
# support graph


@dataclass
class SupportGraph:
    nodes: np.ndarray  # (n, N) grid indices of interior nodes, C order
    adjacency: sparse.csr_matrix
    labels: np.ndarray  # component per node, numbered by first appearance
    n_components: int

    def component_of(self, grid_shape):
        """Full grid array of component labels, -1 off the mask."""
        out = np.full(grid_shape, -1, dtype=int)
        out[tuple(self.nodes.T)] = self.labels
        return out


def support_graph(form, mask):
    """Interior nodes joined when the weight of their offset is positive."""
    nodes = np.argwhere(mask.interior)
    n = len(nodes)
    if n == 0:
        return SupportGraph(nodes, sparse.csr_matrix((0, 0)), np.zeros(0, dtype=int), 0)
    index = np.full(mask.interior.shape, -1, dtype=np.int64)
    index[tuple(nodes.T)] = np.arange(n)
    shape = np.asarray(mask.interior.shape)
    rows, cols = [], []
    offs, ws = form.weights.half()
    for z, w in zip(offs, ws):
        if not w > 0 or np.any(np.abs(z) >= shape):
            continue
        nb = nodes + z
        ok = np.all((nb >= 0) & (nb < shape), axis=1)
        j = np.full(n, -1, dtype=np.int64)
        j[ok] = index[tuple(nb[ok].T)]
        hit = j >= 0
        rows.append(np.nonzero(hit)[0])
        cols.append(j[hit])
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
    else:
        r = c = np.zeros(0, dtype=np.int64)
    A = sparse.coo_matrix((np.ones(len(r)), (r, c)), shape=(n, n)).tocsr()
    A = ((A + A.T) > 0).astype(np.int8).tocsr()
    k, raw = connected_components(A, directed=False)
    # relabel by first appearance so labels do not depend on scipy internals
    _, first = np.unique(raw, return_index=True)
    order = np.argsort(first)
    relabel = np.empty(k, dtype=int)
    relabel[order] = np.arange(k)
    return SupportGraph(nodes, A, relabel[raw], int(k))


# ---------------------------------------------------------------------------
# nodal strong maximum principle


@dataclass
class StrongMPReport:
    valid: bool
    verdicts: list  # per component: "identically-small", "strictly-positive" or "violation"
    violations: list  # (component, grid index) where the dichotomy fails
    reason: str = ""

    @property
    def mixed(self):
        return bool(self.violations)

    def to_json(self):
        return {"valid": self.valid, "verdicts": self.verdicts,
                "violations": [[c, list(i)] for c, i in self.violations], "reason": self.reason}


def strong_mp_check(p, u, tol=1e-9, graph=None):
    """Per-component dichotomy for a nonnegative supersolution with g >= 0.

    From the nodal inequality u(x)(d(x) + c-(x)) >= sum_z w(z) u(x+z) h^N + r(x)
    with nonnegative neighbour terms, a small value at x bounds every kernel
    neighbour y by t(y) = (t(x)(d + c-) + allowance) / (w(y - x) h^N).  These
    bounds are propagated to closure (smallest bound first); a component whose
    nodes all stay below their bound is identically small, one with no small
    node is strictly positive, anything else is a violation.
    """
    u = np.asarray(u, dtype=float)
    form, mask = p.form, p.mask
    m = mask.interior
    rep = verify_supersolution(p, u, tol)
    if not rep.ok:
        return StrongMPReport(False, [], [], f"not a supersolution (slack {rep.min_slack:.3e})")
    if np.min(u) < -tol:
        return StrongMPReport(False, [], [], "u is not nonnegative")
    if np.min(p.g[m], initial=0.0) < -tol:
        return StrongMPReport(False, [], [], "g must be nonnegative")
    graph = support_graph(form, mask) if graph is None else graph
    if graph.n_components == 0:
        return StrongMPReport(True, [], [])
    hN = form.hN
    deg = form.degree
    c_minus = np.maximum(-p.c, 0.0)
    scale = max(1.0, float(np.max(np.abs(u))))
    # residual allowance and the negative round-off of neighbour values
    neg = hN * form._convolve(np.maximum(-u, 0.0))
    allowance = tol * scale * (1.0 + form.weights.degree) + neg
    nodes = graph.nodes
    stencil = form.weights.stencil()
    K = (stencil.shape[0] - 1) // 2
    A = graph.adjacency
    uval = u[tuple(nodes.T)]
    bound = np.full(len(nodes), np.inf)
    small = uval <= tol * scale
    bound[small] = tol * scale
    heap = [(tol * scale, int(i)) for i in np.nonzero(small)[0]]
    heapq.heapify(heap)
    done = np.zeros(len(nodes), dtype=bool)
    while heap:
        t, i = heapq.heappop(heap)
        if done[i] or t > bound[i]:
            continue
        done[i] = True
        xi = tuple(nodes[i])
        num = t * (deg[xi] + c_minus[xi]) + allowance[xi]
        for j in A.indices[A.indptr[i]:A.indptr[i + 1]]:
            z = nodes[j] - nodes[i]
            w = stencil[tuple(z + K)]
            tj = num / (w * hN)
            if tj < bound[j]:
                bound[j] = tj
                heapq.heappush(heap, (tj, int(j)))
    verdicts, violations = [], []
    for comp in range(graph.n_components):
        idx = np.nonzero(graph.labels == comp)[0]
        if not np.any(small[idx]):
            verdicts.append("strictly-positive")
            continue
        over = idx[uval[idx] > bound[idx]]
        if len(over):
            verdicts.append("violation")
            violations.append((comp, tuple(int(v) for v in nodes[over[0]])))
        else:
            verdicts.append("identically-small")
    return StrongMPReport(True, verdicts, violations)


def annulus_negative_control(h=0.3, seed=0):
    """Kernel 1_{1 <= |z| <= 2} in one dimension on an interval shorter than 1.

    Interior nodes do not interact, so each is its own component; exterior
    data placed on one side makes u positive on some components and zero on
    the others, with every supersolution slack >= 0.  Returns (problem, u, report).
    """
    from .discrete_form import DiscreteForm, DomainMask, Grid
    from .kernels import annulus_kernel
    from .maxprinciple import ProblemData, solve_dirichlet
    kernel = annulus_kernel(1, 1.0, 2.0)
    grid = Grid.cube(1, h, 3.0)
    form = DiscreteForm.build(kernel, grid, 2.5)
    x = grid.coordinates()[..., 0]
    mask = DomainMask(grid, np.abs(x) < 0.45)
    ext = np.where(np.abs(x - 2.1) < 0.5 * h, 1.0, 0.0)
    p = ProblemData(form, mask, 0.0, 0.0, ext, kernel)
    u = solve_dirichlet(p, seed=seed)
    return p, u, strong_mp_check(p, u)


# ---------------------------------------------------------------------------
# generators


@dataclass
class Generators:
    vectors: np.ndarray  # (N, N), rows are v_1..v_N
    theta: float
    conditioning: float  # smallest singular value of the unit-normalised generator matrix
    flagged: bool  # conditioning below the floor
    depth_filtered: bool
    candidates: int


def _sample_annulus(N, eps1, n, rng):
    r = eps1 * (1 + rng.random(n) * (2.0 ** N - 1)) ** (1.0 / N)
    if N == 1:
        d = rng.choice([-1.0, 1.0], size=(n, 1))
    else:
        d = rng.normal(size=(n, N))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
    return r[:, None] * d


def _depth_ok(kernel, pts, theta, radius):
    """j >= theta at the axis points of B(v, radius) as well as at v."""
    N = pts.shape[1]
    ok = np.ones(len(pts), dtype=bool)
    for k in range(N):
        for s in (-1.0, 1.0):
            q = pts.copy()
            q[:, k] += s * radius
            ok &= kernel(q) >= theta
    return ok


def choose_generators(kernel, eps1, seed=0, n_samples=4096, quantile=0.25, cond_floor=1e-2):
    """N sampled directions in B_{2 eps1} \\ B_{eps1} where j >= theta.

    theta is the given quantile of the positive sampled values.  Candidates
    keep a margin of eps1/8 inside {j >= theta} when enough of them do.
    Selection is greedy, maximising the smallest singular value.
    """
    N = kernel.dimension
    if not eps1 > 0:
        raise ValueError("eps1 must be positive")
    if not check_nontriviality(kernel, [2 * eps1], seed)[0].positive:
        raise InsufficientPositivity(f"no positive kernel mass found in B_{2 * eps1}")
    rng = _rng.generator(seed, "generators")
    pts = _sample_annulus(N, eps1, n_samples, rng)
    vals = kernel(pts)
    pos = vals > 0
    if pos.sum() < N:
        raise InsufficientPositivity(f"only {int(pos.sum())} positive samples in the annulus "
                                     "(sampling-limited)")
    theta = float(np.quantile(vals[pos], quantile))
    cand = pts[vals >= theta]
    deep = _depth_ok(kernel, cand, theta, eps1 / 8)
    depth_filtered = bool(deep.sum() >= N)
    if depth_filtered:
        cand = cand[deep]
    units = cand / np.linalg.norm(cand, axis=1, keepdims=True)
    chosen = [0]
    for _ in range(1, N):
        trial = np.concatenate([np.broadcast_to(units[chosen], (len(units), len(chosen), N)),
                                units[:, None, :]], axis=1)
        smin = np.linalg.svd(trial, compute_uv=False)[:, -1]
        smin[chosen] = -1.0
        chosen.append(int(np.argmax(smin)))
    V = cand[chosen]
    cond = float(np.linalg.svd(units[chosen], compute_uv=False)[-1])
    if cond < 1e-12:
        raise InsufficientPositivity("sampled positive directions are linearly dependent "
                                     "(sampling-limited)")
    return Generators(V, theta, cond, bool(cond < cond_floor), depth_filtered, int(len(cand)))


# ---------------------------------------------------------------------------
# link couplings


def _ball_cells(N, radius, div):
    delta = radius / div
    k = np.arange(-div, div + 1) * delta
    grid = np.stack(np.meshgrid(*([k] * N), indexing="ij"), axis=-1).reshape(-1, N)
    half = 0.5 * delta * math.sqrt(N)
    norm = np.linalg.norm(grid, axis=1)
    inside = norm <= radius
    boundary = np.abs(norm - radius) <= half
    corners = np.array(np.meshgrid(*([[-0.5, 0.5]] * N), indexing="ij")).reshape(N, -1).T * delta
    return grid, inside, boundary, corners, delta


def link_coupling(kernel, x, center, radius, div=8):
    """Midpoint estimate of int_{B(center, radius)} j(x - y) dy and an error bound per x.

    The bound charges every cell cut by the sphere with its largest corner
    value and every other cell with the spread of j over its corners and centre.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    N = x.shape[1]
    grid, inside, boundary, corners, delta = _ball_cells(N, radius, div)
    vol = delta ** N
    diff = x[:, None, :] - (np.asarray(center) + grid)[None, :, :]
    mid = kernel(diff)
    at_corners = np.stack([kernel(diff - c) for c in corners], axis=-1)
    hi = np.maximum(at_corners.max(axis=-1), mid)
    lo = np.minimum(at_corners.min(axis=-1), mid)
    est = vol * np.sum(np.where(inside, mid, 0.0), axis=1)
    cell_err = np.where(boundary, hi, hi - lo)
    err = vol * np.sum(np.where(inside | boundary, cell_err, 0.0), axis=1)
    return est, err


_LINK_DIVS = (8, 16, 32, 64)
_LINK_CELLS = 20_000


def _link_kappa(kernel, w_prev, w_next, k_radius, m_radius, seed, link, n_x=64):
    rng = _rng.generator(seed, "link", link)
    N = len(w_prev)
    d = rng.normal(size=(n_x, N))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = m_radius * rng.random(n_x) ** (1.0 / N)
    xs = np.vstack([w_next, w_next + r[:, None] * d])
    # refine until the worst point's error is at most half its estimate
    for div in (d for d in _LINK_DIVS if d == 8 or (2 * d + 1) ** N <= _LINK_CELLS):
        est, err = link_coupling(kernel, xs, w_prev, k_radius, div)
        lower = est - err
        i = int(np.argmin(lower))
        if lower[i] >= 0.5 * est[i]:
            break
    return float(lower[i]), float(est[i]), float(err[i])


# ---------------------------------------------------------------------------
# certificates


@dataclass
class PositivityCertificate:
    kernel: dict
    eps1: float
    theta: float
    generators: np.ndarray
    conditioning: float
    source: np.ndarray
    target: np.ndarray
    rho: float
    points: np.ndarray  # w_1..w_n, w_n = target
    steps: list
    k_radii: list  # radius of K_j, j = 1..n-1
    m_radii: list  # radius of M_{j+1}
    kappa: list  # certified lower bounds
    kappa_estimate: list
    kappa_error: list
    seed: int = 0
    flags: dict = field(default_factory=dict)

    @property
    def n_links(self):
        return len(self.kappa)

    def to_json(self):
        d = asdict(self)
        for k in ("generators", "source", "target", "points"):
            d[k] = np.asarray(d[k]).tolist()
        return d

    def dumps(self):
        return json.dumps(self.to_json())

    @classmethod
    def from_json(cls, d):
        if isinstance(d, str):
            d = json.loads(d)
        d = dict(d)
        for k in ("generators", "source", "target", "points"):
            d[k] = np.asarray(d[k], dtype=float)
        return cls(**d)


def build_ssp_chain(kernel, source, target, eps1, seed=0, reach=None, n_x=64):
    """Certificate carrying positivity from near ``source`` to ``target``."""
    source = np.atleast_1d(np.asarray(source, dtype=float))
    target = np.atleast_1d(np.asarray(target, dtype=float))
    N = kernel.dimension
    if source.shape != (N,) or target.shape != (N,):
        raise ValueError("source and target must be points of the kernel's dimension")
    reach = 1e3 * eps1 if reach is None else reach
    if np.linalg.norm(source - target) > reach:
        raise PreconditionViolation(f"|source - target| exceeds the configured reach {reach}")
    gens = choose_generators(kernel, eps1, seed)
    lat = Lattice(gens.vectors)
    # lattice through the target, start point within half the generator sum of the source
    start = target + lattice_point_in_ball(lat, source - target, lat.gram_scale)
    dist = float(np.linalg.norm(target - start))
    rho = max(lat.gram_scale, dist * (1 + 1e-9) + 1e-12 * lat.gram_scale)
    path = construct_path(lat, start, target, rho)
    pts = path.points
    pts[-1] = target  # remove round-off in the last point
    n = len(pts)
    k_radii = [eps1 / (2 * j) for j in range(1, n)]
    m_radii = [eps1 / (2 * j + 1) for j in range(1, n)]
    kappa, est, err = [], [], []
    for j in range(1, n):
        lo, e, er = _link_kappa(kernel, pts[j - 1], pts[j], k_radii[j - 1], m_radii[j - 1],
                                seed, j, n_x)
        if not lo > 0:
            raise CertificationFailure(f"link {j}: coupling lower bound {lo:.3e} is not positive",
                                       link=j)
        kappa.append(lo)
        est.append(e)
        err.append(er)
    flags = {"ill_conditioned": gens.flagged, "depth_filtered": gens.depth_filtered}
    return PositivityCertificate(kernel.to_json(), float(eps1), gens.theta, gens.vectors,
                                 gens.conditioning, source, target, float(rho), pts,
                                 list(path.steps), k_radii, m_radii, kappa, est, err, int(seed),
                                 flags)


@dataclass
class CertificateReport:
    ok: bool
    failures: list  # (link or -1 for global checks, reason)
    fresh_kappa: list

    def __bool__(self):
        return self.ok

    def to_json(self):
        return asdict(self)


def verify_certificate(cert, kernel=None, seed=1, n_x=64, reproducibility=3.0):
    """Recompute every invariant of a certificate; kappa with a fresh seed."""
    kernel = KernelSpec.from_json(cert.kernel) if kernel is None else kernel
    fails = []
    V = np.asarray(cert.generators, dtype=float)
    N = kernel.dimension
    e1 = cert.eps1
    scale = max(1.0, float(np.max(np.abs(cert.points), initial=0.0)))
    tol = 1e-9 * scale
    if kernel.to_json() != cert.kernel:
        fails.append((-1, "kernel does not match the certificate"))
    norms = np.linalg.norm(V, axis=1)
    if V.shape != (N, N) or np.any(norms < e1 * (1 - 1e-12)) or np.any(norms > 2 * e1 * (1 + 1e-12)):
        fails.append((-1, "generators outside the annulus eps1 <= |v| <= 2 eps1"))
    elif np.any(kernel(V) < cert.theta) or not cert.theta > 0:
        fails.append((-1, "kernel below theta at a generator"))
    elif np.linalg.matrix_rank(V) < N:
        fails.append((-1, "generators are linearly dependent"))
    pts = np.asarray(cert.points, dtype=float)
    n = len(pts)
    if np.linalg.norm(pts[-1] - cert.target) > tol:
        fails.append((-1, "path does not end at the target"))
    if np.linalg.norm(pts[0] - cert.source) > 0.5 * norms.sum() * (1 + 1e-9):
        fails.append((-1, "path start too far from the source"))
    bound = 2 * 4.0 ** N * cert.rho
    if np.any(np.linalg.norm(pts - pts[0], axis=1) > bound * (1 + 1e-12)):
        fails.append((-1, "path leaves the confinement ball"))
    if not (len(cert.k_radii) == len(cert.m_radii) == len(cert.kappa) == n - 1
            and len(cert.steps) == n - 1):
        fails.append((-1, "inconsistent chain lengths"))
        return CertificateReport(False, fails, [])
    fresh = []
    for j in range(1, n):
        diff = pts[j] - pts[j - 1]
        s = cert.steps[j - 1]
        if not 1 <= abs(s) <= N or np.linalg.norm(diff - np.sign(s) * V[abs(s) - 1]) > tol:
            fails.append((j, "step is not a signed generator"))
        kr, mr = cert.k_radii[j - 1], cert.m_radii[j - 1]
        if not (math.isclose(kr, e1 / (2 * j), rel_tol=1e-12)
                and math.isclose(mr, e1 / (2 * j + 1), rel_tol=1e-12)):
            fails.append((j, "ball radii differ from eps1/(2j), eps1/(2j+1)"))
        if not np.linalg.norm(diff) - (kr + mr) > 0 or np.linalg.norm(diff) < e1 * (1 - 1e-12):
            fails.append((j, "balls not separated"))
        lo, _, _ = _link_kappa(kernel, pts[j - 1], pts[j], kr, mr, seed, j, n_x)
        fresh.append(lo)
        stored = cert.kappa[j - 1]
        if not lo > 0:
            fails.append((j, f"fresh coupling bound {lo:.3e} not positive"))
        elif not stored > 0 or not (stored / reproducibility <= lo <= stored * reproducibility):
            fails.append((j, f"stored kappa {stored:.3e} not reproduced (fresh {lo:.3e})"))
    return CertificateReport(not fails, fails, fresh)
