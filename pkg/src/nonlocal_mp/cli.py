"""Batch command line: JSON config in, JSON or CSV reports out.

Exit codes: 0 success, 1 checked and false, 2 hypothesis not met,
3 undecided (inconclusive or sampling-limited), 4 invalid configuration.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import kernels as K
from .discrete_form import DiscreteForm, DomainMask, Grid, load_grid_function, save_grid_function
from .errors import (CapExceeded, CertificationFailure, HypothesisViolation, Inconclusive,
                     InsufficientPositivity, NonConvergence, NotALatticePoint,
                     PreconditionViolation)

EXIT_OK, EXIT_FALSE, EXIT_HYPOTHESIS, EXIT_UNDECIDED, EXIT_CONFIG = 0, 1, 2, 3, 4

COMMANDS = ("kernel-check", "lambda1", "lower-bound", "wmp-radius", "solve",
            "verify-supersolution", "strong-mp", "certify", "lattice-path")


class ConfigError(ValueError):
    def __init__(self, field, message):
        super().__init__(f"config field '{field}': {message}")
        self.field = field


# ---------------------------------------------------------------------------
# config access


class Config:
    """Thin wrapper that reports the offending field on every failure."""

    def __init__(self, data, base_dir):
        if not isinstance(data, dict):
            raise ConfigError("<root>", "must be a JSON object")
        self.data = data
        self.base = Path(base_dir)

    def get(self, key, default=..., kind=None):
        if key not in self.data:
            if default is ...:
                raise ConfigError(key, "missing")
            return default
        val = self.data[key]
        if kind is not None:
            try:
                if kind is float:
                    val = float(val)
                    if not math.isfinite(val) and key not in ("c_plus",):
                        raise ValueError
                elif kind is int:
                    if isinstance(val, bool) or int(val) != val:
                        raise ValueError
                    val = int(val)
                elif kind == "vector":
                    val = [float(v) for v in np.atleast_1d(val)]
                elif kind == "vectors":
                    val = [float(v) for v in val]
            except (TypeError, ValueError):
                raise ConfigError(key, f"expected {getattr(kind, '__name__', kind)}, got {val!r}") from None
        return val

    def path(self, key):
        p = self.base / self.get(key)
        if not p.exists():
            raise ConfigError(key, f"file {p} does not exist")
        return p

    def sub(self, key, default=...):
        val = self.get(key, default)
        return val if val is None or val is default else Config(val, self.base)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("--config", str(exc)) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<json>", f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return Config(data, path.parent)


def _kernel(cfg, key="kernel"):
    raw = cfg.get(key)
    if isinstance(raw, str):
        raw = json.loads(cfg.path(key).read_text())
    try:
        return K.KernelSpec.from_json(raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(key, f"invalid kernel spec: {exc}") from None


def _multiplier(d):
    kind = d.get("type")
    if kind == "constant":
        return K.ConstantMultiplier(float(d.get("value", 1.0)))
    if kind == "periodic":
        return K.PeriodicMultiplier(tuple(d["wavevector"]), d.get("amplitude", 0.5), d.get("base", 1.0))
    if kind == "step":
        return K.StepMultiplier(tuple(d["direction"]), d["low"], d["high"])
    raise ConfigError("multiplier.type", f"unknown multiplier {kind!r}")


def _grid(cfg, N):
    g = cfg.sub("grid")
    h = g.get("spacing", kind=float)
    hw = g.get("half_width", kind="vector")
    hw = hw * N if len(hw) == 1 else hw
    if len(hw) != N:
        raise ConfigError("grid.half_width", f"needs 1 or {N} entries")
    center = g.get("center", None, kind="vector")
    try:
        return Grid(N, h, tuple(hw), None if center is None else tuple(center))
    except ValueError as exc:
        raise ConfigError("grid", str(exc)) from None


def _mask(cfg, grid):
    m = cfg.sub("mask")
    kind = m.get("type")
    center = m.get("center", None, kind="vector")
    if kind == "ball":
        return DomainMask.ball(grid, m.get("radius", kind=float), center)
    if kind == "box":
        hw = m.get("half_widths", kind="vector")
        return DomainMask.box(grid, hw * grid.dimension if len(hw) == 1 else hw, center)
    if kind == "ball_of_volume":
        return DomainMask.ball_of_volume(grid, m.get("volume", kind=float), center)
    if kind == "single_cell":
        return DomainMask.single_cell(grid)
    if kind == "file":
        arr = np.load(m.path("path"))
        if arr.shape != grid.shape:
            raise ConfigError("mask.path", f"shape {arr.shape} does not match the grid {grid.shape}")
        return DomainMask(grid, arr.astype(bool))
    raise ConfigError("mask.type", f"unknown mask type {kind!r}")


def _form(cfg, kernel):
    grid = _grid(cfg, kernel.dimension)
    trunc = cfg.get("trunc_radius", kind=float)
    sub = cfg.get("subdivision", 3, kind=int)
    return DiscreteForm.build(kernel, grid, trunc, sub, restricted=bool(cfg.get("restricted", False)),
                              seed=cfg.seed)


def _field(cfg, key, grid):
    val = cfg.get(key, 0.0)
    if isinstance(val, (int, float)):
        return float(val)
    if isinstance(val, dict) and "file" in val:
        u, g2, _ = load_grid_function(cfg.base / val["file"])
        if u.shape != grid.shape:
            raise ConfigError(key, "grid function shape does not match the grid")
        return u
    raise ConfigError(key, "expected a number or {\"file\": path}")


def _problem(cfg):
    from .maxprinciple import ProblemData, load_problem, random_problem
    if "problem_file" in cfg.data:
        return load_problem(cfg.path("problem_file")), None
    if "random_problem" in cfg.data:
        r = cfg.sub("random_problem")
        p, lam = random_problem(r.get("seed", cfg.seed, kind=int), bool(r.get("signed_g", False)),
                                r.get("dimension", None))
        return p, lam
    kernel = _kernel(cfg)
    form = _form(cfg, kernel)
    mask = _mask(cfg, form.grid)
    return ProblemData(form, mask, _field(cfg, "c", form.grid), _field(cfg, "g", form.grid),
                       _field(cfg, "exterior", form.grid), kernel), None


# ---------------------------------------------------------------------------
# commands; each returns (exit code, report dict, optional csv rows)


def cmd_kernel_check(cfg):
    kernel = _kernel(cfg)
    radii = cfg.get("radii", [0.5, 1.0, 2.0], kind="vectors")
    lev = K.check_levy_integrability(kernel, cfg.get("tolerance", 1e-6, kind=float),
                                     cfg.get("budget", 200, kind=int), cfg.seed)
    nt = K.check_nontriviality(kernel, radii, cfg.seed)
    rep = {"j1": {"verdict": lev.verdict, "integral": lev.integral_estimate,
                  "error": lev.error_estimate, "samples": lev.samples_used},
           "j2": [{"radius": r.radius, "positive": r.positive, "measure": r.measure,
                   "sampling_limited": r.sampling_limited} for r in nt]}
    code = EXIT_OK
    if "multiplier" in cfg.data:
        xk = K.XKernelSpec(kernel, _multiplier(cfg.get("multiplier")))
        try:
            j3 = K.check_J3(xk, cfg.seed)
            rep["J3"] = {"verdict": "finite", "estimate": j3.estimate}
        except Inconclusive as exc:
            rep["J3"] = {"verdict": "inconclusive", "reason": str(exc)}
            code = EXIT_UNDECIDED
    if lev.verdict == "inconclusive" or any(r.sampling_limited for r in nt):
        code = EXIT_UNDECIDED
    elif lev.verdict == "infinite" or not all(r.positive for r in nt):
        code = EXIT_FALSE
    return code, rep, None


def cmd_lambda1(cfg):
    from .spectral import gershgorin_lower_bound, lambda1, lambda1_lower_bound
    kernel = _kernel(cfg)
    form = _form(cfg, kernel)
    mask = _mask(cfg, form.grid)
    res = lambda1(form, mask, cfg.get("rel_tol", 1e-8, kind=float), cfg.seed)
    rep = {"lambda1": res.value, "residual": res.residual, "iterations": res.iterations,
           "nodes": mask.count, "volume": mask.volume,
           "gershgorin_lower_bound": gershgorin_lower_bound(form, mask)}
    rep["rearrangement_lower_bound"] = lambda1_lower_bound(kernel, mask.volume, cfg.seed)
    if cfg.out is not None and cfg.get("save_vector", False):
        save_grid_function(cfg.out / "eigenvector.json", res.vector, form.grid)
    rows = [["lambda1", "residual", "nodes"], [res.value, res.residual, mask.count]]
    return EXIT_OK, rep, rows


def cmd_lower_bound(cfg):
    from .spectral import rearrangement_profile, small_volume_limit_check
    kernel = _kernel(cfg)
    radii = cfg.get("radii", kind="vectors")
    if not radii or min(radii) <= 0:
        raise ConfigError("radii", "must be a nonempty list of positive numbers")
    prof = rearrangement_profile(kernel, radii, cfg.seed)
    rep = {"profile": [{"r": float(r), "d": float(d), "lower_bound": float(b), "error": float(e)}
                       for r, d, b, e in zip(prof.radii, prof.d, prof.lower_bound, prof.error)]}
    rows = [["r", "d", "lower_bound", "error"]] + [[float(r), float(d), float(b), float(e)] for r, d, b, e in
                                                   zip(prof.radii, prof.d, prof.lower_bound, prof.error)]
    code = EXIT_OK
    if "small_volume" in cfg.data:
        sv = cfg.sub("small_volume")
        svrows = small_volume_limit_check(kernel, sv.get("r", kind="vectors"), sv.get("spacing", kind=float),
                                          sv.get("trunc_radius", kind=float), sv.get("subdivision", 3, kind=int),
                                          cfg.seed)
        rep["small_volume"] = [{"r": r.r, "lambda1": r.lambda1, "lower_bound": r.lower_bound,
                                "total_mass": r.total_mass, "slack": r.slack, "bound_ok": r.bound_ok}
                               for r in svrows]
        rows = [["r", "lambda1", "lower_bound", "total_mass", "slack"]] + [
            [r.r, r.lambda1, r.lower_bound, r.total_mass, r.slack] for r in svrows]
        if not all(r.bound_ok for r in svrows):
            code = EXIT_FALSE
    return code, rep, rows


def cmd_wmp_radius(cfg):
    from .maxprinciple import small_volume_radius
    kernel = _kernel(cfg)
    c_plus = cfg.get("c_plus", kind=float)
    br = small_volume_radius(kernel, c_plus, cfg.seed, cfg.get("r_max", 2.0, kind=float))
    rep = {"r": br.r, "r_fail": br.r_fail, "c_plus": c_plus, "total_mass": K.total_mass(kernel, cfg.seed)}
    return EXIT_OK, rep, [["r", "r_fail"], [br.r, br.r_fail]]


def cmd_solve(cfg):
    from .maxprinciple import solve_dirichlet, weak_mp_bound_check
    from .spectral import lambda1
    p, lam = _problem(cfg)
    lam = lambda1(p.form, p.mask, seed=cfg.seed).value if lam is None else lam
    u = solve_dirichlet(p, cfg.get("rel_tol", 1e-10, kind=float), lam=lam, seed=cfg.seed)
    wmp = weak_mp_bound_check(p, u, lam=lam)
    m = p.mask.interior
    rep = {"lambda1": lam, "c_plus_norm": p.c_plus_norm, "min_u": float(u[m].min()),
           "max_u": float(u[m].max()), "weak_mp": wmp.to_json()}
    if cfg.out is not None:
        save_grid_function(cfg.out / "solution.json", u, p.form.grid)
        rep["solution"] = "solution.json"
    return (EXIT_OK if wmp.ok else EXIT_FALSE), rep, None


def _u(cfg, grid):
    if "u" not in cfg.data:
        raise ConfigError("u", "missing (expected {\"file\": path})")
    u = _field(cfg, "u", grid)
    return np.broadcast_to(u, grid.shape).astype(float)


def cmd_verify_supersolution(cfg):
    from .maxprinciple import verify_supersolution
    p, _ = _problem(cfg)
    rep = verify_supersolution(p, _u(cfg, p.form.grid), cfg.get("tol", 1e-10, kind=float))
    return (EXIT_OK if rep.ok else EXIT_FALSE), rep.to_json(), None


def cmd_strong_mp(cfg):
    from .maxprinciple import solve_dirichlet
    from .propagation import strong_mp_check
    p, lam = _problem(cfg)
    u = _u(cfg, p.form.grid) if "u" in cfg.data else solve_dirichlet(p, lam=lam, seed=cfg.seed)
    rep = strong_mp_check(p, u, cfg.get("tol", 1e-9, kind=float))
    if not rep.valid:
        return EXIT_HYPOTHESIS, rep.to_json(), None
    return (EXIT_FALSE if rep.mixed else EXIT_OK), rep.to_json(), None


def cmd_certify(cfg):
    from .propagation import PositivityCertificate, build_ssp_chain, verify_certificate
    verify_seed = cfg.get("verify_seed", cfg.seed + 1, kind=int)
    if cfg.verify_only:
        cert = PositivityCertificate.from_json(cfg.path("certificate").read_text())
        kernel = _kernel(cfg) if "kernel" in cfg.data else None
    else:
        kernel = _kernel(cfg)
        cert = build_ssp_chain(kernel, cfg.get("source", kind="vector"), cfg.get("target", kind="vector"),
                               cfg.get("eps1", kind=float), cfg.seed)
        if cfg.out is not None:
            (cfg.out / "certificate.json").write_text(json.dumps(cert.to_json(), sort_keys=True, indent=1))
    rep = verify_certificate(cert, kernel, verify_seed)
    out = {"verified": rep.ok, "links": cert.n_links, "failures": rep.failures,
           "kappa": list(cert.kappa), "fresh_kappa": rep.fresh_kappa, "flags": cert.flags}
    return (EXIT_OK if rep.ok else EXIT_FALSE), out, None


def cmd_lattice_path(cfg):
    from .lattice import Lattice, bfs_confined_path, construct_path, verify_path
    gens = cfg.get("generators")
    try:
        lat = Lattice(np.asarray(gens, dtype=float))
    except ValueError as exc:
        raise ConfigError("generators", str(exc)) from None
    start = np.asarray(cfg.get("start", kind="vector"))
    end = np.asarray(cfg.get("end", kind="vector"))
    rho = cfg.get("rho", kind=float)
    path = construct_path(lat, start, end, rho)
    R = 4.0 ** (lat.dimension - 1) * rho
    chk = verify_path(path, lat, start, R, start=start, end=end)
    rep = {"steps": path.steps, "length": len(path), "max_excursion": path.meta["max_excursion"],
           "bound": R, "verified": bool(chk), "reason": chk.reason}
    code = EXIT_OK if chk else EXIT_FALSE
    try:
        b = bfs_confined_path(lat, start, end, R, cfg.get("node_cap", 1_000_000, kind=int))
        rep["bfs_found"] = b is not None
        rep["bfs_length"] = None if b is None else len(b)
        if b is None:
            code = EXIT_FALSE
    except CapExceeded:
        rep["bfs_found"] = None
        code = max(code, EXIT_UNDECIDED) if code == EXIT_OK else code
    if cfg.out is not None:
        (cfg.out / "path.json").write_text(json.dumps(path.to_json()))
    return code, rep, [["step"]] + [[s] for s in path.steps]


HANDLERS = {"kernel-check": cmd_kernel_check, "lambda1": cmd_lambda1, "lower-bound": cmd_lower_bound,
            "wmp-radius": cmd_wmp_radius, "solve": cmd_solve,
            "verify-supersolution": cmd_verify_supersolution, "strong-mp": cmd_strong_mp,
            "certify": cmd_certify, "lattice-path": cmd_lattice_path}


# ---------------------------------------------------------------------------
# entry point


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def _csv_text(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def build_parser():
    ap = argparse.ArgumentParser(prog="nonlocal-mp", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    ap.add_argument("--out", default=None, help="directory for report files")
    ap.add_argument("--verify-only", action="store_true", help="certify: only re-verify a stored certificate")
    ap.add_argument("--format", choices=("json", "csv"), default="json")
    return ap


def run(command, cfg, out=None, fmt="json", verify_only=False, seed=None):
    """Run one command on a Config; returns (exit code, report dict)."""
    if seed is None:
        if "seed" not in cfg.data:
            raise ConfigError("seed", "missing: pass --seed or set it in the config")
        seed = cfg.get("seed", kind=int)
    if seed < 0 or seed >= 2 ** 64:
        raise ConfigError("seed", "must be an unsigned 64-bit integer")
    declared = cfg.data.get("command")
    if declared is not None and declared != command:
        raise ConfigError("command", f"config is for {declared!r}, not {command!r}")
    cfg.seed = seed
    cfg.out = None if out is None else Path(out)
    cfg.verify_only = verify_only
    if cfg.out is not None:
        cfg.out.mkdir(parents=True, exist_ok=True)
    code, report, rows = HANDLERS[command](cfg)
    report = _jsonable({"command": command, "seed": seed, "exit_code": code, **report})
    if cfg.out is not None:
        name = command.replace("-", "_")
        (cfg.out / f"{name}.json").write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
        if fmt == "csv" and rows:
            (cfg.out / f"{name}.csv").write_text(_csv_text(rows))
    return code, report


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        code, report = run(args.command, cfg, args.out, args.format, args.verify_only, args.seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (HypothesisViolation, PreconditionViolation, NotALatticePoint) as exc:
        print(f"hypothesis not met: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except (Inconclusive, InsufficientPositivity, CertificationFailure, NonConvergence,
            CapExceeded) as exc:
        print(f"undecided: {exc}", file=sys.stderr)
        return EXIT_UNDECIDED
    print(json.dumps(report, sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
