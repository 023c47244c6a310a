"""Command-line front end.

Every subcommand writes its artifacts plus one ``manifest.json`` into
``--out`` (when given) and prints a JSON summary on stdout.  Exit codes:
0 success, 2 usage error, 3 invalid configuration, 4 numerical failure
(a diagnostic JSON is printed and, with ``--out``, saved as ``error.json``).
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__, io
from .flow import FlowError, FlowState, SpecError, flow, make_spec, reparametrize_fictitious_play
from .game import GameError, GameMatrix, NoEquilibriumError, check_transversality, shapley_matrix, solve_nash
from .geometry import ProjectionError, project_to_level_set

EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERIC = 2, 3, 4


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    matrix: Optional[str] = None        # GameMatrix JSON path; default is the cyclic 3x3 game
    beta: str = "0.618"
    kind: str = "best_response"
    exact: bool = False
    rho: str = "1"
    eps_tie: float = 1e-10
    eps_level: float = 1e-10
    segment_cap: int = 10 ** 6
    s_cap: float = 1e4
    seed: int = 0
    out: Optional[str] = None
    workers: int = 0

    def validate(self):
        for name in ("eps_tie", "eps_level", "segment_cap", "s_cap"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.kind not in ("best_response", "hamiltonian", "fictitious_play"):
            raise ConfigError(f"unknown dynamics kind {self.kind!r}")
        try:
            if Fraction(self.rho) <= 0:
                raise ConfigError("rho must be positive")
            Fraction(self.beta)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"bad number: {exc}") from exc
        if self.workers < 0:
            raise ConfigError("workers must be non-negative")
        return self

    def scalar(self, text):
        return Fraction(text) if self.exact else float(Fraction(text))

    def load_matrix(self) -> GameMatrix:
        if self.matrix is None:
            return shapley_matrix(Fraction(self.beta), exact=self.exact)
        try:
            return io.read_matrix(self.matrix, exact=self.exact)
        except (OSError, KeyError, ValueError, GameError) as exc:
            raise ConfigError(f"cannot read matrix {self.matrix}: {exc}") from exc

    def to_json(self) -> dict:
        return asdict(self)


_CONFIG_FIELDS = {f.name for f in fields(ExperimentConfig)}


def build_config(args) -> ExperimentConfig:
    """JSON config file first, then explicit flags on top."""
    data = {}
    if getattr(args, "config", None):
        try:
            data = io.read_json(args.config)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        data.pop("schema", None)
        unknown = set(data) - _CONFIG_FIELDS - {"grid"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data.pop("grid", None)
    for name in _CONFIG_FIELDS:
        val = getattr(args, name, None)
        if val is not None:
            data[name] = val
    try:
        cfg = ExperimentConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


# -- helpers ------------------------------------------------------------------

def _parse_vec(text: str, exact: bool):
    try:
        vals = [Fraction(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad vector {text!r}") from exc
    return np.array(vals if exact else [float(v) for v in vals], dtype=object if exact else float)


def random_simplex_point(rng: np.random.Generator, k: int, exact: bool, denominator: int = 1000):
    """Interior point of the simplex; rational in exact mode."""
    w = rng.integers(1, denominator, size=k)
    if exact:
        tot = int(w.sum())
        return np.array([Fraction(int(v), tot) for v in w], dtype=object)
    return w / w.sum()


def _start(spec_text: str, M: GameMatrix, rng, exact):
    if spec_text == "random":
        return random_simplex_point(rng, M.rows, exact), random_simplex_point(rng, M.cols, exact)
    if ";" not in spec_text:
        raise ConfigError("start must be 'random' or 'p1,...;q1,...'")
    a, b = spec_text.split(";", 1)
    return _parse_vec(a, exact), _parse_vec(b, exact)


def _emit(result: dict, cfg: Optional[ExperimentConfig], outdir, inputs=(), summary=None):
    if outdir is not None:
        io.write_manifest(outdir, cfg.to_json() if cfg else {}, inputs, summary)
    print(json.dumps(io._plain(result), sort_keys=True))
    return 0


def _outdir(cfg) -> Optional[Path]:
    return io.ensure_dir(cfg.out) if cfg.out else None


# -- subcommands --------------------------------------------------------------

def cmd_nash(args):
    cfg = build_config(args)
    M = cfg.load_matrix()
    eq = solve_nash(M, check=False)
    out = _outdir(cfg)
    res = eq.to_json()
    if out:
        io.write_json(out / "equilibrium.json", res)
    return _emit(res, cfg, out, [cfg.matrix] if cfg.matrix else [])


def cmd_transversality(args):
    cfg = build_config(args)
    M = cfg.load_matrix()
    rep = check_transversality(M, exhaustive=args.exhaustive)
    out = _outdir(cfg)
    res = rep.to_json()
    if out:
        io.write_json(out / "transversality.json", res)
    return _emit(res, cfg, out, [cfg.matrix] if cfg.matrix else [])


def cmd_simulate(args):
    cfg = build_config(args)
    M = cfg.load_matrix()
    rng = np.random.default_rng(cfg.seed)
    p, q = _start(args.start, M, rng, cfg.exact)
    kind = "best_response" if cfg.kind == "fictitious_play" else cfg.kind
    try:
        spec = make_spec(M, kind)
    except (SpecError, GameError, NoEquilibriumError) as exc:
        raise ConfigError(str(exc)) from exc
    traj = flow(FlowState(M.vec(p), M.vec(q), 0.0), spec, float(args.t), cfg.segment_cap)
    if cfg.kind == "fictitious_play":
        traj = reparametrize_fictitious_play(traj)
    out = _outdir(cfg)
    H = traj.hamiltonian()
    h0 = float(H[0])
    t0 = float(traj.t[0])
    if cfg.kind == "fictitious_play":
        resid = max(abs(float(h) * s / t0 - h0) / h0 for h, s in zip(H, traj.t)) if h0 else 0.0
    else:
        resid = max(abs(float(h) - h0 * math.exp(-(t - t0))) / h0 for h, t in zip(H, traj.t)) if h0 else 0.0
    summary = {"segments": traj.n_segments, "events": len(traj.t) - 2 if len(traj.t) > 1 else 0,
               "sliding_segments": int(np.sum(traj.sliding)), "H0": h0,
               "H_end": float(H[-1]), "H_decay_residual": resid, "seed": cfg.seed}
    if out:
        traj.to_csv(out / "trajectory.csv")
    return _emit(summary, cfg, out, [cfg.matrix] if cfg.matrix else [], summary)


def cmd_project(args):
    cfg = build_config(args)
    M = cfg.load_matrix()
    eq = solve_nash(M, check=False)
    p, q = _start(args.point, M, np.random.default_rng(cfg.seed), cfg.exact)
    pt = project_to_level_set(M, eq, p, q, cfg.scalar(cfg.rho), require_simplex=args.require_simplex)
    res = {"p": list(pt.p), "q": list(pt.q), "rho": pt.rho}
    out = _outdir(cfg)
    if out:
        io.write_json(out / "level_point.json", res)
    return _emit(res, cfg, out)


def _gamma_and_section(cfg):
    from .level import hexagon_itinerary, periodic_orbit_solve
    from .section import build_section
    M = cfg.load_matrix()
    spec = make_spec(M, "best_response")
    rho = cfg.scalar(cfg.rho)
    itin = hexagon_itinerary(spec, rho)
    if itin is None:
        raise FlowError("no hexagonal periodic orbit found for this game")
    gamma = periodic_orbit_solve(itin, spec, rho)
    if gamma is None:
        raise FlowError("hexagon itinerary is not realized")
    return spec, gamma, build_section(gamma, spec)


def cmd_section(args):
    cfg = build_config(args)
    spec, gamma, S = _gamma_and_section(cfg)
    out = _outdir(cfg)
    res = {"period": gamma.period_s, "area": S.area(), "itinerary": [list(map(list, c)) for c in gamma.itinerary]}
    summary = {"period": float(gamma.period_s)}
    if not cfg.exact:
        # annulus ratio used by itinerary realization near the hexagon
        from .section import estimate_annulus_ratio, transversal_section
        res["annulus_ratio"] = summary["annulus_ratio"] = estimate_annulus_ratio(
            transversal_section(gamma, spec), seed=cfg.seed)
    if out:
        io.write_json(out / "gamma.json", gamma.to_json())
        io.write_json(out / "section.json", S.to_json())
        m = spec.M.rows
        io.write_csv(out / "gamma_polyline.csv", [f"p_{i + 1}" for i in range(m)] +
                     [f"q_{j + 1}" for j in range(spec.M.cols)], gamma.polyline_rows())
        poly = S.chart_polygon()
        io.write_csv(out / "section_chart.csv", ["u1", "u2"], [[float(a), float(b)] for a, b in poly + poly[:1]])
    return _emit(res, cfg, out, summary=summary)


def cmd_return_map(args):
    from .section import find_periodic_points, iterate_return
    cfg = build_config(args)
    spec, gamma, S = _gamma_and_section(cfg)
    out = _outdir(cfg)
    u0 = _parse_vec(args.point, cfg.exact)
    orbit = iterate_return(u0, S, spec, args.n)
    rows = orbit.to_rows()
    res = {"returns": args.n, "last": [float(v) for v in orbit.samples[-1]],
           "mean_return_s": float(np.mean([float(s) for s in orbit.return_times])) if args.n else 0.0}
    if args.periodic:
        poly = np.array([np.asarray(v, dtype=float) for v in S.chart_polygon()])
        region = ((poly[:, 0].min(), poly[:, 0].max()), (poly[:, 1].min(), poly[:, 1].max()))
        pts = find_periodic_points(args.periodic, region, S, spec, samples=args.samples)
        res["periodic_points"] = [pp.to_json() for pp in pts]
    if out:
        io.write_csv(out / "orbit.csv", ["u1", "u2", "return_s"], rows)
        if args.periodic:
            io.write_json(out / "periodic_points.json", {"points": res["periodic_points"]})
    return _emit(res, cfg, out, summary={"returns": args.n})


def cmd_modelmap(args):
    from . import modelmap as mm
    cfg = build_config(args)
    spec = mm.ModelMapSpec(exact=cfg.exact)
    out = _outdir(cfg)
    res = {"spec": spec.to_json()}
    if args.start:
        z = _parse_vec(args.start, cfg.exact)
        orbit = mm.model_orbit(tuple(z), args.n, spec)
        res["orbit_end"] = [float(v) for v in orbit[-1].z]
        if out:
            io.write_csv(out / "model_orbit.csv", ["z1", "z2", "norm1"],
                         [[p.z[0], p.z[1], p.norm1] for p in orbit])
    if args.circle_images:
        imgs = mm.circle_images(1.0, args.circle_images, args.samples, spec)
        if out:
            io.write_csv(out / "circle_images.csv", ["iterate", "z1", "z2"],
                         [[k, float(a), float(b)] for k, arr in enumerate(imgs) for a, b in arr])
        res["circle_images"] = len(imgs) - 1
    if args.fixed_points:
        lo, hi = (float(v) for v in args.fixed_points.split(","))
        pts = mm.all_fixed_points((lo, hi), spec)
        res["fixed_points"] = len(pts)
        if out:
            io.write_csv(out / "fixed_points.csv", ["z1", "z2", "norm1"],
                         [[float(a), float(b), float(abs(a) + abs(b))] for a, b in pts])
    return _emit(res, cfg, out)


def cmd_plot(args):
    header, rows = io.read_csv(args.csv)
    try:
        ix, iy = header.index(args.x), header.index(args.y)
    except ValueError as exc:
        raise ConfigError(f"column not found: {exc}") from exc
    groups = {}
    ig = header.index(args.group) if args.group else None
    for r in rows:
        key = r[ig] if ig is not None else ""
        groups.setdefault(key, []).append((float(Fraction(r[ix])), float(Fraction(r[iy]))))
    path = Path(args.svg)
    io.svg_plot([np.array(v) for v in groups.values()], path, title=args.title or "",
                kind=args.kind)
    print(json.dumps({"svg": str(path), "series": len(groups), "points": len(rows)}))
    return 0


# -- sweep --------------------------------------------------------------------

def _section_run(job):
    """One beta of a section sweep: orbit scatter of the return map."""
    beta, cfg_dict, n, start, outdir = job
    cfg = ExperimentConfig(**{**cfg_dict, "beta": beta, "out": None})
    from .section import iterate_return
    try:
        spec, gamma, S = _gamma_and_section(cfg)
        orbit = iterate_return(np.array(start, dtype=float) if not cfg.exact else
                               np.array([Fraction(v) for v in start], dtype=object), S, spec, n)
        name = f"scatter_beta_{beta}.csv"
        io.write_csv(Path(outdir) / name, ["u1", "u2", "return_s"], orbit.to_rows())
        return {"run": f"beta={beta}", "status": "ok", "file": name, "period": float(gamma.period_s),
                "returns": n, "H_drift": ""}
    except (FlowError, GameError, ArithmeticError, ValueError) as exc:
        return {"run": f"beta={beta}", "status": f"error: {exc}", "file": "", "period": "",
                "returns": 0, "H_drift": ""}


def _level_run(job):
    """Random start on a level set: crossings of one switching plane and H drift."""
    k, cfg_dict, s_end = job
    from .level import level_flow
    cfg = ExperimentConfig(**{**cfg_dict, "out": None})
    try:
        M = cfg.load_matrix()
        spec = make_spec(M, "best_response")
        eq = spec.equilibrium
        rng = np.random.default_rng([cfg.seed, k])
        p = random_simplex_point(rng, M.rows, cfg.exact)
        q = random_simplex_point(rng, M.cols, cfg.exact)
        rho = cfg.scalar(cfg.rho)
        start = project_to_level_set(M, eq, p, q, rho, require_simplex=False)
        segs = level_flow(start, spec, s_end, max_segments=cfg.segment_cap)
        drift = 0.0
        crossings = 0
        for a, b in zip(segs, segs[1:]):
            if a.cell[0] != b.cell[0] and b.cell[0] == (1,):
                crossings += 1
        for sg in segs:
            x, y = sg.p_end - eq.p_bar, sg.q_end - eq.q_bar
            drift = max(drift, abs(float(spec.hamiltonian(x, y) - rho)))
        return {"run": f"start={k}", "status": "ok", "file": "", "period": "",
                "returns": crossings, "H_drift": drift}
    except (FlowError, GameError, ProjectionError, ArithmeticError) as exc:
        return {"run": f"start={k}", "status": f"error: {exc}", "file": "", "period": "",
                "returns": 0, "H_drift": ""}


def run_sweep(cfg: ExperimentConfig, grid: dict, outdir: Path) -> List[dict]:
    """Fan independent runs out to a worker pool; rows come back in grid order."""
    base = cfg.to_json()
    if grid.get("type", "section") == "section":
        jobs = [(str(b), base, int(grid.get("returns", 200)), grid.get("start", [0.5, 0.5]), str(outdir))
                for b in grid.get("betas", [])]
        fn = _section_run
    elif grid["type"] == "level":
        jobs = [(k, base, float(grid.get("s_end", 200.0))) for k in range(int(grid.get("starts", 0)))]
        fn = _level_run
    else:
        raise ConfigError(f"unknown grid type {grid['type']!r}")
    if not jobs:
        return []
    workers = cfg.workers or os.cpu_count() or 1
    if workers == 1 or len(jobs) == 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


def cmd_sweep(args):
    cfg = build_config(args)
    grid = {}
    if args.config:
        grid = io.read_json(args.config).get("grid", {})
    if args.betas is not None:
        grid = {**grid, "type": "section",
                "betas": [b for b in args.betas.split(",") if b]}
    if args.starts is not None:
        grid = {**grid, "type": "level", "starts": args.starts}
    if args.returns is not None:
        grid["returns"] = args.returns
    out = _outdir(cfg) or io.ensure_dir("sweep_out")
    rows = run_sweep(cfg, grid, out)
    header = ["run", "status", "file", "period", "returns", "H_drift"]
    io.write_csv(out / "summary.csv", header, [[r[h] for h in header] for r in rows])
    failed = sum(1 for r in rows if r["status"] != "ok")
    summary = {"runs": len(rows), "failed": failed}
    io.write_manifest(out, cfg.to_json(), [], summary, {"grid": grid})
    print(json.dumps(summary, sort_keys=True))
    if rows and failed == len(rows):
        return EXIT_NUMERIC
    return 0


# -- argument parsing ---------------------------------------------------------

def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config; flags override its values")
    p.add_argument("--matrix", default=None, help="GameMatrix JSON file")
    p.add_argument("--beta", default=None, help="parameter of the default cyclic game")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--exact", dest="exact", action="store_true", default=None,
                      help="rational arithmetic")
    mode.add_argument("--float", dest="exact", action="store_false", help="binary floats")
    p.add_argument("--rho", default=None)
    p.add_argument("--eps-tie", dest="eps_tie", type=float, default=None)
    p.add_argument("--eps-level", dest="eps_level", type=float, default=None)
    p.add_argument("--segment-cap", dest="segment_cap", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="artifact directory")
    p.add_argument("--workers", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pwflow", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"pwflow {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("nash", help="equilibrium by support enumeration")
    _common(p)
    p.set_defaults(func=cmd_nash)

    p = sub.add_parser("transversality", help="minor checks of the payoff matrix")
    _common(p)
    p.add_argument("--exhaustive", action="store_true", help="list every failing minor")
    p.set_defaults(func=cmd_transversality)

    p = sub.add_parser("simulate", help="event-driven run of the inclusion")
    _common(p)
    p.add_argument("--kind", default=None,
                   choices=["best_response", "hamiltonian", "fictitious_play"])
    p.add_argument("--t", type=float, default=10.0, help="end time")
    p.add_argument("--start", default="random", help="'random' or 'p1,...;q1,...'")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("project", help="radial projection onto a level set")
    _common(p)
    p.add_argument("--point", required=True, help="'p1,...;q1,...'")
    p.add_argument("--require-simplex", action="store_true")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("section", help="hexagonal orbit and the disc it bounds")
    _common(p)
    p.set_defaults(func=cmd_section)

    p = sub.add_parser("return-map", help="iterate the return map of the disc")
    _common(p)
    p.add_argument("--point", default="0.5,0.5", help="chart point u1,u2")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--periodic", type=int, default=0, help="search periodic points of this period")
    p.add_argument("--samples", type=int, default=12)
    p.set_defaults(func=cmd_return_map)

    p = sub.add_parser("modelmap", help="closed-form random-walk model")
    _common(p)
    p.add_argument("--start", default=None, help="z1,z2")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--circle-images", dest="circle_images", type=int, default=0)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--fixed-points", dest="fixed_points", default=None, help="lo,hi radii")
    p.set_defaults(func=cmd_modelmap)

    p = sub.add_parser("sweep", help="independent runs over a grid")
    _common(p)
    p.add_argument("--betas", default=None, help="comma-separated beta values")
    p.add_argument("--starts", type=int, default=None, help="random level-set starts")
    p.add_argument("--returns", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="render CSV columns to SVG")
    p.add_argument("--csv", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--group", default=None, help="column splitting the series")
    p.add_argument("--kind", default="scatter", choices=["scatter", "polyline"])
    p.add_argument("--title", default=None)
    p.add_argument("--svg", required=True)
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)        # exits 2 on usage errors
    try:
        return args.func(args)
    except ConfigError as exc:
        print(json.dumps({"error": "invalid configuration", "detail": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG
    except (FlowError, GameError, NoEquilibriumError, ProjectionError, SpecError,
            ArithmeticError, np.linalg.LinAlgError) as exc:
        diag = {"error": "numerical failure", "type": type(exc).__name__, "detail": str(exc)}
        if getattr(args, "out", None):
            io.ensure_dir(args.out)
            io.write_json(Path(args.out) / "error.json", diag)
        print(json.dumps(diag))
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
