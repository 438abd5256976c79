"""Command-line front end: ``artifact <subcommand> [options]``.

Every subcommand writes into ``--out`` (default ``./out``). Numeric files are
CSV with a header row, each with a ``<file>.json`` sidecar recording the
config, its hash, the tolerances applied and library versions.

Exit codes: 0 success, 1 validation failure (a residual above tolerance or a
failed numerical run), 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ArtifactError, FlowBlowupError, InvalidArgumentError

SUBCOMMANDS = ("report", "check", "graph-report", "variation-check", "distance", "approx", "flow", "metric")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config and output helpers


def load_json_arg(value):
    """A JSON object from a file path, an inline JSON string, or a bare surface kind."""
    if value is None or isinstance(value, (dict, list, int, float)):
        return value
    p = Path(value)
    if p.exists():
        with open(p) as fh:
            return json.load(fh)
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        if value.isidentifier():
            return {"kind": value}
        raise UsageError(f"cannot read {value!r} as a file or JSON")


def config_hash(cfg) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def versions() -> dict:
    import scipy

    return {"artifact": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


class Outputs:
    """Writes result files plus sidecars under one directory."""

    def __init__(self, out: str, command: str, config: dict, tolerances: dict | None = None):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.config = config
        self.tolerances = tolerances or {}
        self.written = []

    def sidecar(self, path: Path, extra: dict | None = None):
        meta = {"command": self.command, "file": path.name, "config": self.config,
                "config_hash": config_hash(self.config), "tolerances": self.tolerances,
                "versions": versions()}
        if extra:
            meta.update(extra)
        with open(str(path) + ".json", "w") as fh:
            json.dump(meta, fh, indent=2, default=_jsonable)

    def csv(self, name: str, header, rows, extra: dict | None = None) -> Path:
        path = self.dir / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        self.sidecar(path, extra)
        self.written.append(path)
        return path

    def json(self, name: str, payload: dict) -> Path:
        path = self.dir / name
        body = {"command": self.command, "config_hash": config_hash(self.config),
                "tolerances": self.tolerances, "versions": versions(), **payload}
        with open(path, "w") as fh:
            json.dump(body, fh, indent=2, default=_jsonable)
        self.written.append(path)
        return path

    def register(self, path: Path, extra: dict | None = None):
        self.sidecar(Path(path), extra)
        self.written.append(Path(path))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    return str(o)


def merged_config(args, keys) -> dict:
    """``--config`` file values overridden by explicitly given flags."""
    cfg = dict(load_json_arg(args.config) or {}) if getattr(args, "config", None) else {}
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _surface(cfg, key="surface"):
    from .refsurface import surface_from_config

    if cfg.get(key) is None:
        raise UsageError(f"missing --{key}")
    scfg = load_json_arg(cfg[key])
    cfg[key] = scfg
    return surface_from_config(scfg)


def _function(cfg, key, dim, default=None):
    from .ambient import function_from_config

    spec = cfg.get(key, default)
    if spec is None:
        return None
    spec = load_json_arg(spec) if isinstance(spec, str) else spec
    cfg[key] = spec
    return function_from_config(spec, dim)


# ---------------------------------------------------------------------------
# subcommands


def cmd_report(args) -> int:
    from .refsurface import SurfaceSampling
    from .surfcalc import integrate

    cfg = merged_config(args, ["surface", "resolution"])
    S = _surface(cfg)
    res = int(cfg.get("resolution", 32))
    smp = SurfaceSampling(S, res)
    Js = smp.jets(2)
    w = smp.quadrature_weights()
    n, m = S.dim, S.dim - 1
    out = Outputs(args.out, "report", cfg)
    header = (["chart"] + [f"theta{i}" for i in range(m)] + [f"x{a}" for a in range(n)]
              + [f"nu{a}" for a in range(n)] + ["kappa"] + [f"kappa_{i}" for i in range(m)]
              + ["gauss", "trL2", "weight"])
    rows = []
    for g, J, wc in zip(smp.grids, Js, w):
        for i in np.flatnonzero(g.owned):
            rows.append([g.chart_id, *g.theta[i], *J.p[i], *J.nu[i], J.kappa[i], *J.kappas[i],
                         J.gauss[i], J.trL2[i], wc[i]])
    out.csv("report.csv", header, rows)
    kap = np.array([r[1 + m + 2 * n] for r in rows])
    summary = {"surface": cfg["surface"], "resolution": res, "area": integrate([np.ones(len(g.theta)) for g in smp.grids], smp),
               "total_mean_curvature": integrate([J.kappa for J in Js], smp),
               "kappa_min": float(kap.min()), "kappa_max": float(kap.max()), "samples": len(rows)}
    out.json("report.json", summary)
    print(json.dumps(summary, default=_jsonable))
    return 0


def cmd_check(args) -> int:
    from .checks import TOLERANCES, invariant_suite

    cfg = merged_config(args, ["surface", "resolution", "seed"])
    S = _surface(cfg)
    res = invariant_suite(S, int(cfg.get("resolution", 96)), int(cfg.get("seed", 0)))
    out = Outputs(args.out, "check", cfg, TOLERANCES)
    out.csv("check.csv", ["name", "residual", "tolerance", "passed"],
            [[r.name, r.value, r.tol, int(r.passed)] for r in res])
    ok = all(r.passed for r in res)
    payload = {"surface": cfg["surface"], "passed": ok, "residuals": [r.to_dict() for r in res]}
    out.json("check.json", payload)
    print(json.dumps(payload, default=_jsonable))
    return 0 if ok else 1


GRAPH_TOL = {"metric_formula": 1e-9, "determinant_formula": 1e-9}


def cmd_graph_report(args) -> int:
    from .normalgraph import HeightFunction, ellipticity_constant, graph_geometry, mean_curvature_of_graph
    from .refsurface import SurfaceSampling
    from .surfcalc import integrate

    cfg = merged_config(args, ["surface", "height", "resolution"])
    S = _surface(cfg)
    res = int(cfg.get("resolution", 32))
    smp = SurfaceSampling(S, res)
    rho = _function(cfg, "height", S.dim, {"kind": "waves", "seed": 0, "amplitude": 0.1})
    H = HeightFunction.from_function(smp, rho)
    geos = graph_geometry(H)
    kap = mean_curvature_of_graph(H).values
    Js = smp.jets()
    n = S.dim
    out = Outputs(args.out, "graph-report", cfg, GRAPH_TOL)
    header = (["chart"] + [f"theta{i}" for i in range(n - 1)] + ["rho"] + [f"y{a}" for a in range(n)]
              + ["kappa_rho", "alpha", "beta", "measure"])
    rows = []
    gerr = derr = 0.0
    eta = np.inf
    for g, geo, k, J, r in zip(smp.grids, geos, kap, Js, H.field.values):
        own = g.owned
        gerr = max(gerr, float(np.max(np.abs(geo.G - geo.G_formula)[own])))
        derr = max(derr, float(np.max(np.abs(geo.detg - geo.detg_formula)[own])))
        for i in np.flatnonzero(own):
            rows.append([g.chart_id, *g.theta[i], r[i], *geo.q[i], k[i], geo.alpha[i], geo.beta[i], geo.measure[i]])
    for geo, J, g in zip(geos, Js, smp.grids):
        sel = g.owned
        if np.any(sel):
            eta = min(eta, ellipticity_constant(_subset(geo, sel), _subset(J, sel)))
    out.csv("graph_report.csv", header, rows)
    ok = gerr <= GRAPH_TOL["metric_formula"] and derr <= GRAPH_TOL["determinant_formula"]
    payload = {"surface": cfg["surface"], "height": cfg["height"], "rho0": H.rho0, "sup_rho": H.sup,
               "area": integrate([geo.measure for geo in geos], smp), "reference_area": integrate([np.ones(len(g.theta)) for g in smp.grids], smp),
               "metric_formula_residual": gerr, "determinant_formula_residual": derr,
               "ellipticity_constant": eta, "passed": bool(ok)}
    out.json("graph_report.json", payload)
    print(json.dumps(payload, default=_jsonable))
    return 0 if ok else 1


def _subset(obj, sel):
    """Shallow copy of a dataclass of per-sample arrays restricted to ``sel``."""
    import copy

    new = copy.copy(obj)
    N = len(sel)
    for k, v in vars(obj).items():
        if isinstance(v, np.ndarray) and v.ndim >= 1 and v.shape[0] == N:
            setattr(new, k, v[sel])
    return new


def cmd_variation_check(args) -> int:
    from .refsurface import SurfaceSampling
    from .surfcalc import SurfaceField
    from .variations import CARRIER_SCALAR, CARRIER_VECTOR, GENERAL_RHO, MIN_ORDER, QUANTITIES, fd_variation_report

    cfg = merged_config(args, ["surface", "which", "direction", "height", "carrier", "resolution"])
    which = cfg.get("which", "mean_curvature")
    if which not in QUANTITIES:
        raise UsageError(f"--which must be one of {', '.join(QUANTITIES)}")
    cfg["which"] = which
    S = _surface(cfg)
    n = S.dim
    smp = SurfaceSampling(S, int(cfg.get("resolution", 16)))
    h = SurfaceField.from_function(smp, _function(cfg, "direction", n, {"kind": "waves", "seed": 1, "amplitude": 1.0}))
    base = None
    if which in GENERAL_RHO and cfg.get("height") is not None:
        base = SurfaceField.from_function(smp, _function(cfg, "height", n))
    carrier = None
    if which in CARRIER_SCALAR:
        carrier = SurfaceField.from_function(smp, _function(cfg, "carrier", n, {"kind": "waves", "seed": 2}))
    elif which in CARRIER_VECTOR:
        default = {"kind": "vector", "components": [{"kind": "waves", "seed": 2 + a} for a in range(n)]}
        carrier = SurfaceField.from_function(smp, _function(cfg, "carrier", n, default))
    rep = fd_variation_report(which, h, base, carrier)
    out = Outputs(args.out, "variation-check", cfg, {"min_order": MIN_ORDER})
    out.csv(f"variation_{which}.csv", ["eps", "error", "order", "roundoff"],
            [[r.eps, r.error, r.order, int(r.roundoff)] for r in rep.rows])
    payload = {"surface": cfg["surface"], **rep.to_dict()}
    out.json(f"variation_{which}.json", payload)
    print(json.dumps({k: v for k, v in payload.items() if k != "rows"}, default=_jsonable))
    return 0 if rep.passed else 1


def cmd_distance(args) -> int:
    from .tubular import TubularNeighborhood

    cfg = merged_config(args, ["surface", "points", "random", "seed", "level_spacing", "resolution"])
    S = _surface(cfg)
    n = S.dim
    tube = TubularNeighborhood(S, cfg.get("resolution"))
    est = tube.reach()
    if cfg.get("points"):
        X = np.loadtxt(cfg["points"], delimiter=",", ndmin=2)
        if X.shape[1] != n:
            raise UsageError(f"points file must have {n} columns")
    else:
        rng = np.random.default_rng(int(cfg.get("seed", 0)))
        N = int(cfg.get("random", 100))
        cfg["random"] = N
        smp_pts = np.concatenate([J.p for J in tube.sampling.jets(1)])
        nus = np.concatenate([J.nu for J in tube.sampling.jets(1)])
        pick = rng.integers(0, len(smp_pts), N)
        X = smp_pts[pick] + rng.uniform(-0.9, 0.9, (N, 1)) * est.width * nus[pick]
    dd = tube.distance_derivatives(X, check_tube=True)
    pr = dd["projection"]
    header = ([f"x{a}" for a in range(n)] + ["distance"] + [f"pi{a}" for a in range(n)]
              + [f"nu{a}" for a in range(n)] + ["laplacian", "chart", "converged", "reconstruction"])
    rec = pr.reconstruction_error()
    rows = [[*X[i], pr.distance[i], *pr.point[i], *pr.normal[i], dd["laplacian"][i], int(pr.chart_id[i]),
             int(pr.converged[i]), rec[i]] for i in range(len(X))]
    out = Outputs(args.out, "distance", cfg, {"reconstruction": 1e-10})
    out.csv("distance.csv", header, rows)
    payload = {"surface": cfg["surface"], "width": est.width, "rho0": est.rho0, "pair_bound": est.pair_bound,
               "witness": est.witness, "max_reconstruction": float(rec.max()), "all_converged": bool(pr.converged.all())}
    if cfg.get("level_spacing"):
        h = float(cfg["level_spacing"])
        P = np.concatenate([J.p for J in tube.sampling.jets(1)])
        margin = 2 * est.width / 3 + 3 * h
        lf = tube.level_function(P.min(axis=0) - margin, P.max(axis=0) + margin, h)
        binp, hdr = lf.save(out.dir / "level")
        out.register(binp, {"header": str(hdr)})
        payload["level_function"] = {"binary": str(binp), "header": str(hdr), "shape": list(lf.shape)}
    out.json("distance.json", payload)
    print(json.dumps(payload, default=_jsonable))
    return 0 if payload["all_converged"] and payload["max_reconstruction"] <= 1e-10 else 1


def cmd_approx(args) -> int:
    from .approx import TABLE_HEADER, approximation_table

    cfg = merged_config(args, ["surface", "ks", "spacing", "resolution"])
    S = _surface(cfg)
    ks = [int(k) for k in cfg.get("ks", [16, 32, 64, 128])]
    cfg["ks"] = ks
    spacing = float(cfg.get("spacing", 0.02))
    rows, phi = approximation_table(S, ks, spacing=spacing, resolution=int(cfg.get("resolution", 64)),
                                    R=cfg.get("R"), progress=lambda msg: print(msg, file=sys.stderr, flush=True))
    out = Outputs(args.out, "approx", cfg)
    out.csv("approx_table.csv", TABLE_HEADER, [r.as_list() for r in rows])
    payload = {"surface": cfg["surface"], "rows": [dict(zip(TABLE_HEADER, r.as_list())) for r in rows],
               "grid_shape": list(phi.shape), "width": phi.width}
    out.json("approx.json", payload)
    print(json.dumps(payload, default=_jsonable))
    return 0


def cmd_flow(args) -> int:
    from .flow import FlowSolver, FlowState, export_obj, run
    from .refsurface import SurfaceSampling

    cfg = merged_config(args, ["surface", "resolution", "T", "dt"])
    S = _surface(cfg)
    smp = SurfaceSampling(S, int(cfg.get("resolution", 64)))
    rho = _function(cfg, "initial", S.dim)
    state = FlowState.initial(smp, rho)
    solver = FlowSolver(smp, cfg.get("law", "mcf"), int(cfg.get("stencil_order", 4)), float(cfg.get("cfl", 0.4)))
    T, dt = float(cfg.get("T", 0.01)), float(cfg.get("dt", 1e-4))
    snaps = [float(t) for t in cfg.get("snapshots", [0.0, T])]
    out = Outputs(args.out, "flow", cfg)
    code = 0
    rows = []  # kept by the observer so a blowup still reports the history
    try:
        res = run(state, T=T, dt=dt, solver=solver, snapshot_times=snaps,
                  diagnostics_every=int(cfg.get("diagnostics_every", 10)),
                  observers=[lambda st, d: rows.append(d)])
        snapshots, final = res.snapshots, res.final
    except FlowBlowupError as e:
        print(f"flow stopped: {e}", file=sys.stderr)
        final = e.last_state
        if not rows or rows[-1]["step"] != final.steps:
            rows.append(solver.diagnostics(final))
        snapshots = {final.t: final}
        code = 1
    header = list(rows[0].keys())
    out.csv("flow_diagnostics.csv", header, [[r[k] for k in header] for r in rows])
    for t, st in sorted(snapshots.items()):
        path = export_obj(st, out.dir / f"snapshot_t{t:.6f}.obj")
        out.register(path, {"t": st.t, "steps": st.steps})
    payload = {"surface": cfg["surface"], "final_t": final.t, "steps": final.steps, "final": rows[-1],
               "snapshots": sorted(snapshots)}
    out.json("flow.json", payload)
    print(json.dumps(payload, default=_jsonable))
    return code


def cmd_metric(args) -> int:
    from .approx import hypersurface_metric
    from .refsurface import surface_from_config

    cfg = merged_config(args, ["surfaces", "order", "resolution"])
    specs = [load_json_arg(s) for s in cfg.get("surfaces") or []]
    if len(specs) < 2:
        raise UsageError("metric needs at least two --surfaces")
    cfg["surfaces"] = specs
    surfs = [surface_from_config(s) for s in specs]
    order = int(cfg.get("order", 2))
    res = int(cfg.get("resolution", 48))
    rows = []
    D = np.zeros((len(surfs), len(surfs)))
    for i in range(len(surfs)):
        for j in range(i + 1, len(surfs)):
            D[i, j] = D[j, i] = hypersurface_metric(surfs[i], surfs[j], order, res)
            rows.append([i, j, D[i, j]])
    out = Outputs(args.out, "metric", cfg)
    out.csv("metric.csv", ["i", "j", "distance"], rows)
    payload = {"surfaces": specs, "order": order, "matrix": D}
    out.json("metric.json", payload)
    print(json.dumps(payload, default=_jsonable))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="artifact", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, metavar="{" + ",".join(SUBCOMMANDS) + "}")

    def common(sp, surface=True):
        sp.add_argument("--config", help="JSON config (file or inline); flags override its keys")
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        if surface:
            sp.add_argument("--surface", help="surface JSON (file, inline, or a bare kind such as 'sphere')")
        return sp

    sp = common(sub.add_parser("report", help="per-sample fundamental forms and curvatures"))
    sp.add_argument("--resolution", type=int)
    sp.set_defaults(func=cmd_report)

    sp = common(sub.add_parser("check", help="invariant residuals against tolerances"))
    sp.add_argument("--resolution", type=int)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_check)

    sp = common(sub.add_parser("graph-report", help="geometry of a normal graph over the surface"))
    sp.add_argument("--height", help="height function JSON")
    sp.add_argument("--resolution", type=int)
    sp.set_defaults(func=cmd_graph_report)

    sp = common(sub.add_parser("variation-check", help="closed-form variation vs centred differences"))
    sp.add_argument("--which", help="quantity to vary (default mean_curvature)")
    sp.add_argument("--direction", help="variation direction function JSON")
    sp.add_argument("--height", help="base height function JSON (M0, beta, normal)")
    sp.add_argument("--carrier", help="carrier function JSON (gradient, laplace_beltrami, divergence)")
    sp.add_argument("--resolution", type=int)
    sp.set_defaults(func=cmd_variation_check)

    sp = common(sub.add_parser("distance", help="signed distance, projection and level function"))
    sp.add_argument("--points", help="CSV of query points, one per row")
    sp.add_argument("--random", type=int, help="number of random tube points (default 100)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--level-spacing", dest="level_spacing", type=float, help="also write a level function on this grid")
    sp.add_argument("--resolution", type=int)
    sp.set_defaults(func=cmd_distance)

    sp = common(sub.add_parser("approx", help="mollified level-function approximation table"))
    sp.add_argument("--ks", type=int, nargs="+")
    sp.add_argument("--spacing", type=float)
    sp.add_argument("--resolution", type=int)
    sp.set_defaults(func=cmd_approx)

    sp = common(sub.add_parser("flow", help="mean curvature flow of a normal graph"))
    sp.add_argument("--resolution", type=int)
    sp.add_argument("--T", type=float)
    sp.add_argument("--dt", type=float)
    sp.set_defaults(func=cmd_flow)

    sp = common(sub.add_parser("metric", help="pairwise hypersurface distances"), surface=False)
    sp.add_argument("--surfaces", nargs="+")
    sp.add_argument("--order", type=int, choices=(0, 1, 2))
    sp.add_argument("--resolution", type=int)
    sp.set_defaults(func=cmd_metric)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else 2
    try:
        return args.func(args)
    except (UsageError, InvalidArgumentError, ValueError, KeyError, json.JSONDecodeError) as e:
        if isinstance(e, ArtifactError) and not isinstance(e, InvalidArgumentError):
            print(f"error: {e}", file=sys.stderr)
            return 1
        parser.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ArtifactError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
