"""Command-line front end.

Exit codes::

    0  success
    2  usage, flag or input-file parse error
    3  mesh quality failure
    4  negative trace on the linear path
    5  solver did not converge
    6  flow stalled
    7  diagnostic or verification check failed

Every command writes a run manifest next to its first output; ``replay``
re-runs a manifest and compares output hashes.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import energy as en
from . import fem, grid, records, rough, shape
from .errors import (
    InsulShapeError,
    MeshQualityFailure,
    NegativeTrace,
    NoConvergence,
    ParseError,
    StallDetected,
)
from .geometry import (
    Mesh,
    StarBoundary,
    annulus_mesh,
    format_mesh,
    format_star,
    parse_mesh,
    parse_star,
    square_mesh,
    triangulate,
)

logger = logging.getLogger("insulshape")

EXIT_OK, EXIT_PARSE, EXIT_MESH, EXIT_TRACE, EXIT_CONVERGE, EXIT_STALL, EXIT_CHECK = 0, 2, 3, 4, 5, 6, 7
NEGATIVE_TRACE_TOL = -1e-8
CHECKS = ("m-uniform", "porosity", "frac-perimeter", "poincare", "stekloff")


class UsageError(Exception):
    """Invalid flag value; exit code 2."""


class CheckFailed(Exception):
    """A requested verification did not hold; exit code 7."""


# built-in defaults per command; flags > config file > these
DEFAULTS = {
    "mesh": {"h": 0.02, "method": "lattice"},
    "solve": {"m": 1.0, "f": "const:1", "path": "linear", "tol": 1e-10},
    "energy": {"h_csv": None},
    "gradient": {"m": 1.0, "h": 0.02, "zeta": "cos2", "fd_check": False, "dt": 1e-3, "rtol": 1e-3, "u_sign": -1.0},
    "flow": {"m": 1.0, "V0": None, "steps": 100, "defect_tol": 1e-3, "tau0": 1.0, "h": 0.02},
    "stability": {"n": 2, "R": 1.0, "m": 1.0, "modes": 16, "fd_check": 0, "quadrature": False, "h": 0.02},
    "diagnose": {
        "check": "m-uniform",
        "M": 3.0,
        "s": 0.5,
        "samples": 10**6,
        "pairs": 200,
        "hg": 1 / 128,
        "h": 0.02,
        "r_min": None,
        "r_max": None,
    },
    "replay": {},
}


# ---------------------------------------------------------------------------
# Input helpers
# ---------------------------------------------------------------------------


def _read(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None


def load_star(spec: str) -> StarBoundary:
    """A ``starshape 1`` file or a built-in ``disk:R``."""
    if Path(spec).is_file():
        return parse_star(_read(spec))
    if spec.startswith("disk"):
        return grid.parse_shape_spec(spec)
    raise ParseError(f"{spec}: not a star shape file")


def load_mesh_target(spec: str, h: float) -> Mesh:
    """Mesh from a mesh file, a star shape file or a built-in shape spec."""
    if Path(spec).is_file():
        text = _read(spec)
        head = text.lstrip().split("\n", 1)[0].strip()
        if head == "insulmesh 1":
            return parse_mesh(text)
        return triangulate(parse_star(text), h)
    name, _, args = spec.partition(":")
    vals = [float(v) for v in args.split(",") if v]
    if name == "annulus":
        return annulus_mesh(*(vals or [1.0, 2.0]), h)
    if name == "square":
        side = vals[0] if vals else 1.0
        return square_mesh(side, h, origin=(-side / 2, -side / 2))
    if name == "disk":
        return triangulate(StarBoundary.circle(vals[0] if vals else 1.0), h)
    raise ParseError(f"{spec}: no such file or built-in shape")


def load_grid_target(spec: str, hg: float) -> grid.GridDomain:
    if Path(spec).is_file():
        text = _read(spec)
        head = text.lstrip().split("\n", 1)[0].strip()
        if head == "grid 1":
            return grid.parse_grid(text)
        if head == "insulmesh 1":
            return grid.rasterize(parse_mesh(text), hg)
        return grid.rasterize(parse_star(text), hg)
    try:
        target = grid.parse_shape_spec(spec)
    except ValueError:
        raise ParseError(f"{spec}: no such file or built-in shape") from None
    return grid.rasterize(target, hg)


def parse_f(spec: str, mesh: Mesh):
    if spec.startswith("const:"):
        try:
            return float(spec[6:])
        except ValueError:
            raise ParseError(f"bad constant in f spec {spec!r}") from None
    lines = [l.strip() for l in _read(spec).splitlines() if l.strip()]
    try:
        vals = np.array([float(v) for v in lines])
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    if vals.size != mesh.n_vertices:
        raise ParseError(f"f file has {vals.size} values for {mesh.n_vertices} vertices")
    return vals


def boundary_arclength(mesh: Mesh) -> np.ndarray:
    out = []
    for loop in mesh.loops:
        p = mesh.vertices[loop]
        seg = np.linalg.norm(np.diff(p, axis=0), axis=1)
        out.append(np.r_[0.0, np.cumsum(seg)])
    return np.concatenate(out)


def _write(path, text, ctx):
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    ctx.outputs.append(str(path))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


class Context:
    def __init__(self, cfg, seed):
        self.cfg = cfg
        self.seed = seed
        self.outputs = []
        self.inputs = []
        self.timings = {}

    @contextmanager
    def phase(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0

    def input(self, path):
        if Path(path).is_file():
            self.inputs.append(str(path))


def cmd_mesh(ctx):
    c = ctx.cfg
    ctx.input(c["shape"])
    with ctx.phase("mesh"):
        if Path(c["shape"]).is_file() and _read(c["shape"]).lstrip().startswith("starshape"):
            mesh = triangulate(load_star(c["shape"]), c["h"], method=c["method"])
        else:
            mesh = load_mesh_target(c["shape"], c["h"])
    _write(c["out"], format_mesh(mesh), ctx)
    return {"vertices": mesh.n_vertices, "triangles": len(mesh.triangles), "min_angle": mesh.min_angle()}


def cmd_solve(ctx):
    c = ctx.cfg
    if not c["m"] > 0:
        raise UsageError("--m must be positive")
    ctx.input(c["mesh"])
    mesh = parse_mesh(_read(c["mesh"]))
    f = parse_f(c["f"], mesh)
    if not c["f"].startswith("const:"):
        ctx.input(c["f"])
    with ctx.phase("solve"):
        if c["path"] == "linear":
            sol = fem.solve_insulation_linear(fem.assemble(mesh, c["m"], f), tol=c["tol"])
            tmin = float(np.min(sol.trace.values))
            if tmin < NEGATIVE_TRACE_TOL:
                raise NegativeTrace(f"linear-path trace reaches {tmin:.3e}; rerun with --path eps")
        else:
            sol = fem.solve_insulation_eps(mesh, c["m"], f, tol=c["tol"])
    with ctx.phase("energy"):
        e = en.energy(mesh, sol.nodal, c["m"], f)
    mesh_hash = records.file_hash(c["mesh"])
    result = {
        "mesh": {"path": str(c["mesh"]), "sha256": mesh_hash},
        "m": c["m"],
        "f": c["f"],
        "path": c["path"],
        "nodal": sol.nodal,
        "residual": sol.residual,
        "iterations": sol.iterations,
        "boundary_integral": float(np.dot(fem.boundary_vector(mesh), sol.nodal)),
        "trace_min": float(np.min(sol.trace.values)),
    }
    _write(c["out"], records.dumps(result), ctx)
    report = dict(e.as_dict(), m=c["m"], mesh_hash=mesh_hash)
    _write(Path(c["out"]).with_suffix(".energy.json"), records.dumps(report), ctx)
    return {k: v for k, v in result.items() if k != "nodal"} | {"energy": e.total}


def cmd_energy(ctx):
    c = ctx.cfg
    ctx.input(c["solution"])
    sol = records.loads(_read(c["solution"]))
    try:
        mesh_path, mesh_hash = sol["mesh"]["path"], sol["mesh"]["sha256"]
        m, U = float(sol["m"]), np.asarray(sol["nodal"], dtype=float)
    except (KeyError, TypeError):
        raise ParseError(f"{c['solution']}: not a solution file") from None
    ctx.input(mesh_path)
    if records.file_hash(mesh_path) != mesh_hash:
        raise ParseError(f"{mesh_path} changed since the solve (hash mismatch)")
    mesh = parse_mesh(_read(mesh_path))
    f = parse_f(sol.get("f", "const:1"), mesh)
    with ctx.phase("energy"):
        e = en.energy(mesh, U, m, f)
    report = dict(e.as_dict(), m=m, mesh_hash=mesh_hash)
    _write(c["out"], records.dumps(report), ctx)
    if c.get("h_csv"):
        dist = en.optimal_h(mesh.trace(U), m)
        _write(c["h_csv"], dist.to_csv(boundary_arclength(mesh)), ctx)
    return report


def cmd_gradient(ctx):
    c = ctx.cfg
    ctx.input(c["shape"])
    sb = load_star(c["shape"])
    try:
        zeta = shape.ModalField.parse(c["zeta"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    with ctx.phase("gradient"):
        layout = triangulate(sb, c["h"]).layout
        pairing, grad = shape.pairing_for(sb, zeta, c["m"], c["h"], layout=layout, u_sign=c["u_sign"])
    result = {
        "m": c["m"],
        "h": c["h"],
        "zeta": c["zeta"],
        "mean": grad.mean,
        "defect": grad.defect,
        "pairing": pairing,
        "theta": grad.theta,
        "density": grad.density.values,
    }
    ok = True
    if c["fd_check"]:
        with ctx.phase("fd"):
            fd = shape.fd_shape_derivative(sb, zeta, c["m"], dt=c["dt"], h=c["h"], layout=layout)
        rel = abs(pairing - fd.value) / max(abs(fd.value), 1e-300)
        ok = rel <= c["rtol"]
        result.update(fd=fd.value, fd_coarse=fd.coarse, fd_fine=fd.fine, rel_error=rel, fd_passed=ok)
    _write(c["out"], records.dumps(result), ctx)
    summary = {k: v for k, v in result.items() if k not in ("theta", "density")}
    if not ok:
        raise CheckFailed(f"pairing {pairing:.6e} vs FD {result['fd']:.6e} (rel {result['rel_error']:.2e})", summary)
    return summary


def cmd_flow(ctx):
    c = ctx.cfg
    ctx.input(c["shape"])
    sb = load_star(c["shape"])
    V0 = sb.area() if c["V0"] is None else c["V0"]
    if not V0 > 0:
        raise UsageError("--V0 must be positive")
    if not c["m"] > 0 or c["steps"] < 0:
        raise UsageError("--m must be positive and --steps nonnegative")
    out = Path(c["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "flow.csv"
    ctx.outputs.append(str(log_path))
    with ctx.phase("flow"), open(log_path, "w") as log:
        traj = shape.run_flow(sb, c["m"], V0, max_steps=c["steps"], defect_tol=c["defect_tol"], tau0=c["tau0"], h=c["h"], log=log)
    final = traj[-1]
    _write(out / "final.star", format_star(final.shape), ctx)
    return {
        "steps": final.step,
        "energy": final.energy.total,
        "defect": final.defect,
        "dist_to_ball": final.dist_to_ball,
        "converged": final.defect < c["defect_tol"],
    }


def cmd_stability(ctx):
    c = ctx.cfg
    K = c["modes"]
    if not 1 <= K <= 64:
        raise UsageError("--modes must lie in 1..64")
    if c["n"] != 2:
        raise UsageError("only --n 2 has a modal table")
    if c["fd_check"] and not 1 <= c["fd_check"] <= K:
        raise UsageError("--fd-check must name a tabulated mode")
    ks = list(range(1, K + 1))
    with ctx.phase("modal"):
        res = shape.second_variation_ball(2, c["R"], c["m"], [(k, 1.0) for k in ks], quadrature=c["quadrature"], h=c["h"])
    quad = dict(res.quadrature)
    rows = []
    for k, q in res.per_mode:
        row = {"k": k, "Q_closed": q}
        if k in quad:
            row["Q_quadrature"] = quad[k]
        rows.append(row)
    if c["fd_check"]:
        k = c["fd_check"]
        with ctx.phase("fd"):
            rows[k - 1]["Q_fd"] = shape.second_variation_fd(c["R"], c["m"], shape.ModalField.cos(k), h=c["h"])
    result = {"n": 2, "R": c["R"], "m": c["m"], "modes": rows, "all_nonnegative": res.all_nonnegative}
    if c.get("out"):
        _write(c["out"], records.dumps(result), ctx)
    return result


def cmd_diagnose(ctx):
    c = ctx.cfg
    chk = c["check"]
    if chk not in CHECKS:
        raise UsageError(f"--check must be one of {', '.join(CHECKS)}")
    if chk == "m-uniform" and not c["M"] > 1:
        raise UsageError("--M must exceed 1")
    if chk == "frac-perimeter" and not 0 < c["s"] < 1:
        raise UsageError("--s must lie in (0, 1)")
    if c["samples"] < 1 or c["pairs"] < 1 or not c["hg"] > 0 or not c["h"] > 0:
        raise UsageError("--samples, --pairs, --hg and --h must be positive")
    ctx.input(c["target"])
    report = {"check": chk, "seed": ctx.seed}
    try:
        with ctx.phase(chk):
            if chk in ("poincare", "stekloff"):
                mesh = load_mesh_target(c["target"], c["h"])
                report["h"] = mesh.h_target
                if chk == "stekloff":
                    r = fem.stekloff_min(mesh)
                    report.update(eigenvalue=r.value, residual=r.residual)
                else:
                    report.update(
                        neumann_constant=fem.neumann_poincare_constant(mesh),
                        robust_constant=fem.robust_poincare_constant(mesh),
                        robust_is_signed_surrogate=True,
                    )
            else:
                gd = load_grid_target(c["target"], c["hg"])
                report["resolution"] = gd.spacing
                if chk == "m-uniform":
                    report.update(rough.m_uniform_check(gd, c["M"], c["pairs"], ctx.seed).as_dict())
                elif chk == "porosity":
                    r_min = 4 * gd.spacing if c["r_min"] is None else c["r_min"]
                    r_max = gd.diameter / 4 if c["r_max"] is None else c["r_max"]
                    report.update(rough.porosity_exponent(gd, r_min, r_max).as_dict())
                else:
                    fp = rough.fractional_perimeter(gd, c["s"], c["samples"], ctx.seed)
                    report.update(s=c["s"], samples=c["samples"], estimate=fp.estimate, stderr=fp.stderr, bias_bound=fp.bias_bound)
    except ParseError:
        raise
    except (InsulShapeError, ValueError) as exc:
        raise CheckFailed(f"{chk}: {exc}") from exc
    if c.get("out"):
        _write(c["out"], records.dumps(report), ctx)
    return report


def cmd_replay(ctx):
    c = ctx.cfg
    man = records.RunManifest.from_json(_read(c["manifest"]))
    changed = [p for p, hsh in man.input_hashes.items() if not Path(p).is_file() or records.file_hash(p) != hsh]
    if changed:
        raise CheckFailed(f"inputs changed since the recorded run: {', '.join(changed)}")
    code, _ = execute(man.command, man.config, man.seed, as_json=False, write_manifest=False, quiet=True)
    mismatched = [p for p, hsh in man.output_hashes.items() if not Path(p).is_file() or records.file_hash(p) != hsh]
    result = {"command": man.command, "exit_code": code, "recorded_exit_code": man.exit_code, "mismatched": mismatched}
    if mismatched or code != man.exit_code:
        raise CheckFailed(f"replay differs: {mismatched or 'exit code'}", result)
    return result


COMMANDS = {
    "mesh": cmd_mesh,
    "solve": cmd_solve,
    "energy": cmd_energy,
    "gradient": cmd_gradient,
    "flow": cmd_flow,
    "stability": cmd_stability,
    "diagnose": cmd_diagnose,
    "replay": cmd_replay,
}


# ---------------------------------------------------------------------------
# Argument parsing and configuration
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="insulshape", description="Optimal insulation shapes and rough-domain diagnostics.")
    p.add_argument("--seed", type=int, default=0, help="64-bit seed for all randomness")
    p.add_argument("--threads", type=int, default=1, help="worker count (recorded; runs are single-threaded)")
    p.add_argument("--json", action="store_true", help="print the result as JSON on stdout")
    p.add_argument("--config", help="file of 'key = value' lines")
    p.add_argument("--no-manifest", action="store_true", help=argparse.SUPPRESS)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def opt(sp, flag, **kw):
        sp.add_argument(flag, default=None, **kw)

    s = sub.add_parser("mesh", help="triangulate a shape")
    s.add_argument("shape")
    opt(s, "--h", type=float)
    opt(s, "--method", choices=["lattice", "rings"])
    s.add_argument("--out", required=True)

    s = sub.add_parser("solve", help="solve the insulation problem on a mesh")
    s.add_argument("mesh")
    opt(s, "--m", type=float)
    opt(s, "--f", help="const:<value> or a file of nodal values")
    opt(s, "--path", choices=["linear", "eps"])
    opt(s, "--tol", type=float)
    s.add_argument("--out", required=True)

    s = sub.add_parser("energy", help="energy report for a solution file")
    s.add_argument("solution")
    s.add_argument("--out", required=True)
    opt(s, "--h-csv", dest="h_csv", help="write the optimal insulator density as CSV")

    s = sub.add_parser("gradient", help="shape gradient with optional finite-difference check")
    s.add_argument("shape")
    opt(s, "--m", type=float)
    opt(s, "--h", type=float)
    opt(s, "--zeta", help="modal velocity, e.g. 'cos2' or '0.5*cos2+sin3'")
    s.add_argument("--fd-check", dest="fd_check", action="store_const", const=True, default=None)
    opt(s, "--dt", type=float)
    opt(s, "--rtol", type=float)
    s.add_argument("--out", required=True)

    s = sub.add_parser("flow", help="volume-preserving gradient flow")
    s.add_argument("shape")
    opt(s, "--m", type=float)
    opt(s, "--V0", type=float)
    opt(s, "--steps", type=int)
    opt(s, "--defect-tol", dest="defect_tol", type=float)
    opt(s, "--tau0", type=float)
    opt(s, "--h", type=float)
    s.add_argument("--out-dir", dest="out_dir", required=True)

    s = sub.add_parser("stability", help="second variation at the disk")
    opt(s, "--n", type=int)
    opt(s, "--R", type=float)
    opt(s, "--m", type=float)
    opt(s, "--modes", type=int)
    opt(s, "--fd-check", dest="fd_check", type=int)
    s.add_argument("--quadrature", action="store_const", const=True, default=None)
    opt(s, "--h", type=float)
    s.add_argument("--out")

    s = sub.add_parser("diagnose", help="rough-domain and spectral diagnostics")
    s.add_argument("target", help="grid, star or mesh file, or disk:R, square:s, annulus:a,b, dumbbell:w, rough_star")
    opt(s, "--check", choices=CHECKS)
    opt(s, "--M", type=float)
    opt(s, "--s", type=float)
    opt(s, "--samples", type=int)
    opt(s, "--pairs", type=int)
    opt(s, "--hg", type=float)
    opt(s, "--h", type=float)
    opt(s, "--r-min", dest="r_min", type=float)
    opt(s, "--r-max", dest="r_max", type=float)
    s.add_argument("--out")

    s = sub.add_parser("replay", help="re-run a manifest and compare outputs")
    s.add_argument("manifest")
    return p


def read_config(path) -> dict:
    """``key = value`` lines with ``#`` comments; keys may use dashes."""
    out = {}
    for n, line in enumerate(_read(path).splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ParseError("expected 'key = value'", n)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _coerce(value, default):
    if not isinstance(value, str) or isinstance(default, str):
        return value
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(float(value)) if "e" in value.lower() else int(value)
    try:
        return float(value)
    except ValueError:
        return value


def resolve_config(command, args, file_cfg) -> dict:
    defaults = DEFAULTS[command]
    cfg = dict(defaults)
    for k, v in file_cfg.items():
        if k in defaults:
            try:
                cfg[k] = _coerce(v, defaults[k])
            except ValueError:
                raise ParseError(f"config value for {k!r} has the wrong type: {v!r}") from None
    skip = {"seed", "threads", "json", "config", "no_manifest", "verbose", "command"}
    for k, v in vars(args).items():
        if k not in skip and (v is not None or k not in cfg):
            cfg[k] = v
    return cfg


def _manifest_path(ctx) -> Path:
    cfg = ctx.cfg
    if cfg.get("out_dir"):
        return Path(cfg["out_dir"]) / "manifest.json"
    if ctx.outputs:
        return Path(ctx.outputs[0] + ".manifest.json")
    return None


def _emit(result, as_json):
    if result is None:
        return
    if as_json:
        sys.stdout.write(records.dumps(result))
        return
    for k, v in result.items():
        if isinstance(v, (list, dict, np.ndarray)):
            continue
        print(f"{k}: {v}")


def _run(argv):
    """Parse arguments, resolve the configuration and execute."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        file_cfg = read_config(args.config) if args.config else {}
        cfg = resolve_config(args.command, args, file_cfg)
    except (UsageError, ParseError) as exc:
        print(f"insulshape: error: {exc}", file=sys.stderr)
        return EXIT_PARSE, None
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    cfg["threads"] = args.threads
    return execute(args.command, cfg, args.seed, args.json, not args.no_manifest)


def execute(command, cfg, seed=0, as_json=False, write_manifest=True, quiet=False):
    """Run one command on a resolved configuration.  Returns ``(exit_code, result)``."""
    ctx = Context(dict(cfg), seed)
    result, code = None, EXIT_OK
    t0 = time.perf_counter()
    try:
        result = COMMANDS[command](ctx)
    except (UsageError, ParseError, ValueError) as exc:
        code = EXIT_PARSE
        print(f"insulshape: error: {exc}", file=sys.stderr)
    except MeshQualityFailure as exc:
        code = EXIT_MESH
        print(f"insulshape: mesh failure: {exc}", file=sys.stderr)
    except NegativeTrace as exc:
        code = EXIT_TRACE
        print(f"insulshape: {exc}", file=sys.stderr)
    except NoConvergence as exc:
        code = EXIT_CONVERGE
        print(f"insulshape: no convergence: {exc}", file=sys.stderr)
    except StallDetected as exc:
        code = EXIT_STALL
        print(f"insulshape: flow stalled after {len(exc.trajectory)} states: {exc}", file=sys.stderr)
    except CheckFailed as exc:
        code = EXIT_CHECK
        print(f"insulshape: check failed: {exc.args[0]}", file=sys.stderr)
        result = exc.args[1] if len(exc.args) > 1 else None
    except InsulShapeError as exc:
        code = EXIT_CHECK
        print(f"insulshape: {type(exc).__name__}: {exc}", file=sys.stderr)
    ctx.timings["total"] = time.perf_counter() - t0
    if not quiet:
        _emit(result, as_json)
    if write_manifest and code != EXIT_PARSE:
        path = _manifest_path(ctx)
        if path is not None:
            man = records.RunManifest(
                command=command,
                config=dict(cfg),
                seed=seed,
                input_hashes={p: records.file_hash(p) for p in ctx.inputs if Path(p).is_file()},
                timings=ctx.timings,
                exit_code=code,
            )
            for p in ctx.outputs:
                if Path(p).is_file():
                    man.add_output(p)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(man.to_json())
    return code, result


def main(argv=None) -> int:
    code, _ = _run(sys.argv[1:] if argv is None else argv)
    return code


if __name__ == "__main__":
    sys.exit(main())
