"""Command-line interface.

Every command writes its artifacts into ``--out`` (created if missing) and a
``run.json`` echo of the resolved configuration.  Inputs are parsed before
anything is written, so a malformed input leaves no artifacts behind.

Exit codes: 0 success, 2 unreadable or invalid input, 3 optimization failure
or violated bound, 4 degenerate curve or surface, 5 vanishing SRVT
combination along a geodesic.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import bounds, builtin, io, optimize, transforms
from .diffeo import Basis1D, Basis2D, DiffeoNet
from .errors import (
    DegenerateCurve,
    DegenerateSurface,
    GridMismatch,
    InvalidGrid,
    ParseError,
    ReparamError,
    StagnatedStep,
    VanishingCombination,
)
from .geometry import (
    GrayImage,
    SampledCurve,
    SampledSurface,
    grid_points,
    lift_image,
    make_interpolant,
    uniform_nodes,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_OPTIM = 3
EXIT_DEGENERATE = 4
EXIT_VANISHING = 5

MIN_GRID = 16
CURVE_GRID = 1024
SURFACE_GRID = 64
CURVE_TRANSFORMS = ("srvt", "q")
SURFACE_TRANSFORMS = ("srnf", "qsurf")

log = logging.getLogger(__name__)


# -- argument types --------------------------------------------------------


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return v


def _grid_size(text):
    v = int(text)
    if v < MIN_GRID:
        raise argparse.ArgumentTypeError(f"grid must be at least {MIN_GRID}, got {text}")
    return v


def _epsilon(text):
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"epsilon must lie in (0, 1), got {text}")
    return v


def _int_list(text, minimum=1):
    """``"1,2,5-8"`` -> ``[1, 2, 5, 6, 7, 8]``."""
    out = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part:
                lo, hi = (int(p) for p in part.split("-", 1))
                out.extend(range(lo, hi + 1))
            elif part:
                out.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None
    if not out or min(out) < minimum:
        raise argparse.ArgumentTypeError(f"integer list {text!r} needs values >= {minimum}")
    return out


def _nonneg_int_list(text):
    return _int_list(text, minimum=0)


# -- inputs ----------------------------------------------------------------


def _resample(shape, K):
    if shape.K == K:
        return shape
    interp = make_interpolant(shape)
    if isinstance(shape, SampledCurve):
        return SampledCurve(interp(uniform_nodes(K)))
    X, Y = grid_points(K)
    return SampledSurface(interp(np.column_stack([X.ravel(), Y.ravel()])).reshape(K, K, 3))


def _csv_kind(path):
    try:
        with open(path, encoding="utf-8") as fh:
            first = fh.readline().strip()
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from None
    return "curve" if first.split(",")[0].strip() == "t" else "surface"


def load_shape(path, grid=None):
    """Read a curve CSV, a surface CSV or a PGM image (lifted to a graph surface)."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return lift_image(io.read_pgm(path), grid or SURFACE_GRID), "image"
    if _csv_kind(path) == "curve":
        shape = io.read_curve_csv(path)
    else:
        shape = io.read_surface_csv(path)
    if grid:
        shape = _resample(shape, grid)
    return shape, "csv"


def load_pair(paths, grid, want):
    """Two shapes of the requested kind (``"curve"`` or ``"surface"``) on one grid."""
    if len(paths) != 2:
        raise ParseError("expected exactly two input files")
    (a, src_a), (b, src_b) = (load_shape(p, grid) for p in paths)
    cls = SampledCurve if want == "curve" else SampledSurface
    if not isinstance(a, cls) or not isinstance(b, cls):
        raise ParseError(f"inputs must both be {want}s")
    if a.values.shape[-1] != b.values.shape[-1]:
        raise GridMismatch("inputs have different codomain dimensions")
    if b.K != a.K:
        b = _resample(b, a.K)
    return a, b, "image" if "image" in (src_a, src_b) else "csv"


def _curve_inputs(args):
    if args.inputs:
        c1, c2, _ = load_pair(args.inputs, args.grid, "curve")
        return c1, c2, None
    c1, c2 = builtin.curve_pair(args.grid or CURVE_GRID)
    return c1, c2, builtin.log_tanh_warp


def _surface_inputs(args):
    if args.inputs:
        f1, f2, src = load_pair(args.inputs, args.grid, "surface")
        return f1, f2, None, src
    f1, f2, warp = builtin.surface_pair(args.grid or SURFACE_GRID)
    return f1, f2, warp, "builtin"


def _transform_name(args, dim):
    allowed = CURVE_TRANSFORMS if dim == 1 else SURFACE_TRANSFORMS
    name = args.transform or allowed[0]
    if name not in allowed:
        raise ParseError(f"transform {name!r} does not apply to {'curves' if dim == 1 else 'surfaces'}")
    args.transform = name
    return name


# -- outputs ---------------------------------------------------------------


def _config(args):
    skip = {"func", "verbose"}
    cfg = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        cfg[k] = [str(p) for p in v] if k == "inputs" and v else v
    return cfg


def _write_run(out, args, result):
    io.write_json(Path(out) / "run.json", {"command": args.command, "config": _config(args), "result": result})


def _write_log(path, rows):
    io.write_csv(path, optimize.LOG_HEADER, [r.as_row() for r in rows])


def _write_phi_1d(path, net, K):
    x = uniform_nodes(K)
    io.write_csv(path, ["x", "phi"], np.column_stack([x, net(x)]))


def _write_phi_2d(path, net, K):
    X, Y = grid_points(K)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    io.write_csv(path, ["x", "y", "phi1", "phi2"], np.column_stack([pts, net(pts)]))


def _result_summary(res, extra=None):
    out = {
        "status": res.status,
        "iterations": res.iterations,
        "initial_loss": res.initial_loss,
        "final_loss": res.final_loss,
        "relative_loss": res.relative_loss,
        "loss_reduction": 1.0 - res.relative_loss,
    }
    out.update(extra or {})
    return out


def _optimize(args, q1, q2, basis):
    net = DiffeoNet.identity(basis, args.layers, args.epsilon)
    problem = optimize.LossProblem(q1, q2, net)
    rng = np.random.default_rng(args.seed) if args.resample else None
    res = optimize.bfgs_restarts(
        problem, args.restarts, rng, max_iter=args.max_iter, grad_tol=args.grad_tol
    )
    if not res.net.is_feasible():
        raise ReparamError("optimizer returned an infeasible network")
    return res


def _warp_error_1d(net, truth):
    x = np.linspace(0.0, 1.0, 1001)
    return float(np.max(np.abs(net(x) - truth(x))))


def _warp_error_2d(net, truth, K):
    X, Y = grid_points(K)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return float(np.max(np.linalg.norm(net(pts) - truth(pts), axis=1)))


# -- commands --------------------------------------------------------------


def cmd_reparam_curve(args):
    c1, c2, truth = _curve_inputs(args)
    name = _transform_name(args, 1)
    q1, q2 = transforms.transform(name, c1), transforms.transform(name, c2)
    res = _optimize(args, q1, q2, Basis1D(args.basis))
    out = Path(args.out)
    io.atomic_write_text(out / "net.json", res.net.dumps())
    _write_phi_1d(out / "phi.csv", res.net, c1.K)
    io.write_curve_csv(out / "reparam.csv", transforms.compose(c2, res.net))
    _write_log(out / "log.csv", res.log)
    extra = {"warp_error": _warp_error_1d(res.net, truth)} if truth is not None else {}
    _write_run(out, args, _result_summary(res, extra))
    print(f"{res.status}: E/E0 = {res.relative_loss:.3e} after {res.iterations} iterations")
    return EXIT_OK


def cmd_reparam_surface(args):
    f1, f2, truth, _ = _surface_inputs(args)
    name = _transform_name(args, 2)
    q1, q2 = transforms.transform(name, f1), transforms.transform(name, f2)
    res = _optimize(args, q1, q2, Basis2D(args.basis))
    out = Path(args.out)
    io.atomic_write_text(out / "net.json", res.net.dumps())
    _write_phi_2d(out / "warp.csv", res.net, f1.K)
    io.write_surface_csv(out / "reparam.csv", transforms.compose(f2, res.net))
    _write_log(out / "log.csv", res.log)
    extra = {"warp_error": _warp_error_2d(res.net, truth, f1.K)} if truth is not None else {}
    _write_run(out, args, _result_summary(res, extra))
    print(f"{res.status}: E/E0 = {res.relative_loss:.3e} after {res.iterations} iterations")
    return EXIT_OK


def _image_frames(out, shapes):
    for i, s in enumerate(shapes):
        img = np.clip(s.values[..., 2].T, 0.0, 1.0)
        io.write_pgm(out / f"frame_{i:03d}.pgm", GrayImage(img))


def cmd_interpolate(args):
    taus = np.linspace(0.0, 1.0, args.frames)
    # file inputs decide the shape type; --shape only selects the builtin pair
    is_curve = _is_curve_input(args.inputs) if args.inputs else args.shape == "curve"
    if is_curve:
        f1, f2, _ = _curve_inputs(args)
        dim, src = 1, "csv"
    else:
        f1, f2, _, src = _surface_inputs(args)
        dim = 2
    # network defaults depend on the shape type
    if args.layers is None:
        args.layers = 10 if dim == 1 else 5
    if args.basis is None:
        args.basis = 10 if dim == 1 else 3
    out = Path(args.out)
    result = {"mode": args.mode, "taus": [float(t) for t in taus]}
    if args.mode == "direct":
        shapes = transforms.lerp(f1, f2, taus)
    elif args.mode == "geodesic":
        if dim != 1:
            raise ParseError("geodesic interpolation is only defined for curves")
        shapes = transforms.geodesic_curves(f1, f2, taus)
    else:
        name = _transform_name(args, dim)
        q1, q2 = transforms.transform(name, f1), transforms.transform(name, f2)
        basis = Basis1D(args.basis) if dim == 1 else Basis2D(args.basis)
        res = _optimize(args, q1, q2, basis)
        shapes = transforms.lerp_after_reparam(f1, f2, res.net, taus)
        io.atomic_write_text(out / "net.json", res.net.dumps())
        _write_log(out / "log.csv", res.log)
        result.update(_result_summary(res))
        print(f"loss reduction {1.0 - res.relative_loss:.1%}")
    manifest = transforms.write_path(out, shapes, taus, stem="frame")
    if src == "image":
        _image_frames(out, shapes)
    result["frames"] = manifest["frames"]
    _write_run(out, args, result)
    return EXIT_OK


def _is_curve_input(paths):
    p = Path(paths[0])
    return p.suffix.lower() != ".pgm" and _csv_kind(p) == "curve"


def cmd_sweep(args):
    if args.shape == "curve":
        c1, c2 = builtin.curve_pair(args.grid or CURVE_GRID)
        name = _transform_name(args, 1)
        make_basis = Basis1D
    else:
        c1, c2, _ = builtin.surface_pair(args.grid or SURFACE_GRID)
        name = _transform_name(args, 2)
        make_basis = Basis2D
    q1, q2 = transforms.transform(name, c1), transforms.transform(name, c2)

    def make_problem(L, M):
        return optimize.LossProblem(q1, q2, DiffeoNet.identity(make_basis(M), L, args.epsilon))

    cells = [(L, M) for L in args.layers for M in args.basis]
    rows = optimize.run_sweep(make_problem, cells, max_iter=args.max_iter, grad_tol=args.grad_tol)
    out = Path(args.out)
    io.write_csv(out / "sweep.csv", ["L", "M", "final_loss", "iters", "seconds"],
                 [[r["L"], r["M"], r["final_loss"], r["iters"], r["seconds"]] for r in rows])
    _write_run(out, args, {"cells": [{k: r[k] for k in ("L", "M", "final_loss", "initial_loss", "iters", "status")}
                                      for r in rows]})
    failed = [r for r in rows if r["status"].startswith("error")]
    for r in failed:
        print(f"cell L={r['L']} M={r['M']} failed: {r['status']}", file=sys.stderr)
    return EXIT_OPTIM if failed else EXIT_OK


def cmd_bounds(args):
    table = bounds.schroeder(args.kmax)
    print("k  M_k")
    for k in range(1, args.kmax + 1):
        print(f"{k:<2d} {table[k]}")
    exp = bounds.bound_ratio_experiment(args.layers, args.basis, args.k, runs=args.runs, seed=args.seed,
                                        n_grid=args.grid)
    out = Path(args.out)
    exp.write(out / "bounds.csv", out / "bounds_summary.json")
    summary = exp.summary()
    _write_run(out, args, {"violations": summary["violations"], "max_ratio": summary["max_ratio"],
                           "schroeder": list(table.values)})
    full = bounds.schroeder(max(args.k + [args.kmax]))
    for k, v in summary["max_ratio"].items():
        print(f"k={k}: max ratio {v:.4f} (M_k = {full[int(k)]})")
    if summary["violations"]:
        print(f"{summary['violations']} runs exceed M_k", file=sys.stderr)
        return EXIT_OPTIM
    return EXIT_OK


def cmd_compare_gd(args):
    c1, c2, truth = _curve_inputs(args)
    name = _transform_name(args, 1)
    q1, q2 = transforms.transform(name, c1), transforms.transform(name, c2)
    cfg = optimize.GDConfig(M=args.basis, max_iter=args.max_iter, grad_tol=args.grad_tol, eps=args.epsilon)
    try:
        gd = optimize.gd_reparam(q1, q2, cfg)
    except StagnatedStep as exc:
        gd = exc.log
    deep = _optimize(args, q1, q2, Basis1D(args.basis))
    out = Path(args.out)
    for tag, res in (("gd", gd), ("deep", deep)):
        _write_log(out / f"{tag}_log.csv", res.log)
        _write_phi_1d(out / f"{tag}_phi.csv", res.net, c1.K)
        io.atomic_write_text(out / f"{tag}_net.json", res.net.dumps())
    result = {
        "gd": _result_summary(gd, {"layers": gd.net.L}),
        "deep": _result_summary(deep, {"layers": deep.net.L}),
    }
    if truth is not None:
        result["gd"]["warp_error"] = _warp_error_1d(gd.net, truth)
        result["deep"]["warp_error"] = _warp_error_1d(deep.net, truth)
    _write_run(out, args, result)
    print(f"gd   E/E0 = {gd.relative_loss:.3e}")
    print(f"deep E/E0 = {deep.relative_loss:.3e}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def _common(p, layers, basis, basis_help, grid_help, max_iter=200):
    p.add_argument("--layers", type=_positive_int, default=layers, help="number of layers L")
    p.add_argument("--basis", type=_positive_int, default=basis, help=basis_help)
    p.add_argument("--grid", type=_grid_size, default=None, help=grid_help)
    p.add_argument("--epsilon", type=_epsilon, default=1e-2, help="feasibility margin")
    p.add_argument("--max-iter", type=_positive_int, default=max_iter)
    p.add_argument("--grad-tol", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0, help="seed for random point resampling")
    p.add_argument("--restarts", type=int, default=0, help="extra optimizer runs from the current net")
    p.add_argument("--resample", action="store_true", help="use fresh random points on each restart")
    p.add_argument("--out", default="out", help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="deepreparam", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reparam-curve", help="optimal reparametrization of one curve onto another")
    p.add_argument("inputs", nargs="*", help="target and source curve CSVs (default: builtin pair)")
    _common(p, 10, 10, "basis size M", f"resample to K nodes (builtin default {CURVE_GRID})")
    p.add_argument("--transform", choices=CURVE_TRANSFORMS + SURFACE_TRANSFORMS, default=None)
    p.set_defaults(func=cmd_reparam_curve)

    p = sub.add_parser("reparam-surface", help="optimal reparametrization of one surface onto another")
    p.add_argument("inputs", nargs="*", help="target and source surface CSVs or PGM images")
    _common(p, 5, 3, "maximal frequency N", f"grid K per axis (default {SURFACE_GRID})")
    p.add_argument("--transform", choices=CURVE_TRANSFORMS + SURFACE_TRANSFORMS, default=None)
    p.set_defaults(func=cmd_reparam_surface)

    p = sub.add_parser("interpolate", help="interpolation paths between two shapes")
    p.add_argument("inputs", nargs="*", help="two curve CSVs, surface CSVs or PGM images")
    _common(p, None, None, "M for curves (default 10) or N for surfaces (default 3)", "grid K")
    p.add_argument("--transform", choices=CURVE_TRANSFORMS + SURFACE_TRANSFORMS, default=None)
    p.add_argument("--mode", choices=("direct", "reparam-lerp", "geodesic"), default="direct")
    p.add_argument("--frames", type=_positive_int, default=11, help="number of tau values in [0, 1]")
    p.add_argument("--shape", choices=("curve", "surface"), default="curve", help="builtin pair when no inputs")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("sweep", help="final loss over a grid of network sizes")
    p.add_argument("--layers", type=_nonneg_int_list, default=[1, 2, 4, 6, 8, 10], help="list, e.g. 1,2,4-6")
    p.add_argument("--basis", type=_int_list, default=[10], help="list of M (curves) or N (surfaces)")
    p.add_argument("--grid", type=_grid_size, default=None)
    p.add_argument("--epsilon", type=_epsilon, default=1e-2)
    p.add_argument("--max-iter", type=_positive_int, default=200)
    p.add_argument("--grad-tol", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0, help="unused; builtin problems are deterministic")
    p.add_argument("--transform", choices=CURVE_TRANSFORMS + SURFACE_TRANSFORMS, default=None)
    p.add_argument("--shape", choices=("curve", "surface"), default="curve")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bounds", help="composition C^k bound ratios and the M_k table")
    p.add_argument("--k", type=_int_list, default=[1, 2, 3], help="derivative orders")
    p.add_argument("--layers", type=_int_list, default=list(range(1, 11)))
    p.add_argument("--basis", type=_int_list, default=list(range(1, 11)))
    p.add_argument("--runs", type=int, default=500, help="normal-init runs per cell (0: empty report)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=int, default=bounds.MIN_NORM_GRID, help="norm evaluation grid size")
    p.add_argument("--kmax", type=int, default=10, help="size of the printed M_k table")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("compare-gd", help="gradient descent baseline against the deep network")
    p.add_argument("inputs", nargs="*", help="target and source curve CSVs (default: builtin pair)")
    _common(p, 6, 6, "basis size M for both methods", f"grid K (builtin default {CURVE_GRID})")
    p.add_argument("--transform", choices=CURVE_TRANSFORMS, default=None)
    p.set_defaults(func=cmd_compare_gd)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "bounds" and args.grid < bounds.MIN_NORM_GRID:
        parser.error(f"--grid must be at least {bounds.MIN_NORM_GRID} for bounds")
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except (ParseError, InvalidGrid, GridMismatch, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DegenerateCurve, DegenerateSurface) as exc:
        print(f"degenerate input: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except VanishingCombination as exc:
        print(f"vanishing combination at tau={exc.tau:g} (node {exc.node})", file=sys.stderr)
        return EXIT_VANISHING
    except ReparamError as exc:
        print(f"optimization failed: {exc}", file=sys.stderr)
        return EXIT_OPTIM
    log.info("%s finished in %.2fs", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
