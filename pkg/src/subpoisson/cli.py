"""Command-line interface.

Subcommands: ``simulate``, ``analyze``, ``reconstruct``, ``criteria``,
``depth`` and ``quasidist``.  Exit codes: 0 success, 2 configuration error,
3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import io
from .criteria import FAMILIES, full_report, nonclassicality_depth, depth_details
from .detector import DetectionMatrix, detection_matrix
from .distributions import PhotonNumberDistribution
from .errors import (ConditioningError, ConfigError, DataError, DimensionError,
                     ModelMismatchError, NumericalError, ParameterDomainError, SubPoissonError,
                     TruncationError, UndefinedValueError)
from .moments import MAX_ORDER, ORDERINGS
from .pipeline import FIGURES, TRACKS, SweepConfig, emit_figure_data, simulate_joint, sweep_postselect
from .reconstruction import EMConfig, default_n_max, em_run, laguerre_argument_sign, quasi_distribution

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
THREADS_ENV = "SUBPOISSON_THREADS"


def _threads(args) -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    elif args.threads is not None:
        n = args.threads
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise ConfigError("thread count must be at least 1")
    return n


def _conventions(ordering: str = "amplitude") -> dict:
    return {
        "s_ordering": ordering,
        "thermal_noise_mean": "(1 - s) / 2 per mode",
        "laguerre_argument": "+W/<W>_s" if laguerre_argument_sign() > 0 else "-W/<W>_s",
        "quasi_reference": "poisson",
        "error_method": "bootstrap (multinomial resampling of the joint histogram)",
        "detector_matrix": "positive recursion (loss, pixel occupancy, dark counts)",
    }


def _out_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path


# --------------------------------------------------------------------------- #


def cmd_simulate(args) -> int:
    params = io.read_params(args.params)
    det_s, det_i = io.read_detectors(args.detectors)
    if det_s is None:
        raise ConfigError(f"{args.detectors}: simulation needs a 'signal' detector")
    if args.shots < 0:
        raise ConfigError("--shots must be nonnegative")
    joint = simulate_joint(params, det_s, det_i, args.shots, args.seed, _threads(args))
    io.write_joint_csv(joint, args.output)
    man = io.Manifest("simulate")
    man.input("params", args.params)
    man.input("detectors", args.detectors)
    man.data["seed"] = args.seed
    man.data["shots"] = args.shots
    man.output(args.output)
    if joint.shots:
        man.note("mean_c_s", joint.mean_signal())
        man.note("mean_c_i", joint.mean_idler())
        print(f"shots={joint.shots} <c_s>={joint.mean_signal():.4f} <c_i>={joint.mean_idler():.4f}")
    else:
        print("shots=0 (empty histogram)")
    man.write(args.output + ".manifest.json")
    return EXIT_OK


def cmd_analyze(args) -> int:
    joint = io.read_joint_csv(args.joint)
    det_s, det_i = io.read_detectors(args.detectors)
    params = io.read_params(args.params) if args.params else None
    if params is not None and det_s is None:
        raise ConfigError("the model track needs a 'signal' detector")
    out = _out_dir(args.output)
    tracks = tuple(args.tracks.split(",")) if args.tracks else TRACKS
    bad = [t for t in tracks if t not in TRACKS]
    if bad:
        raise ConfigError(f"unknown tracks {bad}; choose from {TRACKS}")
    cfg = SweepConfig(
        c_s_values=tuple(args.cs) if args.cs else None,
        k_max=args.kmax, bootstrap=args.bootstrap, em_bootstrap=args.em_bootstrap,
        seed=args.seed, z=args.z, tracks=tracks, ordering=args.ordering,
        workers=_threads(args), em=EMConfig(max_iters=args.max_iters, tol=args.tol),
    )
    if args.kmax < 2 or args.kmax > MAX_ORDER:
        raise ConfigError(f"--kmax must lie in 2..{MAX_ORDER}")
    sweep = sweep_postselect(joint, det_i, cfg, params=params, det_s=det_s)
    man = io.Manifest("analyze")
    man.input("joint", args.joint)
    man.input("detectors", args.detectors)
    man.input("params", args.params)
    man.data["seed"] = args.seed
    man.data["config"] = cfg.to_dict()
    for k, v in _conventions(args.ordering).items():
        man.note(k, v)
    summary = {"shots": joint.shots, "c_s": sweep.c_s_values, "slices": []}
    for sl in sweep.slices:
        entry = {"c_s": sl.c_s, "shots": sl.shots, "f_s": sl.f_s, "f_s_theo": sl.f_s_theo,
                 "low_statistics": sl.low_statistics, "means": sl.means,
                 "mean_errors": sl.mean_errors,
                 "em": sl.em.to_dict() if sl.em is not None else None}
        summary["slices"].append(entry)
        for track, rep in sl.reports.items():
            for p in io.write_report(rep, os.path.join(out, f"report_{track}_cs{sl.c_s}")):
                man.output(p)
        if "ml" in sl.distributions:
            p = os.path.join(out, f"ml_cs{sl.c_s}.csv")
            io.write_distribution_csv(sl.distributions["ml"], p)
            man.output(p)
    figs = FIGURES if args.figures == "all" else tuple(args.figures.split(","))
    for fig in figs:
        try:
            cols, rows = emit_figure_data(sweep, fig)
        except ConditioningError as exc:
            print(f"skipping {fig}: {exc}", file=sys.stderr)
            continue
        p = os.path.join(out, f"{fig}.csv")
        io.write_rows_csv(cols, rows, p)
        man.output(p)
    p = os.path.join(out, "sweep.json")
    io.write_json(summary, p)
    man.output(p)
    man.write(os.path.join(out, "manifest.json"))
    low = [sl.c_s for sl in sweep.slices if sl.low_statistics]
    print(f"analyzed c_s = {sweep.c_s_values}; outputs in {out}")
    if low:
        print(f"low-statistics slices (< {cfg.low_statistics} shots): {low}")
    return EXIT_OK


def _load_dist(path) -> PhotonNumberDistribution:
    return PhotonNumberDistribution(io.read_distribution_csv(path)).normalized()


def cmd_reconstruct(args) -> int:
    hist = io.read_distribution_csv(args.hist)
    if args.identity:
        mat = DetectionMatrix.identity(max(hist.size - 1, args.n_max or 0))
        det_desc = "identity"
    else:
        if not args.detectors:
            raise ConfigError("reconstruct needs --detectors or --identity")
        det_s, det_i = io.read_detectors(args.detectors)
        det = det_i if args.arm == "idler" else det_s
        if det is None:
            raise ConfigError(f"no '{args.arm}' detector in {args.detectors}")
        n_max = args.n_max or default_n_max(hist, det.eta)
        mat = detection_matrix(det, n_max)
        det_desc = det.to_dict()
    p, diag = em_run(None, hist, mat, EMConfig(max_iters=args.max_iters, tol=args.tol))
    io.write_distribution_csv(p, args.output)
    meta = {"detector": det_desc, "diagnostics": diag.to_dict(), "n_max": mat.n_max,
            "mean": p.mean}
    meta_path = os.path.splitext(args.output)[0] + ".json"
    io.write_json(meta, meta_path)
    man = io.Manifest("reconstruct")
    man.input("hist", args.hist)
    man.input("detectors", args.detectors)
    man.output(args.output)
    man.output(meta_path)
    man.write(args.output + ".manifest.json")
    state = "converged" if diag.converged else "UNCONVERGED"
    print(f"EM {state} after {diag.iterations} iterations; <n>={p.mean:.6g}")
    return EXIT_OK


def cmd_criteria(args) -> int:
    dist = _load_dist(args.dist)
    rep = full_report(dist, args.kmax, ordering=args.ordering)
    stem = os.path.splitext(args.output)[0] if args.output else None
    if stem:
        paths = io.write_report(rep, stem)
        man = io.Manifest("criteria")
        man.input("dist", args.dist)
        for p in paths:
            man.output(p)
        man.write(stem + ".manifest.json")
    for r in rep.rows():
        print(f"{r['family']:>3} k={r['k']} value={r['value']!r} verdict={r['verdict']}")
    return EXIT_OK


def cmd_depth(args) -> int:
    dist = _load_dist(args.dist)
    ks = range(2, args.kmax + 1) if args.kmax else [args.k]
    rows = []
    for k in ks:
        d = depth_details(dist, k, ordering=args.ordering)
        rows.append({"k": k, "tau": d.tau, "s_threshold": d.s_threshold,
                     "roots": len(d.roots)})
        print(f"k={k} tau={d.tau!r} s_th={d.s_threshold!r}")
    if args.output:
        io.write_rows_csv(["k", "tau", "s_threshold", "roots"], rows, args.output)
        man = io.Manifest("depth")
        man.input("dist", args.dist)
        man.output(args.output)
        man.note("s_ordering", args.ordering)
        man.write(args.output + ".manifest.json")
    return EXIT_OK


def cmd_quasidist(args) -> int:
    dist = _load_dist(args.dist)
    grid = None
    if args.w_max is not None:
        grid = np.linspace(0.0, args.w_max, args.points)
    q = quasi_distribution(dist, args.s, grid=grid, J=args.J, points=args.points,
                           tolerance=args.tolerance)
    q.to_csv(args.output)
    meta_path = os.path.splitext(args.output)[0] + ".json"
    q.to_json(meta_path)
    man = io.Manifest("quasidist")
    man.input("dist", args.dist)
    man.output(args.output)
    man.output(meta_path)
    for k, v in _conventions().items():
        man.note(k, v)
    man.write(args.output + ".manifest.json")
    flag = "negative" if q.negative else "nonnegative"
    print(f"s={q.s} J={q.J} min P={q.min_value!r} at W={q.min_location!r} ({flag})")
    return EXIT_OK


# --------------------------------------------------------------------------- #


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="subpoisson", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def threads(p):
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker threads (default: all cores; {THREADS_ENV} overrides)")

    p = sub.add_parser("simulate", help="Monte Carlo joint photocount histogram")
    p.add_argument("params", help="twin-beam parameters JSON (Mp, Bp, Ms, Bs, Mi, Bi)")
    p.add_argument("detectors", help='detectors JSON {"signal": {...}, "idler": {...}}')
    p.add_argument("--shots", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True, help="joint histogram CSV")
    threads(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="post-selection sweep with all criteria")
    p.add_argument("joint", help="joint histogram CSV (cs,ci,count)")
    p.add_argument("detectors")
    p.add_argument("params", nargs="?", default=None,
                   help="twin-beam parameters enabling the model track")
    p.add_argument("--kmax", type=int, default=9)
    p.add_argument("--bootstrap", type=int, default=0, help="replicas for light tracks")
    p.add_argument("--em-bootstrap", type=int, default=0, help="replicas for the ML track")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cs", type=int, nargs="+", default=None, help="c_s values (default 1..10)")
    p.add_argument("--z", type=float, default=1.0)
    p.add_argument("--tracks", default=None, help=f"comma list from {','.join(TRACKS)}")
    p.add_argument("--ordering", choices=ORDERINGS, default="amplitude")
    p.add_argument("--figures", default="all", help="comma list of figure ids or 'all'")
    p.add_argument("--max-iters", type=int, default=20000)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("-o", "--output", required=True, help="output directory")
    threads(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("reconstruct", help="EM photon-number reconstruction of one histogram")
    p.add_argument("hist", help="two-column photocount histogram CSV (c, count or frequency)")
    p.add_argument("--detectors", default=None)
    p.add_argument("--arm", choices=("idler", "signal"), default="idler")
    p.add_argument("--identity", action="store_true", help="use the identity detector")
    p.add_argument("--n-max", type=int, default=None)
    p.add_argument("--max-iters", type=int, default=20000)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("-o", "--output", required=True, help="reconstructed distribution CSV")
    threads(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("criteria", help="criteria I-V of one distribution")
    p.add_argument("dist", help="two-column distribution CSV")
    p.add_argument("--kmax", type=int, default=9)
    p.add_argument("--ordering", choices=ORDERINGS, default="amplitude")
    p.add_argument("-o", "--output", default=None, help="report stem (.json and .csv)")
    threads(p)
    p.set_defaults(func=cmd_criteria)

    p = sub.add_parser("depth", help="nonclassicality depth of one distribution")
    p.add_argument("dist")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--kmax", type=int, default=None, help="report k = 2..kmax")
    p.add_argument("--ordering", choices=ORDERINGS, default="amplitude")
    p.add_argument("-o", "--output", default=None, help="CSV of k, tau")
    threads(p)
    p.set_defaults(func=cmd_depth)

    p = sub.add_parser("quasidist", help="s-ordered intensity quasi-distribution")
    p.add_argument("dist")
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--J", type=int, default=10)
    p.add_argument("--points", type=int, default=2000)
    p.add_argument("--w-max", type=float, default=None, help="grid end (default 5 <W>_s)")
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("-o", "--output", required=True, help="CSV of W, P, dP, P_pois")
    threads(p)
    p.set_defaults(func=cmd_quasidist)
    return ap


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, TruncationError)):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, ConditioningError, DimensionError, ModelMismatchError,
                        UndefinedValueError)):
        return EXIT_DATA
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, ParameterDomainError):
        return EXIT_CONFIG
    return EXIT_DATA


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConditioningError as exc:
        where = exc.condition if exc.condition not in (None, []) else "?"
        print(f"error: conditioning failed (c_s = {where}): {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SubPoissonError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc) if isinstance(exc, SubPoissonError) else EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
