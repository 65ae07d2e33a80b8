"""Command-line entry point.

Exit codes: 0 success, 1 a verification failed, 2 configuration error,
3 runtime error.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import rng
from .config import SUITES, build_spec, load_config
from .errors import InvalidParameter, LbmLabError, ParseError, UnknownPreset

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class ConfigProblem(Exception):
    pass


# -- subcommands ----------------------------------------------------------------


def cmd_green_table(args):
    from scipy.special import k0

    from .kernels import KernelParams, green_massive

    if args.m <= 0 or args.rmin <= 0 or args.rmax < args.rmin or args.steps < 1:
        raise ConfigProblem("need m > 0, 0 < rmin <= rmax and steps >= 1")
    params = KernelParams.dyadic(args.m, 1, 1.0)
    rows = []
    for r in np.linspace(args.rmin, args.rmax, args.steps):
        g = green_massive(params, float(r))
        oracle = float(k0(args.m * r))
        rows.append((float(r), g, oracle, abs(g - oracle) / oracle))
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["r", "G", "K0_oracle", "rel_err"])
        for row in rows:
            w.writerow([repr(v) for v in row])
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def cmd_sample_field(args, config):
    from .field import sample_field, write_field_binary, write_field_csv

    if config.field is None:
        raise ConfigProblem("field: section required for sample-field")
    out = args.out or os.path.join(config.io.out_dir, "field.csv")
    fld = sample_field(config.kernel_params(), config.grid_spec(), args.seed)
    binary = config.io.format == "binary" or out.endswith((".bin", ".gfld"))
    (write_field_binary if binary else write_field_csv)(fld, out)
    return EXIT_OK


def _moments(ens, dim):
    records = []
    for r, t in enumerate(ens.times):
        alive = ens.alive_at(t)
        x = ens.states[alive, r]
        mean = x.mean(axis=0) if len(x) else np.full(dim, np.nan)
        cov = np.cov(x, rowvar=False, ddof=1) if len(x) > 1 else np.full((dim, dim), np.nan)
        records.append({"t": float(t), "mean": mean.tolist(), "cov": np.atleast_2d(cov).tolist(),
                        "killed_fraction": ens.killed_fraction(t)})
    return records


def cmd_simulate(args, config):
    from .paths import write_path_csv
    from .sde import SdeRun, simulate_ensemble, simulate_sde

    spec = build_spec(config, args.seed)
    run = config.run
    n = args.paths if args.paths is not None else run.paths
    dt = args.dt if args.dt is not None else run.dt
    horizon = args.horizon if args.horizon is not None else run.horizon
    if not (n >= 1 and dt > 0 and horizon >= dt):
        raise ConfigProblem("need paths >= 1 and 0 < dt <= horizon")
    out = args.out or config.io.out_dir
    os.makedirs(out, exist_ok=True)
    sim_seed = rng.derive_seed(args.seed, "simulate")
    if config.io.format == "moments":
        times = run.sample_times or [horizon]
        if max(times) > horizon:
            raise ConfigProblem("run.sample_times exceed the horizon")
        ens = simulate_ensemble(spec, spec.x0, dt, horizon, n, sim_seed, record_times=times,
                                threads=args.threads)
        with open(os.path.join(out, "moments.json"), "w") as fh:
            json.dump(_moments(ens, spec.dim), fh, indent=2)
        return EXIT_OK
    width = max(5, len(str(n - 1)))
    for i in range(n):
        path = simulate_sde(SdeRun(spec, spec.x0, dt, horizon, sim_seed, path_index=i))
        write_path_csv(path, os.path.join(out, f"path_{i:0{width}d}.csv"))
    return EXIT_OK


def _probes(spec, u, count, seed):
    gen = rng.stream(seed, "probes")
    lo = np.maximum(np.array(u.support_box[0]), spec.lo)
    hi = np.minimum(np.array(u.support_box[1]), spec.hi)
    pts = lo + (hi - lo) * gen.random((4 * count, spec.dim))
    pts = pts[spec.degeneracy(pts) > spec.rho_floor]
    return pts[:count]


def generator_reports(spec, seed, n_probes=100, perturb=0.0):
    from .generator import check_gamma_identity, default_test_functions

    reports = []
    for k, u in enumerate(default_test_functions(spec)):
        probes = _probes(spec, u, n_probes, rng.derive_seed(seed, f"probes:{k}"))
        reports.append(check_gamma_identity(spec, u, probes, perturb=perturb))
    return reports


def _write_report(path, suite, seed, reports):
    doc = {"suite": suite, "seed": int(seed), "results": [r.to_dict() for r in reports]}
    text = json.dumps(doc, indent=2)
    if path:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def cmd_check_generator(args, config):
    spec = build_spec(config, args.seed)
    reports = generator_reports(spec, args.seed)
    for r in reports:
        print(r.line())
    _write_report(args.out, "generator", args.seed, reports)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def run_suite(suite, config, seed, threads=1):
    """Reports of one named suite, each check drawing from its own derived seed."""
    from . import verify as V
    from .coefficients import Family, validate_spec
    from .generator import bump, constant, default_test_functions

    spec = build_spec(config, seed)
    run, thr = config.run, config.verify.threshold
    n, dt = run.paths, run.dt
    times = run.sample_times or [run.horizon]
    tests = default_test_functions(spec)
    u, ux = tests[0], tests[1]

    def sub(tag):
        return rng.derive_seed(seed, tag)

    def martingale():
        return [V.test_martingale(spec, u, times, n, dt, sub("martingale"), thr, threads=threads)]

    def quadratic():
        return [V.test_quadratic_variation(spec, ux, run.horizon, n, dt, sub("qv"), threshold=thr,
                                           threads=threads)]

    def cross():
        if spec.family is not Family.LBM:
            raise ConfigProblem("cross-construction needs an LBM-family preset")
        return [V.test_cross_construction(spec, times[-1], n, dt, sub("cross"), thr, threads=threads)]

    def mass():
        if config.field is None:
            raise ConfigProblem("liouville-mass needs a field section")
        grid = config.grid_spec()
        h = grid.spacing
        k = [max(1, (r - 1) // 2) for r in grid.resolution]
        lo = grid.lo + np.array([((r - 1 - kk) // 2) * hh for r, kk, hh in zip(grid.resolution, k, h)])
        box = (tuple(lo), tuple(lo + np.array(k) * np.array(h)))
        return [V.test_liouville_mass(config.kernel_params(), grid, box, n, sub("mass"), thr)]

    def non_explosion():
        return [V.test_non_explosion(spec, run.horizon, n, dt, sub("non-explosion"), threads=threads)]

    def generator():
        return generator_reports(spec, sub("generator"))

    def smoke():
        probes = spec.x0 + 0.25 * (spec.hi - spec.lo) * (
            rng.stream(sub("smoke-probes"), "probes").random((50, spec.dim)) - 0.5)
        probes = probes[spec.degeneracy(probes) > spec.rho_floor]
        out = [validate_spec(spec, probes, mc_samples=20000, seed=sub("smoke-validate"))]
        out += generator()
        out.append(V.test_martingale(spec, constant(1.0, spec.dim), [times[-1]], min(n, 200), dt,
                                     sub("smoke-const"), thr, threads=threads))
        out.append(V.test_martingale(spec, u, [times[-1]], min(n, 2000), dt, sub("smoke-mart"), thr,
                                     threads=threads))
        return out

    def negative():
        c = np.array(spec.x0)
        room = np.minimum(c - spec.lo, spec.hi - c)
        tight = bump(c, 0.25 * room)
        out = [V.test_martingale(spec, tight, [times[-1]], min(n, 2000), dt, sub("neg-mart"), thr,
                                 drop_integral=True, threads=threads)]
        out += generator_reports(spec, sub("neg-generator"), perturb=1e-3)
        return out

    table = {
        "smoke": smoke, "negative-control": negative, "martingale": martingale,
        "quadratic-variation": quadratic, "cross-construction": cross, "liouville-mass": mass,
        "non-explosion": non_explosion, "generator": generator,
    }
    if suite == "acceptance":
        reports = generator() + martingale() + quadratic() + non_explosion()
        if spec.family is Family.LBM:
            reports += cross()
        if config.field is not None:
            reports += mass()
        return reports
    return table[suite]()


def cmd_verify(args, config):
    suite = args.suite or config.verify.suite
    reports = run_suite(suite, config, args.seed, threads=args.threads)
    for r in reports:
        print(r.line())
    _write_report(args.out, suite, args.seed, reports)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


# -- parser ---------------------------------------------------------------------


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _common(parser, suppress):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=_u64, default=default(0), help="master seed (u64)")
    parser.add_argument("--threads", type=int, default=default(1), help="worker threads, 0 = auto")
    parser.add_argument("--config", default=default(None), help="JSON configuration file")
    parser.add_argument("--out", default=default(None), help="output file or directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="lbmlab", description=__doc__.splitlines()[0])
    _common(parser, suppress=False)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("green-table", help="massive Green function against K0")
    _common(p, suppress=True)
    p.add_argument("--m", type=float, required=True)
    p.add_argument("--rmin", type=float, required=True)
    p.add_argument("--rmax", type=float, required=True)
    p.add_argument("--steps", type=int, required=True)

    p = subs.add_parser("sample-field", help="sample the regularized field on the config grid")
    _common(p, suppress=True)

    p = subs.add_parser("simulate", help="Euler-Maruyama paths or moments")
    _common(p, suppress=True)
    p.add_argument("--paths", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--horizon", type=float)

    p = subs.add_parser("check-generator", help="carre du champ identity at random probes")
    _common(p, suppress=True)

    p = subs.add_parser("verify", help="run a verification suite")
    _common(p, suppress=True)
    p.add_argument("--suite", choices=SUITES)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        if args.command == "green-table":
            return cmd_green_table(args)
        if args.config is None:
            raise ConfigProblem("--config is required")
        try:
            config = load_config(args.config)
        except OSError as exc:
            raise ConfigProblem(f"cannot read config: {exc}") from None
        handler = {"sample-field": cmd_sample_field, "simulate": cmd_simulate,
                   "check-generator": cmd_check_generator, "verify": cmd_verify}[args.command]
        return handler(args, config)
    except ParseError as exc:
        print(f"config error at {exc.path}: {exc.message}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigProblem, InvalidParameter, UnknownPreset) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LbmLabError, ValueError, ArithmeticError, OSError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
