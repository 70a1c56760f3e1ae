"""Command line front end.

Exit codes: 0 success, 1 failed check or calibration, 2 configuration
error, 3 divergence, 4 I/O or data-format error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import typing
from pathlib import Path

import numpy as np

from ..errors import (
    CalibrationError,
    ConfigError,
    ConsistencyError,
    DivergenceError,
    EntropySgdError,
    FormatError,
)
from .config import PROFILES, ExperimentConfig, json_schema, load_config_file, resolve

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3, 4

log = logging.getLogger("entropy_sgd")


# ---------------------------------------------------------------------------
# config flags generated from the schema
# ---------------------------------------------------------------------------


def _unwrap(annotation):
    args = [a for a in typing.get_args(annotation) if a is not type(None)]
    if typing.get_origin(annotation) is typing.Union and len(args) == 1:
        return args[0]
    return annotation


def add_config_flags(parser):
    group = parser.add_argument_group("config keys (override profile and file)")
    for name, info in ExperimentConfig.model_fields.items():
        ann = _unwrap(info.annotation)
        origin = typing.get_origin(ann)
        kwargs = {"dest": f"cfg_{name}", "default": None}
        if ann is bool:
            kwargs["action"] = argparse.BooleanOptionalAction
        elif origin is typing.Literal:
            kwargs["choices"] = list(typing.get_args(ann))
        elif origin in (list, typing.List):
            kwargs.update(nargs="*", type=typing.get_args(ann)[0], metavar="N")
        else:
            kwargs["type"] = ann
        group.add_argument(f"--{name}", **kwargs)


def config_overrides(args):
    return {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}


def config_from_args(args):
    file_data = load_config_file(args.config) if getattr(args, "config", None) else None
    return resolve(getattr(args, "profile", None), file_data, config_overrides(args))


def _add_source_flags(parser):
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--profile", help=f"built-in profile ({', '.join(sorted(PROFILES))})")
    add_config_flags(parser)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_run(args):
    from .runner import run_experiment

    cfg = config_from_args(args)
    result = run_experiment(cfg)
    sys.stdout.write((result.run_dir / "metrics.csv").read_text())
    if args.plot:
        from .plotting import plot_curves
        from .runner import emit_plot_data

        paths = emit_plot_data([result.run_dir], result.run_dir / "plots")
        plot_curves(paths["curves"], result.run_dir / "plots" / "curves.png")
    log.info("run written to %s", result.run_dir)
    return EXIT_OK


def cmd_suite(args):
    from .runner import run_suite

    sources = [load_config_file(p) for p in args.configs]
    if args.profile_list:
        sources += [{"__profile__": p} for p in args.profile_list]
    if not sources:
        raise ConfigError("suite needs config files or --profiles", ["configs"])
    overrides = config_overrides(args)
    configs = []
    for src in sources:
        profile = src.pop("__profile__", None)
        for seed in args.seeds or [None]:
            extra = dict(overrides)
            if seed is not None:
                extra["seed"] = seed
            configs.append(resolve(profile, src, extra))
    rows = run_suite(configs, args.out, jobs=args.jobs)
    sys.stdout.write((Path(args.out) / "suite.csv").read_text())
    return EXIT_OK if all(r["n_failed"] == 0 for r in rows) else EXIT_FAIL


def cmd_spectrum(args):
    from .runner import run_spectrum

    report = run_spectrum(args.run_dir, args.source, workers=args.workers)
    summary = json.loads((Path(args.run_dir) / "spectrum.json").read_text())
    print(json.dumps(summary, indent=2, sort_keys=True))
    if args.plot:
        from .plotting import plot_spectrum

        plot_spectrum(report, Path(args.run_dir) / "spectrum.png")
    return EXIT_OK


def cmd_oracle_smoothing(args):
    from ..objective import Landscape1D
    from ..oracle import Grid, smoothing_family
    from .runner import widen_smoothing

    f = Landscape1D.double_well()
    table = smoothing_family(f, args.gammas, Grid(args.lo, args.hi, args.points))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "smoothing.csv")
    wide = widen_smoothing(out / "smoothing.csv", out / "smoothing_curves.csv")
    if args.plot:
        from .plotting import plot_smoothing

        plot_smoothing(wide, out / "smoothing.png", landscape=f)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["gamma", "argmin_negF"])
    for g, x in table.argmins().items():
        writer.writerow([repr(g), repr(x)])
    return EXIT_OK


def cmd_oracle_check(args):
    from ..oracle import GibbsSpec, local_entropy_grad_quadrature, local_entropy_quadratic_closed_form
    from ..oracle import local_entropy_quadrature
    from ..objective import QuadraticObjective

    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["a", "gamma", "x", "F_quadrature", "F_closed_form", "abs_err_F", "abs_err_grad"])
    worst = 0.0
    for a in args.curvatures:
        f = QuadraticObjective(np.array([[a]]))
        for gamma in args.gammas:
            spec = GibbsSpec(gamma, args.x)
            F_q = local_entropy_quadrature(f, spec)
            g_q = local_entropy_grad_quadrature(f, spec)
            F_c, g_c, _ = local_entropy_quadratic_closed_form(f.A, None, spec)
            eF, eg = abs(F_q - F_c), abs(g_q - float(g_c[0]))
            worst = max(worst, eF, eg)
            writer.writerow([repr(a), repr(gamma), repr(args.x), repr(F_q), repr(F_c), repr(eF), repr(eg)])
    return EXIT_OK if worst <= args.tol else EXIT_FAIL


def cmd_calibrate(args):
    from ..optimize import heuristic_gamma_calibration
    from .runner import build_datasets, build_model
    from ..net import init_params

    cfg = config_from_args(args)
    train, _, _ = build_datasets(cfg)
    obj = build_model(cfg, train)
    rng = np.random.default_rng(cfg.seed)
    x = init_params(obj.spec, rng)
    if args.params:
        x = np.load(args.params)
    opt_cfg = cfg.model_copy(update={"optimizer": "entropy-sgd"}).optimizer_config()
    try:
        gamma = heuristic_gamma_calibration(
            obj, x, opt_cfg, min(cfg.batch_size, train.n), rng, probes=args.probes, lo=args.lo, hi=args.hi,
        )
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        for g, r in exc.curve:
            print(f"  gamma={g:.4g} ratio={r:.4g}", file=sys.stderr)
        return EXIT_FAIL
    print(repr(gamma))
    return EXIT_OK


def cmd_report(args):
    from .plotting import plot_curves, plot_smoothing
    from .runner import emit_plot_data

    paths = emit_plot_data(args.run_dirs, args.out, smoothing_csv=args.smoothing)
    if not args.no_figures:
        plot_curves(paths["curves"], Path(args.out) / "curves.png")
        if "smoothing" in paths:
            plot_smoothing(paths["smoothing"], Path(args.out) / "smoothing.png")
        for d in args.run_dirs:
            spectrum_csv = Path(d) / "spectrum.csv"
            if spectrum_csv.is_file():
                from ..analysis import SpectrumReport
                from .plotting import plot_spectrum

                lam = np.loadtxt(spectrum_csv, delimiter=",", skiprows=1, ndmin=1)
                source = json.loads((Path(d) / "spectrum.json").read_text()).get("source", "spectrum")
                plot_spectrum(SpectrumReport(np.sort(lam), source), Path(args.out) / f"{Path(d).name}-spectrum.png")
    sys.stdout.write(Path(paths["curves"]).read_text())
    return EXIT_OK


def cmd_schema(args):
    print(json.dumps(json_schema(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_profiles(args):
    if args.name:
        if args.name not in PROFILES:
            raise ConfigError(f"unknown profile {args.name!r}", ["profile"])
        print(json.dumps(PROFILES[args.name], indent=2, sort_keys=True))
    else:
        for name in sorted(PROFILES):
            print(name)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="entropy-sgd", description="Entropy-SGD experiments and oracles.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one configuration")
    _add_source_flags(p)
    p.add_argument("--plot", action="store_true", help="also write plot CSVs and curves.png under <run>/plots")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("suite", help="run several configurations over seeds and aggregate")
    p.add_argument("configs", nargs="*", help="JSON config files")
    p.add_argument("--profiles", dest="profile_list", nargs="*", default=[], help="built-in profiles to include")
    p.add_argument("--seeds", nargs="*", type=int, help="seeds applied to every config")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    add_config_flags(p)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("spectrum", help="eigenspectrum at a run's final parameters")
    p.add_argument("run_dir")
    p.add_argument("--source", choices=["auto", "exact", "fisher"], default="auto")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("oracle", help="quadrature oracles")
    osub = p.add_subparsers(dest="oracle_command", required=True)
    q = osub.add_parser("smoothing", help="-F(x, gamma) on the default double well")
    q.add_argument("--gammas", nargs="+", type=float, default=[0.1, 1.0, 10.0, 1e6])
    q.add_argument("--lo", type=float, default=-5.0)
    q.add_argument("--hi", type=float, default=5.0)
    q.add_argument("--points", type=int, default=201)
    q.add_argument("--out", required=True)
    q.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True)
    q.set_defaults(func=cmd_oracle_smoothing)
    q = osub.add_parser("check", help="quadrature against the quadratic closed form")
    q.add_argument("--curvatures", nargs="+", type=float, default=[0.1, 1.0, 10.0])
    q.add_argument("--gammas", nargs="+", type=float, default=[0.1, 1.0, 10.0])
    q.add_argument("--x", type=float, default=0.7)
    q.add_argument("--tol", type=float, default=1e-8)
    q.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("calibrate-gamma", help="scope whose local-entropy gradient matches the SGD gradient size")
    _add_source_flags(p)
    p.add_argument("--params", help="params.npy to calibrate at (default: fresh initialisation)")
    p.add_argument("--probes", type=int, default=5)
    p.add_argument("--lo", type=float, default=1e-8)
    p.add_argument("--hi", type=float, default=1e4)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("report", help="plot CSVs and PNG figures for one or more runs")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--smoothing", help="tidy gamma,x,negF CSV to include")
    p.add_argument("--no-figures", action="store_true", help="write CSVs only")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("schema", help="print the config JSON schema")
    p.set_defaults(func=cmd_schema)

    p = sub.add_parser("profiles", help="list profiles or print one resolved")
    p.add_argument("name", nargs="?")
    p.set_defaults(func=cmd_profiles)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        if exc.keys:
            print(f"offending keys: {', '.join(exc.keys)}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, FormatError, ConsistencyError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except EntropySgdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
