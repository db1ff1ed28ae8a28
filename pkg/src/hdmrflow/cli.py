"""Command-line entry point: ``python -m hdmrflow <command> ...``.

Commands
--------
kle          build (or load from cache) the KLE basis and save it
sensitivity  first-order variances and the selected active set as CSV
run          run one method and write the statistics directory
stats        summarise a statistics directory
compare      relative errors of one statistics directory against another
counts       model-run ledger of the collocation strategies
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np
import yaml

from .config import METHODS, ConfigError, ExperimentConfig, load_config, parse_config
from .field import energy_fraction
from .hdmr import complexity_counts


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(value)
    for name in ("method", "output_dir", "workers", "cache_dir"):
        value = getattr(args, name, None)
        if value is not None:
            out[name] = value
    return out


def _config(args) -> ExperimentConfig:
    overrides = _overrides(args)
    if args.config:
        return load_config(args.config, overrides)
    return parse_config("", "<defaults>", overrides)


def _add_config_args(p, method=False):
    p.add_argument("--config", "-c", help="YAML experiment file (defaults apply when omitted)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
    p.add_argument("--cache-dir", dest="cache_dir", help="cache directory for KLE and velocity library")
    p.add_argument("--workers", type=int)
    if method:
        p.add_argument("--method", choices=METHODS)


def cmd_kle(args) -> int:
    from .driver import Experiment

    exp = Experiment(_config(args))
    out = args.out or os.path.join(exp.config.output_dir, "kle.npz")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    exp.klb.save(out)
    frac = energy_fraction(exp.klb, exp.klb.n_terms)
    print(f"{exp.klb.n_terms} terms, energy fraction {frac:.4f}, saved to {out}")
    return 0


def cmd_sensitivity(args) -> int:
    from .driver import Experiment, MethodKind, sensitivity_report

    cfg = _config(args)
    exp = Experiment(cfg)
    report = sensitivity_report(exp, MethodKind(cfg.method).solver)
    out = args.out or os.path.join(cfg.output_dir, "sensitivity.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    tmp = out + ".tmp"
    report.to_csv(tmp)
    os.replace(tmp, out)
    print(f"J = {report.n_active} of {len(report.variances)} (zeta = {report.zeta}); "
          f"active = {list(report.active)}; written to {out}")
    return 0


def cmd_run(args) -> int:
    from .driver import run_experiment

    cfg = _config(args)
    stats = run_experiment(cfg)
    stats.save(cfg.output_dir)
    print(f"{cfg.method}: {stats.ledger.get('model_solves')} model solves, "
          f"results in {cfg.output_dir}")
    return 0


def cmd_stats(args) -> int:
    from .driver import QoIStats

    s = QoIStats.load(args.directory)
    print(f"grid {s.grid[0]}x{s.grid[1]}, {len(s.pvi)} time levels up to {s.pvi[-1]:g} PVI")
    for k, v in s.ledger.items():
        print(f"  {k}: {v}")
    for t in sorted(s.sat_mean):
        print(f"  S at {t:g} PVI: mean of field {np.mean(s.sat_mean[t]):.6f}, "
              f"max std {np.max(s.sat_std[t]):.6f}")
    print(f"  final water-cut: mean {s.watercut_mean[-1]:.6f}, std {s.watercut_std[-1]:.6f}")
    return 0


def cmd_compare(args) -> int:
    from .driver import QoIStats, relative_errors

    ref = QoIStats.load(args.reference)
    test = QoIStats.load(args.test)
    pvi = args.pvi if args.pvi is not None else max(ref.sat_mean)
    report = relative_errors(ref, test, pvi)
    for k, v in report.as_dict().items():
        print(f"{k:10s} {v:.6e}")
    if args.out:
        tmp = args.out + ".tmp"
        report.to_csv(tmp)
        os.replace(tmp, args.out)
    return 0


def cmd_counts(args) -> int:
    c = complexity_counts(args.n, args.j, args.level, args.q, args.level_inactive)
    print(f"N = {args.n}, J = {args.j}, level = {args.level}, q = {args.q}")
    print(f"{'method':<24}{'model runs':>12}")
    rows = [("full sparse grid", c.full), (f"truncated (order {args.q})", c.truncated),
            ("adaptive HDMR", c.adaptive), ("hybrid HDMR", c.hybrid)]
    for name, v in rows:
        print(f"{name:<24}{v:>12d}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdmrflow", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("kle", help="build and save the KLE basis")
    _add_config_args(p)
    p.add_argument("--out", help="output .npz path")
    p.set_defaults(func=cmd_kle)

    p = sub.add_parser("sensitivity", help="first-order sensitivity report")
    _add_config_args(p, method=True)
    p.add_argument("--out", help="output CSV path")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("run", help="run one method")
    _add_config_args(p, method=True)
    p.add_argument("--output-dir", dest="output_dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("stats", help="summarise a statistics directory")
    p.add_argument("directory")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("compare", help="relative errors of TEST against REFERENCE")
    p.add_argument("reference")
    p.add_argument("test")
    p.add_argument("--pvi", type=float)
    p.add_argument("--out", help="errors CSV path")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("counts", help="model-run ledger")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--j", type=int, required=True)
    p.add_argument("--level", type=int, default=2)
    p.add_argument("--q", type=int, default=2)
    p.add_argument("--level-inactive", dest="level_inactive", type=int)
    p.set_defaults(func=cmd_counts)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
