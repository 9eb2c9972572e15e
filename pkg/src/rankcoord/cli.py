"""Command line front end.

    rankcoord run --config cfg.yaml [--override sim.key=value]... --out DIR
    rankcoord compare --config-a a.yaml --config-b b.yaml [--seed N] --out DIR
    rankcoord report gain|rankhist|cdf --in DIR [--in-b DIR] --out FILE.csv

Exit code 0 on success; configuration problems are diagnosed on stderr and
exit nonzero before any simulation starts.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import report as report_mod
from . import sim
from .config import (ConfigError, apply_overrides, default_config,
                     load_config, validate)


def _load(path, overrides):
    cfg = load_config(path) if path else default_config()
    cfg = apply_overrides(cfg, overrides)
    validate(cfg)
    return cfg


def _cmd_run(args):
    cfg = _load(args.config, args.override)
    summary = sim.run(cfg, out_dir=args.out)
    print(f"cell_avg_se={summary.cell_avg_se:.4f} bits/s/Hz/cell  "
          f"cell_edge={summary.cell_edge:.5f} bits/s/Hz")
    return 0


def _cmd_compare(args):
    cfg_a = _load(args.config_a, args.override)
    cfg_b = _load(args.config_b, args.override)
    _, _, ratios = sim.compare(cfg_a, cfg_b, seed=args.seed, out_dir=args.out)
    print(f"cell_avg_ratio={ratios['cell_avg_ratio']:.4f}  "
          f"cell_edge_ratio={ratios['cell_edge_ratio']:.4f}")
    return 0


def _cmd_report(args):
    if args.kind == "gain":
        if not args.in_b:
            raise ConfigError("report gain needs --in-b for the baseline run")
        fig = report_mod.make_gain_table(report_mod.load_metrics(args.in_dir),
                                         report_mod.load_metrics(args.in_b))
    elif args.kind == "rankhist":
        fig = report_mod.make_rank_histogram(os.path.join(args.in_dir, "sched_trace.csv"))
    elif args.kind == "cdf":
        users_b = os.path.join(args.in_b, "users.csv") if args.in_b else None
        fig = report_mod.make_cdf(os.path.join(args.in_dir, "users.csv"), users_b)
    else:
        raise ConfigError(f"unknown report kind {args.kind!r}")
    fig.write_csv(args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="rankcoord",
                                description="multi-cell rank coordination simulator")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="simulate one configuration")
    pr.add_argument("--config", help="YAML config file (default: desk-scale config)")
    pr.add_argument("--override", action="append", default=[],
                    metavar="key=value", help="dotted-path config override")
    pr.add_argument("--out", required=True, help="output directory")
    pr.set_defaults(func=_cmd_run)

    pc = sub.add_parser("compare", help="paired run of two configurations")
    pc.add_argument("--config-a", required=True)
    pc.add_argument("--config-b", required=True)
    pc.add_argument("--seed", type=int, default=None)
    pc.add_argument("--override", action="append", default=[])
    pc.add_argument("--out", required=True)
    pc.set_defaults(func=_cmd_compare)

    pp = sub.add_parser("report", help="turn run outputs into plot-ready CSV")
    pp.add_argument("kind", choices=["gain", "rankhist", "cdf"])
    pp.add_argument("--in", dest="in_dir", required=True, help="run output directory")
    pp.add_argument("--in-b", dest="in_b", help="second run directory (gain, cdf)")
    pp.add_argument("--out", required=True, help="output CSV file")
    pp.set_defaults(func=_cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
