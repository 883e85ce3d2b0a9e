"""Command line entry point.

    nlsteklov run --config configs/disk_blowup.ini --out out/disk
    nlsteklov spectrum --config configs/disk_spectrum.ini
    nlsteklov continue --config configs/annulus_x1.ini --seed-spec eigen:2:0.5 --lambda-end 0.1
    nlsteklov run --config out/disk/manifest.json --out out/replay     # replay a run
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import STEPS, ConfigError, load_config
from .pipeline import run

log = logging.getLogger("nlsteklov")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="INI config, or a run manifest to replay")
    common.add_argument("--out", help="output directory (overrides [run] out)")
    common.add_argument("--threads", type=int, help="worker threads for sampling steps")
    common.add_argument("--seed-spec", dest="seed",
                        help="branch seed: trivial | eigen:n:amp | ansatz:x,y:x,y[:mu1,mu2]")
    common.add_argument("--lambda-start", type=float)
    common.add_argument("--lambda-end", type=float)
    common.add_argument("--lambda-factor", type=float)
    common.add_argument("--deflate", action="append", metavar="DIR",
                        help="branch directory of a known solution family (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="nlsteklov", description="Nonlinear Steklov experiments")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="all steps listed in [run] steps, in dependency order")
    for name in STEPS:
        sub.add_parser(name, parents=[common], help=f"run the {name} step only")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(
            out=args.out, threads=args.threads, seed=args.seed, lambda_start=args.lambda_start,
            lambda_end=args.lambda_end, lambda_factor=args.lambda_factor, deflate=args.deflate)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    steps = None if args.command == "run" else [args.command]
    status, ctx = run(cfg, steps)
    for name, st in ctx.status.items():
        if st != "ok":
            print(f"{name}: {st}", file=sys.stderr)
    print(f"outputs in {ctx.out} (status {status})")
    return status


if __name__ == "__main__":
    sys.exit(main())
