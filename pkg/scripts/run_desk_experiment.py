#!/usr/bin/env python3
"""Desk-scale sweep over nonlinearity levels and initialization schemes.

Writes the experiment directory described in ``subnet_init.cli`` and prints
the median test NRMS per (level, scheme). The full default grid (5 levels x 3
schemes x 3 seeds at 100 epochs) takes roughly two hours on one core.

    python scripts/run_desk_experiment.py --out runs/desk --nl 5 10 --runs 3
"""

import argparse
import logging
import sys

from subnet_init import cli
from subnet_init.subnet import SCHEMES


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/desk")
    p.add_argument("--nl", type=float, nargs="+", default=[1.0, 5.0, 10.0, 20.0, 40.0])
    p.add_argument("--scheme", nargs="+", choices=SCHEMES, default=list(SCHEMES))
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = cli.ExperimentConfig(nl_targets=args.nl, schemes=args.scheme, runs=args.runs, seed=args.seed,
                               output_dir=args.out)
    cfg.train.epochs = args.epochs
    code = cli.cmd_experiment(cfg)

    medians = cli.read_summary(f"{args.out}/medians.csv")
    print(f"\n{'nl %':>6}  " + "  ".join(f"{s:>14}" for s in args.scheme))
    for level in args.nl:
        cells = {m["scheme"]: m["median_test_nrms"] for m in medians if m["nl_target"] == f"{level:g}"}
        print(f"{level:>6g}  " + "  ".join(f"{float(cells[s]):>14.4g}" if cells.get(s) else f"{'failed':>14}"
                                           for s in args.scheme))
    return code


if __name__ == "__main__":
    sys.exit(main())
