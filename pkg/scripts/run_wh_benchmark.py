#!/usr/bin/env python3
"""Train all three schemes on an externally supplied Wiener-Hammerstein benchmark record.

The CSV needs ``u_0`` and ``y_0`` columns. The preset uses a sixth-order model
and BLA, T=80, n=n_a=n_b=6, batch 1024 and an 80000/20000/rest split; the
epoch count defaults to 3000 and can be lowered for a quick look.

    python scripts/run_wh_benchmark.py WienerHammerBenchmark.csv --epochs 50
"""

import argparse
import logging
import sys

from subnet_init import cli


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("csv")
    p.add_argument("--out", default="runs/wh_benchmark")
    p.add_argument("--epochs", type=int)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-val", type=int)
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = cli.wh_benchmark_preset(args.csv)
    cfg.output_dir, cfg.runs = args.out, args.runs
    if args.epochs:
        cfg.train.epochs = args.epochs
    if args.n_train:
        cfg.N_train = args.n_train
    if args.n_val:
        cfg.N_val = args.n_val
    cfg.validate()
    code = cli.cmd_experiment(cfg)
    for row in cli.read_summary(f"{args.out}/summary.csv"):
        print(f"{row['scheme']:>14}  run {row['seed']}  test NRMS {row['test_nrms'] or '-':>10}  "
              f"best epoch {row['best_epoch'] or '-':>5}  {row['status']}")
    return code


if __name__ == "__main__":
    sys.exit(main())
