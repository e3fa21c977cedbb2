#!/usr/bin/env python3
"""Nonlinearity level of the default WH system as a function of input standard deviation.

Prints one line per std: the BLA simulation NRMS in percent and its complement.

    python scripts/nl_sweep.py --std 0.1 0.3 0.5 1 2
"""

import argparse

from subnet_init.data import default_wh_config, generate_white_gaussian, measure_nl_level


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--std", type=float, nargs="+", default=[0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0])
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--order", type=int, default=4)
    args = p.parse_args(argv)

    cfg = default_wh_config()
    z = generate_white_gaussian(args.samples, 1.0, args.seed)
    print(f"{'std':>8}  {'100*NRMS_BLA':>12}  {'(1-NRMS)*100':>12}")
    for std in args.std:
        level = measure_nl_level(cfg, std * z, args.order)
        print(f"{std:>8.3g}  {level:>12.3f}  {100 - level:>12.3f}")


if __name__ == "__main__":
    main()
