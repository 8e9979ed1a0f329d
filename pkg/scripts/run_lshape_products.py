#!/usr/bin/env python3
"""Reproduce the L-shape cluster convergence table (dofs, estimator, product).

Runs the lshape_products preset and prints the per-level product table; artifacts
(history.csv, summary.json, mesh SVGs) land under the output root.
"""

import argparse
import sys

from eigenadapt.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out", help="output root directory")
    parser.add_argument("--max-dof", type=int, default=None,
                        help="stop earlier than the preset's budget")
    args = parser.parse_args()
    argv = ["preset", "lshape_products", "--out", args.out]
    if args.max_dof is not None:
        argv += ["--max-dof", str(args.max_dof)]
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
