#!/usr/bin/env python3
"""Compare estimator-driven refinement on the L-shape cluster.

Two runs of the same eigenvalue problem: one driven by the pointwise
estimator with max marking, one driven by the energy estimator with Doerfler
marking. Both record both estimators per level, so the fitted slopes show
how each marking choice serves the other norm.
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
    argv = ["preset", "lshape_compare", "--out", args.out]
    if args.max_dof is not None:
        argv += ["--max-dof", str(args.max_dof)]
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
