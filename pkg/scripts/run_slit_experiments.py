#!/usr/bin/env python3
"""Slit-domain experiments: multiple eigenvalue capture and tip robustness.

Runs three presets in sequence:

- slit_multiple: square with four symmetric slits, cluster {2,3} (a true
  double eigenvalue); checks that all four slit tips attract refinement.
- slit_perturbed_j2: perturbed slits with the single index J={2}, under
  plain newest-vertex bisection and under the grading-limited variant.
- slit_perturbed_cluster: same domain with the full cluster J={2,3}.

Each run prints fitted slopes and a per-tip minimum-h report.
"""

import argparse
import sys

from eigenadapt.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out", help="output root directory")
    parser.add_argument("--max-dof", type=int, default=None,
                        help="stop earlier than the presets' budget")
    parser.add_argument("--presets", nargs="+",
                        default=["slit_multiple", "slit_perturbed_j2",
                                 "slit_perturbed_cluster"],
                        help="subset of slit presets to run")
    args = parser.parse_args()
    rc = 0
    for name in args.presets:
        argv = ["preset", name, "--out", args.out]
        if args.max_dof is not None:
            argv += ["--max-dof", str(args.max_dof)]
        rc = cli_main(argv) or rc
    return rc


if __name__ == "__main__":
    sys.exit(main())
