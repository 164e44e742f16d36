#!/usr/bin/env python3
"""Train the pinned overfit A/B pair and print the comparison table.

Thin wrapper over `linerec experiment --preset overfit-ab`; writes
per-run convergence logs and checkpoints under the output directory,
then comparison.tsv/.txt summarizing both runs.
"""

import argparse
import sys

from linerec.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/overfit-ab", help="output directory")
    args = ap.parse_args()
    return cli_main(["experiment", "--preset", "overfit-ab", "--out", args.out])


if __name__ == "__main__":
    sys.exit(main())
