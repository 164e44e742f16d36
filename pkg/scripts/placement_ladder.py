#!/usr/bin/env python3
"""Train the six-entry dropout placement ladder on the pinned synthetic set.

Covers no dropout, dropout at the top one/two/three LSTM outputs with unit
doubling at the dropped layers, plus the two enlarged architectures
without dropout as controls.
"""

import argparse
from dataclasses import replace
from pathlib import Path

from linerec.cli import write_tables
from linerec.experiments import overfit_dataset, overfit_recipe, placement_ladder
from linerec.training import comparison_table, run_experiment_matrix


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/placement-ladder", help="output directory")
    ap.add_argument("--max-epochs", type=int, default=None,
                    help="override the recipe's epoch count")
    args = ap.parse_args()

    recipe = overfit_recipe()
    cfg = recipe.cfg
    if args.max_epochs is not None:
        cfg = replace(cfg, max_epochs=args.max_epochs)

    alphabet, train_samples, valid_samples = overfit_dataset(recipe)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = run_experiment_matrix(
        placement_ladder(), alphabet, train_samples, valid_samples, cfg,
        out_dir=out,
    )
    rows = comparison_table(runs)
    text = write_tables(rows, list(rows[0].keys()), out / "comparison")
    print(text, end="")


if __name__ == "__main__":
    main()
