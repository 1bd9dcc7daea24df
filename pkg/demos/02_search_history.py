"""Run one risk-seeking search and inspect the history it records.

The searcher samples expression batches from a recurrent policy, fits
constants, and trains on the top reward quantile. Every improvement of
the batch best becomes a history entry; the shortcut variant keeps the
strictly improving subsequence.

Run with:  python3 demos/02_search_history.py [--seed N]
"""

import argparse

from formula_distill.datasets import make_pointset, registry_lookup
from formula_distill.histories import extract_shortcut, flatten
from formula_distill.reward import level_token
from formula_distill.search import SearchConfig, run_search


def show(entries, label: str) -> None:
    print(f"  {label} ({len(entries)} entries):")
    for entry in entries:
        consts = ", ".join(f"{c:.3f}" for c in entry.constants)
        print(f"    {level_token(entry.level)}  {' '.join(entry.tokens)}"
              + (f"   [C = {consts}]" if consts else ""))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--name", default="Nguyen-1", help="benchmark to search")
    args = parser.parse_args()

    entry = registry_lookup(args.name)
    points = make_pointset(entry, seed=11)
    print(f"target: {args.name}  ({entry.expression})  on {points.X.shape[0]} points")

    cfg = SearchConfig(max_vars=points.X.shape[1], seed=args.seed)
    result = run_search(points, cfg)
    print(f"search: {result.reason} after {result.epochs} epochs, "
          f"best raw R^2 {result.best_raw:.4f}\n")

    show(result.entries, "full history")
    shortcut = extract_shortcut(result.entries)
    show(shortcut, "shortcut history")
    print(f"\nflattened training sequence ({len(flatten(result.entries))} tokens):")
    print(f"  {' '.join(flatten(result.entries))}")


if __name__ == "__main__":
    main()
