"""Tour of the expression layer: sampling, constraints, parsing, evaluation.

Run with:  python3 demos/01_expressions.py [--seed N]
"""

import argparse

import numpy as np

from formula_distill.expressions import (
    GrammarState,
    SkeletonConfig,
    constraint_check,
    evaluate,
    parse_preorder,
    sample_skeleton,
    to_preorder,
    tree_depth,
)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    rng = np.random.default_rng(args.seed)

    print("== random skeletons ==")
    cfg = SkeletonConfig(max_len=12, max_vars=2, max_depth=4)
    for _ in range(5):
        tokens = sample_skeleton(rng, cfg)
        tree = parse_preorder(tokens)
        print(f"  depth {tree_depth(tree)}  {' '.join(tokens)}")

    print("\n== the constraint masks at work ==")
    prefix = ["sin", "+"]
    for candidate in ("cos", "exp", "x1"):
        legal = constraint_check(prefix, candidate)
        print(f"  {' '.join(prefix)} | {candidate:>3} -> {'legal' if legal else 'masked'}")
    prefix = ["log"]
    for candidate in ("-", "+", "C"):
        legal = constraint_check(prefix, candidate)
        print(f"  {' '.join(prefix)} | {candidate:>3} -> {'legal' if legal else 'masked'}")

    print("\n== arity counter trace ==")
    state = GrammarState(max_vars=2)
    for tok in ["*", "C", "sin", "x1"]:
        state.push(tok)
        print(f"  push {tok:>3}  counter={state.count}  open={state.open_ancestors()}")
    print(f"  complete: {state.complete}")

    print("\n== round trip and evaluation ==")
    tokens = ["+", "*", "C", "x1", "sin", "x2"]
    tree = parse_preorder(tokens)
    assert to_preorder(tree) == tokens
    X = np.array([[1.0, 0.0], [2.0, np.pi / 2]])
    y = evaluate(tree, X, constants=(3.0,))
    print(f"  {' '.join(tokens)} with C=3 at {X.tolist()} -> {np.round(y, 6).tolist()}")


if __name__ == "__main__":
    main()
