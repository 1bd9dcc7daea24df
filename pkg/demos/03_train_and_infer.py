"""Distill a toy corpus into the sequence model and run the in-context loop.

Builds a few solved histories by hand, trains a small data-conditioned
model until it memorizes them, then runs generate(): the model proposes
expressions, each one is fitted and scored, and the computed reward
token is spliced back into the context until the target is solved.

Run with:  python3 demos/03_train_and_infer.py
"""

import numpy as np

from formula_distill.inference import GenerateConfig, generate
from formula_distill.model import ModelConfig, train


def toy_record(i: int) -> dict:
    """A solved two-step history for the target y = x1."""
    xs = [1.0 + i, 2.0 + i, 3.0 + i]
    mean = sum(xs) / 3.0
    rows = "\n".join(f"{v},{v}" for v in xs)
    return {
        "id": i,
        "points_csv": f"x1,y\n{rows}\n",
        "tokens": ["C", "0.00", "x1", "1.00"],
        "constants": [[mean], []],
        "terminated_by": "Solved",
        "seed": i,
        "variant": "full",
    }


def main() -> None:
    records = [toy_record(i) for i in range(4)]
    cfg = ModelConfig(
        d_model=16, n_heads=2, n_enc_blocks=1, n_dec_layers=1,
        n_inducing=2, n_seed_vectors=2, max_seq_len=32, batch_size=4, lr=5e-3,
    )
    print("training on 4 toy histories ...")
    report = train(records, cfg, epochs=200, seed=0, return_model=True)
    model = report.pop("model")
    print(f"  steps {report['steps']}  final loss {report['final_loss']:.4f}\n")

    X = np.array([[1.0], [2.0], [3.0]])
    y = X[:, 0]
    result = generate(X, y, (model, cfg), GenerateConfig(max_seq_len=16, sampling="greedy"))
    print(f"inference on y = x1: terminated_by={result.terminated_by}")
    for step in result.trajectory:
        consts = ", ".join(f"{c:.3f}" for c in step.constants)
        print(f"  {step.level}  {' '.join(step.tokens)}"
              + (f"   [C = {consts}]" if consts else ""))
    print(f"best: {' '.join(result.best_tokens)}  raw R^2 {result.best_r2:.4f}")


if __name__ == "__main__":
    main()
