"""Drive the CLI end to end: collect, train, and write benchmark reports.

Everything runs in a temporary directory with tiny budgets so the whole
tour takes about a minute. Each step is the exact command a shell user
would run (shown before it executes).

Run with:  python3 demos/04_benchmark_reports.py
"""

import json
import tempfile
from pathlib import Path

from formula_distill import cli

TINY = {
    "skeleton_tokens": ["+", "x1", "C"],
    "skeleton_max_len": 5,
    "skeleton_max_vars": 1,
    "search_batch_size": 16,
    "search_max_epochs": 3,
    "search_max_expr_len": 5,
    "search_max_vars": 1,
    "model_d_model": 16,
    "model_n_heads": 2,
    "model_n_enc_blocks": 1,
    "model_n_dec_layers": 1,
    "model_n_inducing": 2,
    "model_n_seed_vectors": 2,
    "model_max_seq_len": 32,
    "model_batch_size": 4,
    "model_lr": 0.005,
    "gen_max_seq_len": 12,
    "fit_restarts": 1,
    "fit_max_iters": 25,
}


def run(argv: list) -> None:
    print(f"$ formula-distill {' '.join(str(a) for a in argv)}")
    code = cli.main([str(a) for a in argv])
    assert code == 0, f"exit code {code}"


def show(path: Path, n: int = 5) -> None:
    lines = path.read_text().splitlines()
    for line in lines[:n]:
        print(f"    {line[:110]}")
    if len(lines) > n:
        print(f"    ... ({len(lines) - n} more lines)")
    print()


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        config = root / "config.json"
        config.write_text(json.dumps(TINY))

        corpus = root / "corpus.jsonl"
        run(["collect", "--targets", "8", "--points", "16", "--seed", "0",
             "--config", config, "--out", corpus])
        show(corpus, 2)

        ckpt = root / "model.ckpt"
        run(["train", "--corpus", corpus, "--epochs", "8", "--seed", "0",
             "--config", config, "--out", ckpt])

        report = root / "r2.csv"
        run(["bench-r2", "--checkpoint", ckpt, "--name", "Nguyen-8",
             "--repeats", "3", "--seed", "0", "--config", config, "--out", report])
        show(report)

        noise = root / "noise.csv"
        run(["bench-noise", "--checkpoint", ckpt, "--name", "Nguyen-8",
             "--levels", "0:0.04:0.02", "--seed", "0", "--config", config,
             "--out", noise])
        show(noise)

        print("reports carry their resolved settings in the leading '# {...}' line,")
        print("so every CSV is reproducible from its own header plus the seed.")


if __name__ == "__main__":
    main()
