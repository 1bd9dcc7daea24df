"""Command-line interface.

Subcommands cover the full pipeline: sampling benchmark data, collecting
search histories, deriving shortcut variants, splitting corpora, training
the sequence model, running inference, and the benchmark harnesses.

Conventions shared by every command:

- settings resolve as CLI flags > ``--config`` JSON file > defaults; the
  config file is a flat JSON object whose keys are the command settings,
  with ``skeleton_``/``search_``/``model_``/``gen_``/``fit_`` prefixes
  for the corresponding dataclass fields;
- exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 other runtime
  failure; failures also print a JSON object on stderr;
- CSV reports start with a ``# {...}`` comment carrying the resolved
  settings (paths and worker counts excluded) and are byte-deterministic
  under a fixed ``--seed``;
- per-entry work derives its seed from (master seed, entry name, repeat
  index), so the worker count never changes results.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
from dataclasses import asdict, replace
from multiprocessing import get_context
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from scipy import stats as scipy_stats

from . import datasets, histories, inference
from . import model as model_mod
from . import search
from .constants import FitConfig
from .errors import ConfigError, FormulaDistillError, UnknownBenchmark
from .expressions import SkeletonConfig
from .inference import GenerateConfig
from .model import ModelConfig
from .search import SearchConfig
from .seeding import stable_seed

_DEFAULTS: Dict[str, dict] = {
    "gen-data": {"seed": 0, "name": None, "noise": 0.0, "cartesian": False},
    "collect": {"seed": 0, "workers": 1, "targets": 10, "points": 64},
    "shortcut": {},
    "split": {"seed": 0, "val_fraction": 0.1},
    "train": {"seed": 0, "epochs": 1},
    "infer": {"seed": 0, "name": None, "noise": 0.0, "timing": False},
    "bench-r2": {
        "seed": 0, "workers": 1, "group": None, "name": None,
        "repeats": 20, "confidence": 0.95, "noise": 0.0,
    },
    "bench-noise": {
        "seed": 0, "workers": 1, "group": None, "name": None,
        "repeats": 1, "levels": "0:0.1:0.01",
    },
    "bench-versatility": {
        "seed": 0, "workers": 1, "group": None, "name": None, "repeats": 1,
    },
    "bench-timing": {
        "seed": 0, "workers": 1, "group": None, "name": None, "repeats": 5,
    },
    "bench-datasize": {
        "seed": 0, "sizes": "1000,5000,20000,100000",
        "epochs": 1, "eval_targets": 10, "points": 64,
    },
}

_PREFIX_CLASSES = {
    "skeleton_": SkeletonConfig,
    "search_": SearchConfig,
    "model_": ModelConfig,
    "gen_": GenerateConfig,
    "fit_": FitConfig,
}
_PREFIX_SKIP = {"gen_": ("fit",)}  # nested dataclass, configured via fit_*

_PREFIXES: Dict[str, Tuple[str, ...]] = {
    "collect": ("skeleton_", "search_"),
    "train": ("model_",),
    "infer": ("gen_", "fit_"),
    "bench-r2": ("gen_", "fit_"),
    "bench-noise": ("gen_", "fit_"),
    "bench-versatility": ("gen_", "fit_"),
    "bench-timing": ("gen_", "fit_"),
    "bench-datasize": ("model_", "skeleton_", "gen_", "fit_"),
}

# flags whose argparse dest differs from (or maps onto) a settings key
_CLI_KEYS = (
    ("seed", "seed"), ("workers", "workers"), ("name", "name"), ("group", "group"),
    ("noise", "noise"), ("cartesian", "cartesian"), ("targets", "targets"),
    ("points", "points"), ("epochs", "epochs"), ("val_fraction", "val_fraction"),
    ("repeats", "repeats"), ("confidence", "confidence"), ("levels", "levels"),
    ("timing", "timing"), ("sizes", "sizes"), ("eval_targets", "eval_targets"),
    ("sampling", "gen_sampling"), ("top_k", "gen_top_k"),
    ("temperature", "gen_temperature"), ("max_seq_len", "gen_max_seq_len"),
)

_HEADER_EXCLUDED = {"config", "out", "checkpoint", "corpus", "data", "workers"}


def _prefixed_names(prefix: str) -> set:
    skip = set(_PREFIX_SKIP.get(prefix, ()))
    return {
        prefix + f.name
        for f in dataclasses.fields(_PREFIX_CLASSES[prefix])
        if f.name not in skip
    }


_GLOBAL_KEYS = set().union(*(set(d) for d in _DEFAULTS.values()))
for _prefix in _PREFIX_CLASSES:
    _GLOBAL_KEYS |= _prefixed_names(_prefix)


def _read_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a flat JSON object")
    return data


def _resolve(command: str, args) -> dict:
    """Merge defaults, config-file keys, and CLI flags for one command."""
    settings = dict(_DEFAULTS[command])
    allowed = set(settings)
    for prefix in _PREFIXES.get(command, ()):
        allowed |= _prefixed_names(prefix)
    config_path = getattr(args, "config", None)
    if config_path:
        for key, value in _read_config(config_path).items():
            if key not in _GLOBAL_KEYS:
                raise ConfigError(f"unknown config key: {key!r}")
            if key in allowed:
                settings[key] = value
    for dest, key in _CLI_KEYS:
        if hasattr(args, dest):
            value = getattr(args, dest)
            if value is not None and key in allowed:
                settings[key] = value
    return settings


def _build(cls, prefix: str, settings: dict, **extra):
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in settings.items():
        if key.startswith(prefix) and key[len(prefix):] in names:
            kwargs[key[len(prefix):]] = value
    kwargs.update(extra)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad {cls.__name__} settings: {exc}") from None


def _gen_config(settings: dict, seed: Optional[int] = None) -> GenerateConfig:
    fit = _build(FitConfig, "fit_", settings)
    gen_kwargs = {
        key[len("gen_"):]: value
        for key, value in settings.items()
        if key.startswith("gen_") and key != "gen_fit"
    }
    if seed is not None:
        gen_kwargs.setdefault("seed", seed)
    try:
        return GenerateConfig(fit=fit, **gen_kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad GenerateConfig settings: {exc}") from None


def _expand(prefix: str, cfg) -> dict:
    skip = set(_PREFIX_SKIP.get(prefix, ()))
    if prefix == "gen_":
        skip.add("seed")  # benchmarks re-derive the seed per task
    out = {}
    for key, value in asdict(cfg).items():
        if key in skip:
            continue
        if isinstance(value, tuple):
            value = list(value)
        out[prefix + key] = value
    return out


def _require(value, flag: str):
    if value is None:
        raise ConfigError(f"{flag} is required")
    return value


def _print_json(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, ensure_ascii=False) + "\n")


def _write_report(out_path, settings: dict, extra_cfg: dict, columns, rows) -> None:
    header_cfg = {
        k: v for k, v in settings.items() if k not in _HEADER_EXCLUDED
    }
    header_cfg.update(extra_cfg)
    buf = io.StringIO()
    buf.write("# " + json.dumps(header_cfg, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(row)
    if out_path:
        Path(out_path).write_text(buf.getvalue(), encoding="utf-8")
    else:
        sys.stdout.write(buf.getvalue())


# ---------------------------------------------------------------------------
# benchmark task engine

_WORKER_STATE: dict = {}


def _bench_worker_init(checkpoint_path: str, gen_json: str) -> None:
    torch.set_num_threads(1)
    _WORKER_STATE["checkpoint"] = model_mod.load_checkpoint(checkpoint_path)
    payload = json.loads(gen_json)
    fit = FitConfig(**payload.pop("fit"))
    _WORKER_STATE["gen"] = GenerateConfig(fit=fit, **payload)


def _bench_task(payload) -> dict:
    name, repeat, master_seed, noise_level, low, high = payload
    model_pair = _WORKER_STATE["checkpoint"]
    template = _WORKER_STATE["gen"]
    entry = datasets.registry_lookup(name)
    if low is not None:
        entry = replace(entry, spec=replace(entry.spec, a=low, b=high))
    try:
        ps = datasets.make_pointset(
            entry, seed=stable_seed(master_seed, name, repeat), noise_level=noise_level
        )
        gen_cfg = replace(template, seed=stable_seed(master_seed, name, repeat, "gen"))
        result = inference.generate(ps.X, ps.y, model_pair, gen_cfg)
    except FormulaDistillError as exc:
        return {
            "name": name, "repeat": repeat, "best_r2": None,
            "n_intermediate": 0, "terminated_by": f"Error:{type(exc).__name__}",
            "elapsed_s": 0.0,
        }
    return {
        "name": name, "repeat": repeat, "best_r2": result.best_r2,
        "n_intermediate": result.n_intermediate,
        "terminated_by": result.terminated_by, "elapsed_s": result.elapsed_s,
    }


def _run_bench_tasks(payloads: List[tuple], settings: dict, checkpoint_path) -> List[dict]:
    gen_template = _gen_config(settings, seed=0)
    gen_json = json.dumps(asdict(gen_template))
    workers = int(settings.get("workers", 1))
    if workers < 1:
        raise ConfigError(f"workers must be >= 1: {workers}")
    if workers == 1:
        _bench_worker_init(str(checkpoint_path), gen_json)
        return [_bench_task(p) for p in payloads]
    ctx = get_context("spawn")
    with ctx.Pool(
        processes=workers,
        initializer=_bench_worker_init,
        initargs=(str(checkpoint_path), gen_json),
    ) as pool:
        return list(pool.imap(_bench_task, payloads, chunksize=1))


def _bench_entries(settings: dict) -> List:
    if settings.get("name"):
        return [datasets.registry_lookup(settings["name"])]
    if settings.get("group"):
        entries = datasets.registry_group(settings["group"])
        if not entries:
            raise ConfigError(f"unknown or empty benchmark group: {settings['group']!r}")
        return entries
    raise ConfigError("either --name or --group is required")


def _score(task: dict) -> float:
    value = task["best_r2"]
    if value is None or not math.isfinite(value):
        return 0.0
    return float(value)


def _parse_levels(text) -> List[float]:
    if not isinstance(text, str):
        raise ConfigError("levels must be a 'start:stop:step' string")
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"levels must be 'start:stop:step': {text!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"levels must be numeric: {text!r}") from None
    if step <= 0 or stop < start:
        raise ConfigError(f"levels range is empty or reversed: {text!r}")
    count = int(round((stop - start) / step)) + 1
    levels = []
    for i in range(count):
        raw = start + i * step
        level = round(raw, 2)
        if abs(level - raw) > 1e-9 or level not in datasets.NOISE_LEVELS:
            raise ConfigError(
                f"noise level {raw!r} is not one of the canonical levels {datasets.NOISE_LEVELS}"
            )
        levels.append(level)
    return levels


def _parse_sizes(value) -> List[int]:
    if isinstance(value, str):
        parts = [p.strip() for p in value.split(",") if p.strip()]
        try:
            sizes = [int(p) for p in parts]
        except ValueError:
            raise ConfigError(f"sizes must be integers: {value!r}") from None
    elif isinstance(value, (list, tuple)):
        sizes = [int(v) for v in value]
    else:
        raise ConfigError(f"sizes must be a comma list or JSON array: {value!r}")
    if not sizes or any(s < 1 for s in sizes):
        raise ConfigError(f"sizes must be positive: {sizes}")
    return sizes


# ---------------------------------------------------------------------------
# commands


def _cmd_gen_data(settings: dict, args) -> int:
    name = _require(settings["name"], "--name")
    out = _require(args.out, "--out")
    entry = datasets.registry_lookup(name)
    ps = datasets.make_pointset(
        entry,
        seed=stable_seed(settings["seed"], "gen-data", entry.name),
        noise_level=settings["noise"],
        cartesian=bool(settings["cartesian"]),
    )
    datasets.save_pointset(ps, out)
    _print_json({"name": entry.name, "n_points": int(len(ps.y)), "out": str(out)})
    return 0


def _cmd_collect(settings: dict, args) -> int:
    out = _require(args.out, "--out")
    skeleton_cfg = _build(SkeletonConfig, "skeleton_", settings)
    search_cfg = _build(SearchConfig, "search_", settings)
    stats = search.collect_corpus(
        int(settings["targets"]),
        skeleton_cfg,
        search_cfg,
        out,
        n_points=int(settings["points"]),
        master_seed=settings["seed"],
        workers=int(settings["workers"]),
    )
    _print_json(stats)
    return 0


def _cmd_shortcut(settings: dict, args) -> int:
    corpus = _require(args.corpus, "--corpus")
    out = _require(args.out, "--out")
    records = [histories.shortcut_record(r) for r in histories.iter_corpus(corpus)]
    histories.write_corpus(out, records)
    _print_json({"records": len(records), "out": str(out)})
    return 0


def _cmd_split(settings: dict, args) -> int:
    corpus = _require(args.corpus, "--corpus")
    fraction = float(settings["val_fraction"])
    if not 0.0 <= fraction < 1.0:
        raise ConfigError(f"val_fraction must be in [0, 1): {fraction}")
    train_path, val_path = histories.split_corpus(corpus, fraction, settings["seed"])
    n_train = sum(1 for _ in histories.iter_corpus(train_path))
    n_val = sum(1 for _ in histories.iter_corpus(val_path))
    _print_json(
        {"train": str(train_path), "val": str(val_path), "n_train": n_train, "n_val": n_val}
    )
    return 0


def _cmd_train(settings: dict, args) -> int:
    corpus = _require(args.corpus, "--corpus")
    out = _require(args.out, "--out")
    cfg = _build(ModelConfig, "model_", settings)
    report = model_mod.train(
        corpus, cfg, out_path=out, epochs=int(settings["epochs"]), seed=settings["seed"]
    )
    _print_json(report)
    return 0


def _cmd_infer(settings: dict, args) -> int:
    checkpoint = _require(args.checkpoint, "--checkpoint")
    if args.data:
        ps = datasets.load_pointset(args.data)
    elif settings["name"]:
        entry = datasets.registry_lookup(settings["name"])
        ps = datasets.make_pointset(
            entry,
            seed=stable_seed(settings["seed"], "infer-points", entry.name),
            noise_level=settings["noise"],
        )
    else:
        raise ConfigError("either --data or --name is required")
    gen_cfg = _gen_config(settings, seed=settings["seed"])
    result = inference.generate(ps.X, ps.y, checkpoint, gen_cfg)
    text = inference.result_to_json(result, timing=bool(settings["timing"]))
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")
    return 0


def _bench_header_extra(settings: dict) -> dict:
    gen_template = _gen_config(settings, seed=0)
    extra = _expand("gen_", gen_template)
    extra.update(_expand("fit_", gen_template.fit))
    return extra


def _cmd_bench_r2(settings: dict, args) -> int:
    checkpoint = _require(args.checkpoint, "--checkpoint")
    entries = _bench_entries(settings)
    repeats = int(settings["repeats"])
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1: {repeats}")
    confidence = float(settings["confidence"])
    if not 0.0 < confidence < 1.0:
        raise ConfigError(f"confidence must be in (0, 1): {confidence}")
    payloads = [
        (entry.name, r, settings["seed"], float(settings["noise"]), None, None)
        for entry in entries
        for r in range(repeats)
    ]
    results = _run_bench_tasks(payloads, settings, checkpoint)
    rows = []
    for i, entry in enumerate(entries):
        scores = [_score(t) for t in results[i * repeats : (i + 1) * repeats]]
        mean = float(np.mean(scores))
        if repeats >= 2:
            t_crit = float(scipy_stats.t.ppf(0.5 + confidence / 2, repeats - 1))
            ci = t_crit * float(np.std(scores, ddof=1)) / math.sqrt(repeats)
        else:
            ci = 0.0
        rows.append([entry.name, mean, ci, repeats])
    _write_report(args.out, settings, _bench_header_extra(settings),
                  ["name", "mean_r2", "ci95", "repeats"], rows)
    return 0


def _cmd_bench_noise(settings: dict, args) -> int:
    checkpoint = _require(args.checkpoint, "--checkpoint")
    entries = _bench_entries(settings)
    repeats = int(settings["repeats"])
    levels = _parse_levels(settings["levels"])
    payloads = [
        (entry.name, r, stable_seed(settings["seed"], "noise", level), level, None, None)
        for level in levels
        for entry in entries
        for r in range(repeats)
    ]
    results = _run_bench_tasks(payloads, settings, checkpoint)
    rows = []
    per_level = len(entries) * repeats
    for i, level in enumerate(levels):
        scores = [_score(t) for t in results[i * per_level : (i + 1) * per_level]]
        rows.append([level, float(np.mean(scores))])
    _write_report(args.out, settings, _bench_header_extra(settings),
                  ["level", "mean_r2"], rows)
    return 0


def _cmd_bench_versatility(settings: dict, args) -> int:
    checkpoint = _require(args.checkpoint, "--checkpoint")
    entries = _bench_entries(settings)
    repeats = int(settings["repeats"])
    intervals = datasets.versatility_intervals()
    payloads = [
        (entry.name, r, stable_seed(settings["seed"], "interval", low, high), 0.0, low, high)
        for (low, high) in intervals
        for entry in entries
        for r in range(repeats)
    ]
    results = _run_bench_tasks(payloads, settings, checkpoint)
    rows = []
    per_interval = len(entries) * repeats
    for i, (low, high) in enumerate(intervals):
        scores = [_score(t) for t in results[i * per_interval : (i + 1) * per_interval]]
        rows.append([low, high, float(np.mean(scores))])
    _write_report(args.out, settings, _bench_header_extra(settings),
                  ["low", "high", "mean_r2"], rows)
    return 0


def _cmd_bench_timing(settings: dict, args) -> int:
    checkpoint = _require(args.checkpoint, "--checkpoint")
    entries = _bench_entries(settings)
    repeats = int(settings["repeats"])
    payloads = [
        (entry.name, r, settings["seed"], 0.0, None, None)
        for entry in entries
        for r in range(repeats)
    ]
    results = _run_bench_tasks(payloads, settings, checkpoint)
    rows = [
        [t["name"], t["repeat"], t["elapsed_s"], _score(t),
         t["n_intermediate"], t["terminated_by"]]
        for t in results
    ]
    _write_report(args.out, settings, _bench_header_extra(settings),
                  ["name", "repeat", "elapsed_s", "best_r2", "n_intermediate", "terminated_by"],
                  rows)
    return 0


def _cmd_bench_datasize(settings: dict, args) -> int:
    _require(args.checkpoint, "--checkpoint")  # reserved: keeps flag surface uniform
    corpus = _require(args.corpus, "--corpus")
    sizes = _parse_sizes(settings["sizes"])
    records = list(histories.iter_corpus(corpus))
    if max(sizes) > len(records):
        raise ConfigError(
            f"corpus holds {len(records)} records; cannot train at size {max(sizes)}"
        )
    model_cfg = _build(ModelConfig, "model_", settings)
    skeleton_cfg = _build(SkeletonConfig, "skeleton_", settings)
    eval_targets = int(settings["eval_targets"])
    if eval_targets < 1:
        raise ConfigError(f"eval_targets must be >= 1: {eval_targets}")
    eval_master = stable_seed(settings["seed"], "datasize-eval")
    eval_sets = [
        search.synthesize_target(eval_master, i, skeleton_cfg, int(settings["points"]))[0]
        for i in range(eval_targets)
    ]
    rows = []
    for size in sizes:
        report = model_mod.train(
            records[:size],
            model_cfg,
            out_path=None,
            epochs=int(settings["epochs"]),
            seed=stable_seed(settings["seed"], "datasize", size),
            return_model=True,
        )
        model = report["model"]
        scores = []
        for i, ps in enumerate(eval_sets):
            gen_cfg = _gen_config(settings, seed=stable_seed(settings["seed"], "datasize-gen", size, i))
            result = inference.generate(ps.X, ps.y, (model, model_cfg), gen_cfg)
            scores.append(result.best_r2 if result.best_r2 is not None else 0.0)
        rows.append([size, min(size, len(records)), report["final_loss"], float(np.mean(scores))])
    extra = _bench_header_extra(settings)
    extra.update(_expand("model_", model_cfg))
    extra.update(_expand("skeleton_", skeleton_cfg))
    _write_report(args.out, settings, extra,
                  ["size", "n_records", "final_loss", "mean_r2"], rows)
    return 0


_DISPATCH = {
    "gen-data": _cmd_gen_data,
    "collect": _cmd_collect,
    "shortcut": _cmd_shortcut,
    "split": _cmd_split,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "bench-r2": _cmd_bench_r2,
    "bench-noise": _cmd_bench_noise,
    "bench-versatility": _cmd_bench_versatility,
    "bench-timing": _cmd_bench_timing,
    "bench-datasize": _cmd_bench_datasize,
}


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(sub, out=True):
    sub.add_argument("--config", help="flat JSON settings file")
    sub.add_argument("--seed", type=int, help="master seed")
    if out:
        sub.add_argument("--out", help="output file path")


def _add_gen_flags(sub):
    sub.add_argument("--sampling", choices=["greedy", "top_k"], help="decoding strategy")
    sub.add_argument("--top-k", type=int, dest="top_k", help="top-k width for sampling")
    sub.add_argument("--temperature", type=float, help="sampling temperature")
    sub.add_argument("--max-seq-len", type=int, dest="max_seq_len",
                     help="inference token budget")


def _add_bench_flags(sub):
    sub.add_argument("--checkpoint", help="trained model checkpoint")
    sub.add_argument("--group", help="benchmark group name")
    sub.add_argument("--name", help="single benchmark name")
    sub.add_argument("--repeats", type=int, help="runs per benchmark")
    sub.add_argument("--workers", type=int, help="worker process count")
    _add_gen_flags(sub)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="formula-distill",
        description="Distilled symbolic-regression pipeline: data, search, training, inference, benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="sample a benchmark point set to CSV")
    _add_common(p)
    p.add_argument("--name", help="benchmark name")
    p.add_argument("--noise", type=float, help="noise level (0.00..0.10)")
    p.add_argument("--cartesian", action="store_true", default=None,
                   help="full cartesian grid for <=2-variable grid specs")

    p = sub.add_parser("collect", help="search synthesized targets and record histories")
    _add_common(p)
    p.add_argument("--targets", type=int, help="number of targets to search")
    p.add_argument("--points", type=int, help="points per target")
    p.add_argument("--workers", type=int, help="worker process count")

    p = sub.add_parser("shortcut", help="derive shortcut variants of a history corpus")
    p.add_argument("--corpus", help="input corpus JSONL")
    p.add_argument("--out", help="output file path")

    p = sub.add_parser("split", help="split a corpus into train/val files")
    _add_common(p, out=False)
    p.add_argument("--corpus", help="input corpus JSONL")
    p.add_argument("--val-fraction", type=float, dest="val_fraction",
                   help="fraction held out for validation")

    p = sub.add_parser("train", help="train the sequence model on a corpus")
    _add_common(p)
    p.add_argument("--corpus", help="training corpus JSONL")
    p.add_argument("--epochs", type=int, help="training epochs")

    p = sub.add_parser("infer", help="run the in-context search loop on a point set")
    _add_common(p)
    p.add_argument("--checkpoint", help="trained model checkpoint")
    p.add_argument("--data", help="point-set CSV (from gen-data)")
    p.add_argument("--name", help="benchmark name to sample instead of --data")
    p.add_argument("--noise", type=float, help="noise level when sampling --name")
    p.add_argument("--timing", action="store_true", default=None,
                   help="include wall-clock fields in the output JSON")
    _add_gen_flags(p)

    p = sub.add_parser("bench-r2", help="mean R^2 with confidence half-width per benchmark")
    _add_common(p)
    _add_bench_flags(p)
    p.add_argument("--confidence", type=float, help="confidence level (default 0.95)")
    p.add_argument("--noise", type=float, help="noise level applied to targets")

    p = sub.add_parser("bench-noise", help="mean R^2 across noise levels")
    _add_common(p)
    _add_bench_flags(p)
    p.add_argument("--levels", help="noise sweep as start:stop:step")

    p = sub.add_parser("bench-versatility", help="mean R^2 across the ten evaluation intervals")
    _add_common(p)
    _add_bench_flags(p)

    p = sub.add_parser("bench-timing", help="per-run elapsed seconds and best R^2")
    _add_common(p)
    _add_bench_flags(p)

    p = sub.add_parser("bench-datasize", help="retrain at several corpus sizes and evaluate")
    _add_common(p)
    p.add_argument("--checkpoint", help="unused placeholder for flag parity")
    p.add_argument("--corpus", help="full training corpus JSONL")
    p.add_argument("--sizes", help="comma-separated corpus sizes")
    p.add_argument("--epochs", type=int, help="training epochs per size")
    p.add_argument("--eval-targets", type=int, dest="eval_targets",
                   help="synthesized evaluation targets")
    p.add_argument("--points", type=int, help="points per evaluation target")
    _add_gen_flags(p)

    return parser


def _fail(code: int, exc: BaseException) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    sys.stderr.write(json.dumps(payload, ensure_ascii=False) + "\n")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = _resolve(args.command, args)
        return _DISPATCH[args.command](settings, args)
    except (ConfigError, UnknownBenchmark) as exc:
        return _fail(2, exc)
    except OSError as exc:
        return _fail(3, exc)
    except Exception as exc:  # noqa: BLE001 - CLI boundary maps everything to exit 4
        return _fail(4, exc)


if __name__ == "__main__":
    sys.exit(main())
