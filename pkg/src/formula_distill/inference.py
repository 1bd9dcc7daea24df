"""In-context inference loop.

Given a point set and a trained checkpoint, autoregressively sample
expression tokens under grammar constraint masking.  Each time an
expression completes, its constants are fitted, the raw R^2 is computed,
and the true quantized reward token is forced into the context (the
model's logits at reward positions are ignored).  Generation stops when
the raw R^2 clears the solve threshold or the token budget runs out.

Expressions that hit the per-expression length cap are aborted: the
partial tokens are dropped from the context, a "0.00" reward token is
spliced in, and generation continues.  All sampled tokens, including
discarded partials and spliced rewards, count against the budget so an
endlessly rambling model still terminates.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import torch

from . import vocab
from .constants import FitConfig, fit_constants
from .errors import ConfigError, DegenerateTarget, DimsError
from .expressions import GrammarState, parse_preorder
from .model import DataConditionedLM, ModelConfig, load_checkpoint, point_features
from .reward import level_token, quantize
from .seeding import stable_seed

_SAMPLERS = ("greedy", "top_k")
_EXPR_IDS = tuple((tok, vocab.TOKEN_TO_ID[tok]) for tok in vocab.EXPR_TOKENS)
_ZERO_REWARD_ID = vocab.TOKEN_TO_ID["0.00"]


@dataclass(frozen=True)
class GenerateConfig:
    """Decoding parameters for one inference run."""

    max_seq_len: int = 2048
    sampling: str = "greedy"
    top_k: int = 5
    temperature: float = 1.0
    seed: int = 0
    max_expr_len: int = 60
    solve_threshold: float = 0.99
    fit: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if self.max_seq_len < 2:
            raise ConfigError(f"max_seq_len must be >= 2: {self.max_seq_len}")
        if self.sampling not in _SAMPLERS:
            raise ConfigError(f"sampling must be one of {_SAMPLERS}: {self.sampling!r}")
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1: {self.top_k}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive: {self.temperature}")
        if self.max_expr_len < 1:
            raise ConfigError(f"max_expr_len must be >= 1: {self.max_expr_len}")
        if not 0.0 < self.solve_threshold < 1.0:
            raise ConfigError(f"solve_threshold must be in (0, 1): {self.solve_threshold}")


@dataclass(frozen=True)
class TrajectoryEntry:
    """One completed expression with its fitted constants and reward."""

    tokens: Tuple[str, ...]
    constants: Tuple[float, ...]
    r2: float
    level: str
    t: float


@dataclass(frozen=True)
class InferenceResult:
    """Outcome of one generate() call."""

    trajectory: Tuple[TrajectoryEntry, ...]
    terminated_by: str
    n_intermediate: int
    n_aborted: int
    best_tokens: Optional[Tuple[str, ...]]
    best_constants: Tuple[float, ...]
    best_r2: Optional[float]
    elapsed_s: float


Checkpoint = Union[str, Path, Tuple[DataConditionedLM, ModelConfig]]


def _resolve_checkpoint(checkpoint: Checkpoint) -> Tuple[DataConditionedLM, ModelConfig]:
    if isinstance(checkpoint, (str, Path)):
        return load_checkpoint(checkpoint)
    model, cfg = checkpoint
    return model, cfg


def _pick(logits: torch.Tensor, allowed: List[int], cfg: GenerateConfig, gen) -> int:
    values = logits[allowed]
    if cfg.sampling == "greedy":
        return allowed[int(torch.argmax(values))]
    k = min(cfg.top_k, len(allowed))
    top_values, top_index = torch.topk(values, k)
    probs = torch.softmax(top_values / cfg.temperature, dim=-1)
    choice = int(torch.multinomial(probs, 1, generator=gen))
    return allowed[int(top_index[choice])]


def generate(X, y, checkpoint: Checkpoint, cfg: Optional[GenerateConfig] = None) -> InferenceResult:
    """Run the in-context search loop on one point set.

    ``checkpoint`` is a checkpoint path or an already loaded
    (model, model_config) pair.  Deterministic for fixed inputs under
    greedy decoding, and for a fixed ``cfg.seed`` under top-k sampling.
    """
    cfg = cfg or GenerateConfig()
    model, model_cfg = _resolve_checkpoint(checkpoint)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    features = point_features(X, y, model_cfg)  # validates shapes and dims
    if not np.all(np.isfinite(features)):
        raise ConfigError("points must be finite")
    if np.all(y == y[0]):
        raise DegenerateTarget("target values are all identical")
    n_vars = X.shape[1]
    budget = min(cfg.max_seq_len, model_cfg.max_seq_len)

    model.eval()
    points = torch.from_numpy(features).unsqueeze(0)
    with torch.no_grad():
        z = model.encode(points)
    sampler_rng = torch.Generator()
    sampler_rng.manual_seed(stable_seed(cfg.seed, "generate"))

    ids: List[int] = [vocab.TOKEN_TO_ID[vocab.BOS]]
    grammar = GrammarState(max_vars=n_vars)
    current: List[str] = []
    trajectory: List[TrajectoryEntry] = []
    emitted = 0
    aborted = 0
    terminated_by = "LengthCap"
    start = time.perf_counter()

    while emitted < budget:
        allowed = [tid for tok, tid in _EXPR_IDS if grammar.allows(tok)]
        with torch.no_grad():
            logits = model.decode(torch.tensor([ids], dtype=torch.long), z)[0, -1]
        tok_id = _pick(logits, allowed, cfg, sampler_rng)
        tok = vocab.VOCAB[tok_id]
        ids.append(tok_id)
        current.append(tok)
        grammar.push(tok)
        emitted += 1

        if grammar.complete:
            tree = parse_preorder(current)
            fit = fit_constants(
                tree, X, y, cfg.fit,
                seed=stable_seed(cfg.seed, "infer-fit", len(trajectory), tuple(current)),
            )
            raw = float(fit.r2)
            level = quantize(raw)
            trajectory.append(
                TrajectoryEntry(
                    tokens=tuple(current),
                    constants=tuple(float(c) for c in fit.constants),
                    r2=raw,
                    level=level_token(level),
                    t=time.perf_counter() - start,
                )
            )
            if emitted < budget:
                ids.append(vocab.TOKEN_TO_ID[level_token(level)])
                emitted += 1
            if math.isfinite(raw) and raw > cfg.solve_threshold:
                terminated_by = "Solved"
                break
            grammar = GrammarState(max_vars=n_vars)
            current = []
        elif len(current) >= cfg.max_expr_len:
            del ids[len(ids) - len(current):]
            grammar = GrammarState(max_vars=n_vars)
            current = []
            aborted += 1
            if emitted < budget:
                ids.append(_ZERO_REWARD_ID)
                emitted += 1

    best = None
    for entry in trajectory:
        if not math.isfinite(entry.r2):
            continue
        if best is None or entry.r2 > best.r2:
            best = entry
    return InferenceResult(
        trajectory=tuple(trajectory),
        terminated_by=terminated_by,
        n_intermediate=len(trajectory),
        n_aborted=aborted,
        best_tokens=best.tokens if best else None,
        best_constants=best.constants if best else (),
        best_r2=best.r2 if best else None,
        elapsed_s=time.perf_counter() - start,
    )


def count_intermediate(result: InferenceResult) -> int:
    """Number of completed expressions evaluated during the run."""
    return len(result.trajectory)


def best_so_far(result: InferenceResult) -> List[float]:
    """Running max of raw R^2 over the trajectory (non-finite as -inf)."""
    running: List[float] = []
    best = -math.inf
    for entry in result.trajectory:
        value = entry.r2 if math.isfinite(entry.r2) else -math.inf
        best = max(best, value)
        running.append(best)
    return running


def history_tokens(result: InferenceResult) -> List[str]:
    """Flattened (expression tokens + reward token) view of the trajectory."""
    flat: List[str] = []
    for entry in result.trajectory:
        flat.extend(entry.tokens)
        flat.append(entry.level)
    return flat


def _json_float(value: Optional[float]):
    if value is None or not math.isfinite(value):
        return None
    return value


def result_to_dict(result: InferenceResult, timing: bool = False) -> dict:
    """JSON-ready dict; ``timing`` adds wall-clock fields (non-deterministic)."""
    trajectory = []
    for entry in result.trajectory:
        item = {
            "tokens": list(entry.tokens),
            "constants": list(entry.constants),
            "r2": _json_float(entry.r2),
            "level": entry.level,
        }
        if timing:
            item["t"] = entry.t
        trajectory.append(item)
    best = None
    if result.best_tokens is not None:
        best = {
            "tokens": list(result.best_tokens),
            "constants": list(result.best_constants),
            "r2": _json_float(result.best_r2),
        }
    payload = {
        "terminated_by": result.terminated_by,
        "n_intermediate": result.n_intermediate,
        "n_aborted": result.n_aborted,
        "best": best,
        "trajectory": trajectory,
    }
    if timing:
        payload["elapsed_s"] = result.elapsed_s
    return payload


def result_to_json(result: InferenceResult, timing: bool = False) -> str:
    """Deterministic JSON rendering (timing fields excluded by default)."""
    return json.dumps(result_to_dict(result, timing=timing), ensure_ascii=False)
