"""Risk-seeking policy-gradient search over expression skeletons.

A small recurrent policy emits next-token logits over the expression
alphabet; structural constraints are applied as a mask before sampling, so
every sampled traversal is well formed by construction. Each epoch samples a
batch, fits constants, appends the batch-best (expression, quantized reward)
to the search history, and updates the policy on the top reward quantile
only. Solved histories (raw fit quality above the solve threshold) become
training records; everything else is discarded.
"""

import math
from dataclasses import dataclass, field, replace
from multiprocessing import get_context
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from . import expressions as ex
from . import histories as hs
from . import reward as rw
from . import vocab
from .constants import FitConfig, fit_constants
from .datasets import TRAIN_INTERVAL, PointSet, SamplingSpec, points_to_csv_text
from .errors import ConfigError, DegenerateTarget, DomainViolation, SpecError
from .seeding import rng_from, stable_seed


@dataclass
class SearchConfig:
    """Hyperparameters for one search run."""

    batch_size: int = 64
    max_epochs: int = 400
    risk_eps: float = 0.05
    entropy_weight: float = 0.03
    lr: float = 0.005
    hidden_size: int = 32
    embed_size: int = 16
    max_expr_len: int = 30
    max_vars: int = 2
    max_depth: Optional[int] = None
    max_flat_tokens: int = hs.MAX_FLAT_TOKENS
    solve_threshold: float = hs.SOLVE_THRESHOLD
    tokens: Optional[Tuple[str, ...]] = None
    cheap_restarts: int = 1
    cheap_iters: int = 25
    refit_restarts: int = 2
    refit_iters: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be at least 1")
        if not 0.0 < self.risk_eps < 1.0:
            raise ConfigError("risk_eps must lie in (0, 1)")
        if self.max_flat_tokens > hs.MAX_FLAT_TOKENS:
            raise ConfigError(
                f"max_flat_tokens cannot exceed {hs.MAX_FLAT_TOKENS}"
            )
        if self.tokens is not None:
            self.tokens = tuple(self.tokens)
            for tok in self.tokens:
                if not vocab.is_expression_token(tok):
                    raise ConfigError(f"{tok!r} is not an expression token")
            if not any(vocab.is_var(t) or vocab.is_const(t) for t in self.tokens):
                raise ConfigError("token alphabet needs at least one leaf")


@dataclass
class SearchResult:
    """Outcome of one search: history entries plus termination metadata."""

    entries: List[hs.HistoryEntry]
    solved: bool
    reason: str  # "Solved" | "LengthCap" | "Exhausted"
    epochs: int
    best_raw: float


def _default_alphabet(max_vars: int) -> Tuple[str, ...]:
    out = []
    for tok in vocab.EXPR_TOKENS:
        if vocab.is_var(tok) and vocab.var_index(tok) > max_vars:
            continue
        out.append(tok)
    return tuple(out)


class RiskSeekingSearcher:
    """Recurrent categorical policy trained with a top-quantile baseline."""

    def __init__(self, data: PointSet, cfg: SearchConfig):
        self.cfg = cfg
        self.X = np.asarray(data.X, dtype=float)
        self.y = np.asarray(data.y, dtype=float)
        if cfg.max_vars > self.X.shape[1]:
            raise ConfigError(
                f"max_vars={cfg.max_vars} exceeds the {self.X.shape[1]} data columns"
            )
        if np.sum((self.y - np.mean(self.y)) ** 2) < 1e-12:
            raise DegenerateTarget("target values are constant")
        self.alphabet = cfg.tokens or _default_alphabet(cfg.max_vars)
        self._index = {tok: i for i, tok in enumerate(self.alphabet)}
        n_actions = len(self.alphabet)
        self._start = n_actions
        # construct modules under a forked RNG so global torch state is untouched
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(stable_seed(cfg.seed, "policy-init"))
            self._embed = nn.Embedding(n_actions + 1, cfg.embed_size)
            self._cell = nn.GRUCell(cfg.embed_size, cfg.hidden_size)
            self._head = nn.Linear(cfg.hidden_size, n_actions)
        self._params = (
            list(self._embed.parameters())
            + list(self._cell.parameters())
            + list(self._head.parameters())
        )
        self._opt = torch.optim.Adam(self._params, lr=cfg.lr)
        self._gen = torch.Generator().manual_seed(stable_seed(cfg.seed, "sampling"))
        self._fit_cache: dict = {}
        self.entries: List[hs.HistoryEntry] = []
        self._flat_len = 0
        self.best_raw = float("-inf")

    # -- sampling -----------------------------------------------------------

    def _grammar_state(self) -> ex.GrammarState:
        return ex.GrammarState(
            max_vars=self.cfg.max_vars,
            max_len=self.cfg.max_expr_len,
            max_depth=self.cfg.max_depth,
        )

    def _mask_row(self, state: ex.GrammarState) -> List[bool]:
        return [state.allows(tok) for tok in self.alphabet]

    def sample_batch(self) -> List[List[str]]:
        """Sample a batch of constraint-masked preorder traversals."""
        cfg = self.cfg
        B = cfg.batch_size
        states = [self._grammar_state() for _ in range(B)]
        seqs: List[List[str]] = [[] for _ in range(B)]
        hidden = torch.zeros(B, cfg.hidden_size)
        inputs = torch.full((B,), self._start, dtype=torch.long)
        done = [False] * B
        with torch.no_grad():
            for _ in range(cfg.max_expr_len):
                if all(done):
                    break
                hidden = self._cell(self._embed(inputs), hidden)
                logits = self._head(hidden)
                mask = torch.zeros(B, len(self.alphabet), dtype=torch.bool)
                for b in range(B):
                    if done[b]:
                        mask[b, 0] = True  # dummy; the draw is discarded
                        continue
                    row = self._mask_row(states[b])
                    if not any(row):
                        raise ConfigError("token alphabet dead-ends during sampling")
                    mask[b] = torch.tensor(row)
                probs = torch.softmax(
                    logits.masked_fill(~mask, float("-inf")), dim=-1
                )
                actions = torch.multinomial(probs, 1, generator=self._gen).squeeze(1)
                for b in range(B):
                    if done[b]:
                        continue
                    tok = self.alphabet[int(actions[b])]
                    seqs[b].append(tok)
                    states[b].push(tok)
                    done[b] = states[b].complete
                inputs = actions
        if not all(done):
            raise ConfigError("sampling exceeded max_expr_len without completing")
        return seqs

    # -- rewards ------------------------------------------------------------

    def _fit(self, tokens: Sequence[str], cfg: FitConfig, tag: str):
        tree = ex.parse_preorder(list(tokens))
        fit = fit_constants(
            tree, self.X, self.y, cfg, seed=stable_seed(self.cfg.seed, tag, *tokens)
        )
        return tuple(float(c) for c in fit.constants), float(fit.r2)

    def batch_rewards(self, batch: List[List[str]]):
        """Cheap constant fits for a batch; returns (raw scores, constants)."""
        cfg = self.cfg
        cheap = FitConfig(restarts=cfg.cheap_restarts, max_iters=cfg.cheap_iters)
        raws: List[float] = []
        consts: List[Tuple[float, ...]] = []
        for tokens in batch:
            key = tuple(tokens)
            if key not in self._fit_cache:
                self._fit_cache[key] = self._fit(tokens, cheap, "fit")
            c, raw = self._fit_cache[key]
            raws.append(raw)
            consts.append(c)
        return raws, consts

    # -- policy update ------------------------------------------------------

    def _advantages(self, raws: Sequence[float]):
        R = np.clip(np.asarray(raws, dtype=float), 0.0, 1.0)
        r_eps = float(np.quantile(R, 1.0 - self.cfg.risk_eps))
        # members tying the baseline carry zero advantage but still receive
        # the entropy bonus, so the kept set is never empty
        keep = [i for i in range(len(R)) if R[i] >= r_eps]
        return R, r_eps, keep

    def _logp_entropy(self, tokens: Sequence[str]):
        """Replay one traversal; returns (sum log-prob, mean step entropy)."""
        state = self._grammar_state()
        hidden = torch.zeros(1, self.cfg.hidden_size)
        inputs = torch.full((1,), self._start, dtype=torch.long)
        logp = torch.zeros(())
        entropy = torch.zeros(())
        for tok in tokens:
            hidden = self._cell(self._embed(inputs), hidden)
            logits = self._head(hidden)[0]
            mask = torch.tensor(self._mask_row(state))
            logprobs = torch.log_softmax(
                logits.masked_fill(~mask, float("-inf")), dim=-1
            )
            probs = torch.exp(logprobs)
            # clamp keeps masked entries (p=0, logp=-inf) out of the gradient
            step_ent = -torch.sum(probs * logprobs.clamp_min(-1e9))
            idx = self._index[tok]
            logp = logp + logprobs[idx]
            entropy = entropy + step_ent
            state.push(tok)
            inputs = torch.full((1,), idx, dtype=torch.long)
        return logp, entropy / max(1, len(tokens))

    def _objective(self, batch, raws):
        R, r_eps, keep = self._advantages(raws)
        if not keep:
            return None, r_eps, keep
        total = torch.zeros(())
        for i in keep:
            logp, ent = self._logp_entropy(batch[i])
            total = total + (R[i] - r_eps) * logp + self.cfg.entropy_weight * ent
        return total / len(keep), r_eps, keep

    def surrogate(self, batch, raws) -> Optional[float]:
        """Detached value of the risk-seeking objective on a frozen batch."""
        with torch.no_grad():
            total, _, keep = self._objective(batch, raws)
        return None if total is None else float(total)

    def update(self, batch, raws) -> dict:
        """One ascent step on the top-quantile surrogate; returns stats."""
        total, r_eps, keep = self._objective(batch, raws)
        if total is None:
            return {"kept": 0, "r_eps": r_eps}
        loss = -total
        self._opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(self._params, 5.0)
        self._opt.step()
        return {"kept": len(keep), "r_eps": r_eps, "loss": float(loss.detach())}

    # -- epochs -------------------------------------------------------------

    def epoch_step(self):
        """Run one epoch; returns (entry, solved, stats).

        The batch-best expression is refit with a larger budget before being
        recorded, keeping whichever of the cheap and refit results scores
        higher so recorded rewards always recompute from recorded constants.
        When appending would exceed the flattened-token cap, the entry is
        returned with stats["capped"] set and the history is left unchanged.
        """
        cfg = self.cfg
        batch = self.sample_batch()
        raws, consts = self.batch_rewards(batch)
        best = int(np.argmax(raws))
        best_tokens = tuple(batch[best])
        best_consts, best_raw = consts[best], raws[best]
        stats = {"cheap_raws": list(raws)}
        if not np.isfinite(best_raw):
            # every batch member hit a domain fault; nothing recordable
            self.update(batch, raws)
            stats.update(best_raw=best_raw, skipped=True)
            return None, False, stats
        if best_consts:
            refit_consts, refit_raw = self._fit(
                best_tokens,
                FitConfig(restarts=cfg.refit_restarts, max_iters=cfg.refit_iters),
                "refit",
            )
            if refit_raw > best_raw:
                best_consts, best_raw = refit_consts, refit_raw
                self._fit_cache[best_tokens] = (best_consts, best_raw)
        stats["best_raw"] = best_raw
        entry = hs.HistoryEntry(
            tokens=best_tokens,
            constants=best_consts,
            level=rw.quantize(best_raw),
        )
        if self._flat_len + len(entry.tokens) + 1 > cfg.max_flat_tokens:
            stats["capped"] = True
            return entry, False, stats
        self.entries.append(entry)
        self._flat_len += len(entry.tokens) + 1
        self.best_raw = max(self.best_raw, best_raw)
        solved = best_raw > cfg.solve_threshold
        if not solved:
            stats["update"] = self.update(batch, raws)
        return entry, solved, stats

    def run(self) -> SearchResult:
        for epoch in range(1, self.cfg.max_epochs + 1):
            entry, solved, stats = self.epoch_step()
            if stats.get("capped"):
                return SearchResult(self.entries, False, "LengthCap", epoch, self.best_raw)
            if solved:
                return SearchResult(self.entries, True, "Solved", epoch, self.best_raw)
        return SearchResult(
            self.entries, False, "Exhausted", self.cfg.max_epochs, self.best_raw
        )


def run_search(data: PointSet, cfg: SearchConfig) -> SearchResult:
    """Run one seeded search over the given point set."""
    return RiskSeekingSearcher(data, cfg).run()


# ---------------------------------------------------------------------------
# corpus collection

_MAX_TARGET_ATTEMPTS = 50
_MAX_TARGET_MAGNITUDE = 1e4


def synthesize_target(
    master_seed: int,
    index: int,
    skeleton_cfg: ex.SkeletonConfig,
    n_points: int,
):
    """Sample one training target: skeleton, constants, and sampled points.

    Constants draw sign * U(0.5, 3). Candidates whose values blow up, hit a
    domain fault, or are (near-)constant are rejected and resampled under a
    fresh per-attempt stream, so results stay seed-deterministic.
    """
    lo, hi = TRAIN_INTERVAL
    for attempt in range(_MAX_TARGET_ATTEMPTS):
        rng = rng_from(master_seed, "target", index, attempt)
        tokens = ex.sample_skeleton(rng, skeleton_cfg)
        tree = ex.parse_preorder(tokens)
        k = ex.const_count(tree)
        signs = rng.choice(np.array([-1.0, 1.0]), size=k)
        magnitudes = rng.uniform(0.5, 3.0, size=k)
        constants = tuple(float(v) for v in signs * magnitudes)
        X = rng.uniform(lo, hi, size=(n_points, skeleton_cfg.max_vars))
        try:
            y = ex.evaluate(tree, X, constants)
        except DomainViolation:
            continue
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > _MAX_TARGET_MAGNITUDE:
            continue
        if np.sum((y - np.mean(y)) ** 2) < 1e-10:
            continue
        spec = SamplingSpec(
            "uniform", lo, hi, n_points,
            dims=skeleton_cfg.max_vars,
            seed=stable_seed(master_seed, "target", index, attempt),
        )
        return PointSet(X=X, y=y, spec=spec), tokens, constants
    raise SpecError(f"could not synthesize target {index} after {_MAX_TARGET_ATTEMPTS} tries")


def _worker_init():
    torch.set_num_threads(1)


def _collect_one(args):
    index, master_seed, skeleton_cfg, search_cfg, n_points = args
    torch.set_num_threads(1)
    try:
        data, _, _ = synthesize_target(master_seed, index, skeleton_cfg, n_points)
    except SpecError:
        return index, None
    search_seed = stable_seed(master_seed, "search", index)
    result = run_search(data, replace(search_cfg, seed=search_seed))
    if not result.solved:
        return index, None
    record = {
        "id": index,
        "points_csv": points_to_csv_text(data.X, data.y),
        "tokens": hs.flatten(result.entries),
        "constants": [list(entry.constants) for entry in result.entries],
        "terminated_by": "Solved",
        "seed": search_seed,
        "variant": "full",
    }
    return index, record


def collect_corpus(
    n_targets: int,
    skeleton_cfg: ex.SkeletonConfig,
    search_cfg: SearchConfig,
    out_path,
    n_points: int = 64,
    master_seed: int = 0,
    workers: int = 1,
) -> dict:
    """Search synthesized targets and stream solved histories to JSONL.

    Targets fan out over a spawn-context worker pool with ordered collection,
    so the output bytes do not depend on the worker count. A vocabulary table
    is written next to the corpus for downstream consumers.
    """
    out_path = Path(out_path)
    stats = {"targets": n_targets, "solved": 0, "discarded": 0}
    jobs = [
        (i, master_seed, skeleton_cfg, search_cfg, n_points) for i in range(n_targets)
    ]
    with open(out_path, "w") as fh:
        if jobs:
            ctx = get_context("spawn")
            with ctx.Pool(processes=workers, initializer=_worker_init) as pool:
                for _, record in pool.imap(_collect_one, jobs, chunksize=1):
                    if record is None:
                        stats["discarded"] += 1
                    else:
                        fh.write(hs.dump_record(record) + "\n")
                        stats["solved"] += 1
    vocab.write_vocab_json(out_path.parent / "vocab.json")
    return stats
