"""Search-history utilities: flattening, shortcut extraction, corpus handling.

A search history is an ordered list of (expression tokens, fitted constants,
quantized reward level) entries. Flattened, it becomes the token sequence the
sequence model trains on: each expression's preorder tokens followed by its
reward token. The "shortcut" variant keeps only entries that strictly improve
on every kept predecessor, plus the final (solving) entry.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, List, Tuple

from . import expressions as ex
from . import reward as rw
from . import vocab
from .errors import DomainViolation, Malformed
from .seeding import rng_from

# Histories longer than this (flattened) are discarded during collection.
MAX_FLAT_TOKENS = 1024

# Raw (unquantized) fit quality above which a search counts as solved.
SOLVE_THRESHOLD = 0.99

_VARIANTS = ("full", "shortcut")
_RECORD_KEYS = ("id", "points_csv", "tokens", "constants", "terminated_by", "seed", "variant")


@dataclass(frozen=True)
class HistoryEntry:
    """One recorded step: expression tokens, fitted constants, reward level."""

    tokens: Tuple[str, ...]
    constants: Tuple[float, ...]
    level: int


def flatten(entries: List[HistoryEntry]) -> List[str]:
    """Concatenate each entry's tokens followed by its reward token."""
    out: List[str] = []
    for entry in entries:
        out.extend(entry.tokens)
        out.append(rw.level_token(entry.level))
    return out


def split_flat(tokens: List[str]) -> List[Tuple[List[str], int]]:
    """Invert :func:`flatten` into (expression tokens, level) segments."""
    segments: List[Tuple[List[str], int]] = []
    current: List[str] = []
    for tok in tokens:
        if vocab.is_reward(tok):
            if not current:
                raise Malformed("reward token with no preceding expression")
            segments.append((current, rw.token_level(tok)))
            current = []
        else:
            current.append(tok)
    if current:
        raise Malformed("expression tokens after the last reward token")
    return segments


def extract_shortcut(entries: List[HistoryEntry]) -> List[HistoryEntry]:
    """Keep entries whose level strictly beats every kept predecessor.

    The final entry is always retained: it is the solving expression, and a
    solve may tie the best level seen so far (both quantize to the same
    two-decimal token). The filter is idempotent.
    """
    kept: List[HistoryEntry] = []
    best = -1
    for entry in entries:
        if entry.level > best:
            kept.append(entry)
            best = entry.level
    if entries and (not kept or kept[-1] is not entries[-1]):
        kept.append(entries[-1])
    return kept


def shortcut_record(record: dict) -> dict:
    """Shortcut-variant copy of a full history record."""
    kept = extract_shortcut(record_to_entries(record))
    out = dict(record)
    out["tokens"] = flatten(kept)
    out["constants"] = [list(entry.constants) for entry in kept]
    out["variant"] = "shortcut"
    return out


# ---------------------------------------------------------------------------
# corpus records


def dump_record(record: dict) -> str:
    """Serialize one corpus record to a deterministic JSON line."""
    return json.dumps(record, ensure_ascii=False)


def write_corpus(path, records: Iterable[dict]) -> None:
    """Write records as JSONL."""
    path = Path(path)
    with open(path, "w") as fh:
        for record in records:
            fh.write(dump_record(record) + "\n")


def iter_corpus(path) -> Iterator[dict]:
    """Stream records from a JSONL corpus file."""
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def record_to_entries(record: dict) -> List[HistoryEntry]:
    """Rebuild HistoryEntry objects from a record's flat tokens + constants."""
    segments = split_flat(list(record["tokens"]))
    constants = record.get("constants")
    if constants is None:
        constants = [[] for _ in segments]
    if len(constants) != len(segments):
        raise Malformed(
            f"{len(constants)} constant groups for {len(segments)} expressions"
        )
    return [
        HistoryEntry(tokens=tuple(tokens), constants=tuple(cs), level=level)
        for (tokens, level), cs in zip(segments, constants)
    ]


def validate_record(record: dict) -> List[HistoryEntry]:
    """Re-validate a corpus record against its own data; return its entries.

    Checks: schema keys, flattened length cap, per-expression parse and
    constant counts, exact reward recomputation from the stored points and
    constants, and that the final expression actually solves the target.
    """
    from .datasets import points_from_csv_text

    for key in _RECORD_KEYS:
        if key not in record:
            raise Malformed(f"record missing key {key!r}")
    if record["terminated_by"] != "Solved":
        raise Malformed(f"unexpected terminated_by {record['terminated_by']!r}")
    if record["variant"] not in _VARIANTS:
        raise Malformed(f"unexpected variant {record['variant']!r}")
    if len(record["tokens"]) > MAX_FLAT_TOKENS:
        raise Malformed(
            f"flattened history has {len(record['tokens'])} tokens (cap {MAX_FLAT_TOKENS})"
        )
    entries = record_to_entries(record)
    if not entries:
        raise Malformed("empty history")
    X, y = points_from_csv_text(record["points_csv"])
    last_raw = float("-inf")
    for entry in entries:
        tree = ex.parse_preorder(list(entry.tokens))
        if ex.const_count(tree) != len(entry.constants):
            raise Malformed(
                f"expression needs {ex.const_count(tree)} constants, got {len(entry.constants)}"
            )
        try:
            y_hat = ex.evaluate(tree, X, entry.constants)
            raw = rw.r_squared(y, y_hat)
        except DomainViolation as err:
            raise Malformed(f"recorded expression violates its domain: {err}") from err
        if rw.quantize(raw) != entry.level:
            raise Malformed(
                f"reward mismatch: recomputed {rw.quantize(raw)}, recorded {entry.level}"
            )
        last_raw = raw
    if not last_raw > SOLVE_THRESHOLD:
        raise Malformed(f"final expression scores {last_raw}, below the solve threshold")
    return entries


# ---------------------------------------------------------------------------
# corpus splitting


def split_corpus(path, val_fraction: float, seed: int) -> Tuple[Path, Path]:
    """Split a JSONL corpus into train/val files, disjoint and exhaustive.

    Selection is a seeded permutation; records keep their original order
    within each output file. Returns (train_path, val_path).
    """
    path = Path(path)
    records = list(iter_corpus(path))
    n_val = int(round(val_fraction * len(records)))
    perm = rng_from(seed, "corpus-split").permutation(len(records))
    val_indices = set(int(i) for i in perm[:n_val])
    train_path = path.with_name(path.stem + ".train.jsonl")
    val_path = path.with_name(path.stem + ".val.jsonl")
    write_corpus(train_path, (r for i, r in enumerate(records) if i not in val_indices))
    write_corpus(val_path, (r for i, r in enumerate(records) if i in val_indices))
    return train_path, val_path
