"""Data-conditioned sequence model.

A permutation-invariant set encoder summarizes the observed (X, y)
points into a fixed-size latent, and a causal transformer decoder models
flattened search histories token by token, conditioned on that latent
through cross-attention.  Training minimizes next-token cross-entropy
with PAD positions excluded.

Checkpoints are a small self-describing container: an 8-byte little
endian header length, a JSON header (format version, config, vocabulary
hash, tensor manifest), then the raw little endian float32 parameter
blobs in manifest order.  Loading verifies the vocabulary hash so a
checkpoint can never be decoded against a different token table.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import vocab
from .datasets import points_from_csv_text
from .errors import (
    CheckpointMismatch,
    ConfigError,
    DimsError,
    LengthError,
    Malformed,
    NonFiniteLoss,
)
from .seeding import rng_from, stable_seed

CHECKPOINT_FORMAT_VERSION = 1

PAD_ID = vocab.TOKEN_TO_ID[vocab.PAD]
BOS_ID = vocab.TOKEN_TO_ID[vocab.BOS]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and optimization hyperparameters.

    Desk-scale defaults; ``paper_config()`` returns the published large
    configuration.  ``n_p`` and ``num_features`` are recorded for
    completeness but not consumed by the architecture.
    """

    d_model: int = 128
    n_heads: int = 4
    n_enc_blocks: int = 2
    n_dec_layers: int = 4
    n_inducing: int = 16
    n_seed_vectors: int = 8
    dropout: float = 0.0
    max_seq_len: int = 512
    vocab_size: int = len(vocab.VOCAB)
    lr: float = 3e-4
    batch_size: int = 16
    dim_input: int = 3
    n_p: int = 0
    num_features: int = 20

    def __post_init__(self):
        if self.d_model < 1 or self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model ({self.d_model}) must be a positive multiple of n_heads ({self.n_heads})"
            )
        for name in ("n_heads", "n_enc_blocks", "n_dec_layers", "n_inducing", "n_seed_vectors"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1): {self.dropout}")
        if self.max_seq_len < 2:
            raise ConfigError(f"max_seq_len must be >= 2: {self.max_seq_len}")
        if self.vocab_size < 3:
            raise ConfigError(f"vocab_size must cover PAD/BOS plus tokens: {self.vocab_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive: {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1: {self.batch_size}")
        if self.dim_input < 2:
            raise ConfigError(f"dim_input must hold at least one variable plus y: {self.dim_input}")

    @property
    def max_vars(self) -> int:
        """Number of input-variable columns the encoder accepts."""
        return self.dim_input - 1


def paper_config() -> ModelConfig:
    """Published large-scale hyperparameters; not needed for acceptance."""
    return ModelConfig(
        d_model=512,
        n_heads=8,
        n_enc_blocks=2,
        n_dec_layers=16,
        n_inducing=50,
        n_seed_vectors=8,
        max_seq_len=2048,
        batch_size=128,
    )


class MAB(nn.Module):
    """Multihead attention block: attend queries to keys, residual + FF."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attn = nn.MultiheadAttention(
            cfg.d_model, cfg.n_heads, dropout=cfg.dropout, batch_first=True
        )
        self.ff = nn.Sequential(
            nn.Linear(cfg.d_model, 2 * cfg.d_model),
            nn.ReLU(),
            nn.Dropout(cfg.dropout),
            nn.Linear(2 * cfg.d_model, cfg.d_model),
        )
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)

    def forward(self, queries, keys, key_padding_mask=None):
        attended, _ = self.attn(
            queries, keys, keys, key_padding_mask=key_padding_mask, need_weights=False
        )
        h = self.norm1(queries + attended)
        return self.norm2(h + self.ff(h))


class ISAB(nn.Module):
    """Induced set attention: points attend through learnable inducing rows."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.inducing = nn.Parameter(torch.empty(cfg.n_inducing, cfg.d_model))
        nn.init.xavier_uniform_(self.inducing)
        self.project = MAB(cfg)
        self.broadcast = MAB(cfg)

    def forward(self, x, key_padding_mask=None):
        batch = x.shape[0]
        inducing = self.inducing.unsqueeze(0).expand(batch, -1, -1)
        summary = self.project(inducing, x, key_padding_mask=key_padding_mask)
        return self.broadcast(x, summary)


class PMA(nn.Module):
    """Pooling by multihead attention onto learnable seed vectors."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.seeds = nn.Parameter(torch.empty(cfg.n_seed_vectors, cfg.d_model))
        nn.init.xavier_uniform_(self.seeds)
        self.pool = MAB(cfg)

    def forward(self, x, key_padding_mask=None):
        batch = x.shape[0]
        seeds = self.seeds.unsqueeze(0).expand(batch, -1, -1)
        return self.pool(seeds, x, key_padding_mask=key_padding_mask)


class PointSetEncoder(nn.Module):
    """Affine point embedding, ISAB stack, PMA pooling to a fixed latent."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.embed = nn.Linear(cfg.dim_input, cfg.d_model)
        self.blocks = nn.ModuleList(ISAB(cfg) for _ in range(cfg.n_enc_blocks))
        self.pool = PMA(cfg)

    def forward(self, points, point_mask=None):
        x = self.embed(points)
        for block in self.blocks:
            x = block(x, key_padding_mask=point_mask)
        return self.pool(x, key_padding_mask=point_mask)


class DecoderLayer(nn.Module):
    """Causal self-attention, cross-attention to the latent, feed-forward."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_attn = nn.MultiheadAttention(
            cfg.d_model, cfg.n_heads, dropout=cfg.dropout, batch_first=True
        )
        self.cross_attn = nn.MultiheadAttention(
            cfg.d_model, cfg.n_heads, dropout=cfg.dropout, batch_first=True
        )
        self.ff = nn.Sequential(
            nn.Linear(cfg.d_model, 2 * cfg.d_model),
            nn.ReLU(),
            nn.Dropout(cfg.dropout),
            nn.Linear(2 * cfg.d_model, cfg.d_model),
        )
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.norm3 = nn.LayerNorm(cfg.d_model)

    def forward(self, x, z, causal_mask, key_padding_mask=None):
        attended, _ = self.self_attn(
            x, x, x, attn_mask=causal_mask, key_padding_mask=key_padding_mask, need_weights=False
        )
        x = self.norm1(x + attended)
        crossed, _ = self.cross_attn(x, z, z, need_weights=False)
        x = self.norm2(x + crossed)
        return self.norm3(x + self.ff(x))


class DataConditionedLM(nn.Module):
    """Set encoder plus causal decoder over history tokens."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = PointSetEncoder(cfg)
        self.token_embed = nn.Embedding(cfg.vocab_size, cfg.d_model, padding_idx=PAD_ID)
        self.pos_embed = nn.Embedding(cfg.max_seq_len, cfg.d_model)
        self.layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.n_dec_layers))
        self.head = nn.Linear(cfg.d_model, cfg.vocab_size)

    def encode(self, points: torch.Tensor, point_mask: Optional[torch.Tensor] = None):
        """Latent of shape (batch, n_seed_vectors, d_model).

        ``points`` is (batch, n_points, dim_input); ``point_mask`` is a
        bool tensor, True at padded rows.
        """
        if points.ndim != 3:
            raise DimsError(f"points must be (batch, n_points, features): {tuple(points.shape)}")
        if points.shape[1] < 1:
            raise DimsError("point set must contain at least one point")
        if points.shape[2] != self.cfg.dim_input:
            raise DimsError(
                f"expected {self.cfg.dim_input} features per point, got {points.shape[2]}"
            )
        return self.encoder(points, point_mask=point_mask)

    def decode(
        self,
        ids: torch.Tensor,
        z: torch.Tensor,
        ids_mask: Optional[torch.Tensor] = None,
    ):
        """Logits of shape (batch, len, vocab_size) for each prefix position."""
        length = ids.shape[1]
        if length > self.cfg.max_seq_len:
            raise LengthError(
                f"prefix length {length} exceeds max_seq_len {self.cfg.max_seq_len}"
            )
        positions = torch.arange(length, device=ids.device)
        x = self.token_embed(ids) + self.pos_embed(positions)
        causal = torch.triu(
            torch.ones(length, length, dtype=torch.bool, device=ids.device), diagonal=1
        )
        for layer in self.layers:
            x = layer(x, z, causal, key_padding_mask=ids_mask)
        return self.head(x)

    def forward(self, points, ids, point_mask=None, ids_mask=None):
        z = self.encode(points, point_mask=point_mask)
        return self.decode(ids, z, ids_mask=ids_mask)


def build_model(cfg: ModelConfig, seed: int = 0) -> DataConditionedLM:
    """Construct a model with seed-deterministic initialization."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(stable_seed("model-init", seed))
        return DataConditionedLM(cfg)


@dataclass(frozen=True)
class Example:
    """One training sequence: point features plus history token ids."""

    points: np.ndarray
    ids: Tuple[int, ...]


@dataclass(frozen=True)
class Batch:
    points: torch.Tensor
    point_mask: torch.Tensor
    input_ids: torch.Tensor
    targets: torch.Tensor


def point_features(X, y, cfg: ModelConfig) -> np.ndarray:
    """Encoder feature matrix for raw (X, y) arrays.

    Variable columns are zero-padded up to ``dim_input - 1`` and y sits
    in the last feature column, so point sets with fewer variables than
    the model width share one layout.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise DimsError(f"points must be (n, dims) with matching y: {X.shape} vs {y.shape}")
    n_points, dims = X.shape
    if n_points < 1:
        raise DimsError("point set must contain at least one point")
    if not 1 <= dims <= cfg.max_vars:
        raise DimsError(f"point set has {dims} variables; model accepts 1..{cfg.max_vars}")
    features = np.zeros((n_points, cfg.dim_input), dtype=np.float32)
    features[:, :dims] = X
    features[:, -1] = y
    return features


def record_to_example(record: dict, cfg: ModelConfig) -> Example:
    """Turn a history record into encoder features and decoder token ids."""
    X, y = points_from_csv_text(record["points_csv"])
    features = point_features(X, y, cfg)
    tokens = record["tokens"]
    if not tokens:
        raise Malformed("record has no tokens")
    try:
        ids = tuple(vocab.TOKEN_TO_ID[tok] for tok in tokens)
    except KeyError as exc:
        raise Malformed(f"unknown token in record: {exc.args[0]!r}") from None
    if len(ids) > cfg.max_seq_len:
        raise LengthError(
            f"record has {len(ids)} tokens; max_seq_len is {cfg.max_seq_len}"
        )
    return Example(points=features, ids=ids)


def collate(examples: Sequence[Example]) -> Batch:
    """Pad a list of examples into batch tensors.

    Decoder input is BOS followed by the ids shifted right by one, so
    position k predicts token k; padding uses PAD which the loss skips.
    """
    if not examples:
        raise ConfigError("cannot collate an empty batch")
    max_points = max(ex.points.shape[0] for ex in examples)
    max_len = max(len(ex.ids) for ex in examples)
    dim_input = examples[0].points.shape[1]
    batch = len(examples)
    points = torch.zeros(batch, max_points, dim_input)
    point_mask = torch.ones(batch, max_points, dtype=torch.bool)
    input_ids = torch.full((batch, max_len), PAD_ID, dtype=torch.long)
    targets = torch.full((batch, max_len), PAD_ID, dtype=torch.long)
    for i, ex in enumerate(examples):
        n = ex.points.shape[0]
        points[i, :n] = torch.from_numpy(ex.points)
        point_mask[i, :n] = False
        ids = torch.tensor(ex.ids, dtype=torch.long)
        input_ids[i, 0] = BOS_ID
        input_ids[i, 1 : len(ids)] = ids[:-1]
        targets[i, : len(ids)] = ids
    return Batch(points=points, point_mask=point_mask, input_ids=input_ids, targets=targets)


def sequence_loss(model: DataConditionedLM, batch: Batch) -> torch.Tensor:
    """Mean next-token cross-entropy over non-PAD target positions."""
    ids_mask = batch.input_ids == PAD_ID
    logits = model(batch.points, batch.input_ids, batch.point_mask, ids_mask)
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]),
        batch.targets.reshape(-1),
        ignore_index=PAD_ID,
    )


def _load_records(source) -> List[dict]:
    if isinstance(source, (str, Path)):
        from .histories import iter_corpus

        return list(iter_corpus(source))
    return list(source)


def train(
    records: Union[str, Path, Sequence[dict]],
    cfg: ModelConfig,
    out_path: Optional[Union[str, Path]] = None,
    epochs: int = 1,
    seed: int = 0,
    optimizer: str = "adam",
    shuffle: bool = True,
    clip_norm: float = 1.0,
    return_model: bool = False,
    log_every: int = 0,
) -> dict:
    """Train on history records and optionally write a checkpoint.

    Deterministic for a fixed (records order, config, seed): the model
    init, shuffling, and any dropout draws all derive from ``seed``.
    Returns a report dict with step counts and loss curves; the trained
    model rides along under ``"model"`` when ``return_model`` is set.
    """
    record_list = _load_records(records)
    if not record_list:
        raise ConfigError("training corpus is empty")
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1: {epochs}")
    examples = [record_to_example(r, cfg) for r in record_list]

    model = build_model(cfg, seed=seed)
    model.train()
    if optimizer == "adam":
        opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    elif optimizer == "sgd":
        opt = torch.optim.SGD(model.parameters(), lr=cfg.lr)
    else:
        raise ConfigError(f"unknown optimizer: {optimizer!r}")

    n = len(examples)
    steps = 0
    epoch_losses: List[float] = []
    last_loss = math.nan
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(stable_seed("train", seed))
        for epoch in range(epochs):
            if shuffle:
                order = rng_from(seed, "shuffle", epoch).permutation(n)
            else:
                order = np.arange(n)
            batch_losses: List[float] = []
            for start in range(0, n, cfg.batch_size):
                chunk = [examples[i] for i in order[start : start + cfg.batch_size]]
                batch = collate(chunk)
                loss = sequence_loss(model, batch)
                last_loss = float(loss.detach())
                if not math.isfinite(last_loss):
                    raise NonFiniteLoss(f"loss became {last_loss} at step {steps}")
                opt.zero_grad()
                loss.backward()
                nn.utils.clip_grad_norm_(model.parameters(), clip_norm)
                opt.step()
                steps += 1
                batch_losses.append(last_loss)
                if log_every and steps % log_every == 0:
                    print(f"step {steps}: loss {last_loss:.4f}")
            epoch_losses.append(float(np.mean(batch_losses)))
    model.eval()

    if out_path is not None:
        save_checkpoint(model, cfg, out_path)
    report = {
        "n_records": n,
        "epochs": epochs,
        "steps": steps,
        "final_loss": last_loss,
        "epoch_mean_loss": epoch_losses,
    }
    if return_model:
        report["model"] = model
    return report


def save_checkpoint(model: DataConditionedLM, cfg: ModelConfig, path) -> None:
    """Write the self-describing checkpoint container."""
    manifest = []
    blobs = []
    offset = 0
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        manifest.append(
            {"name": name, "shape": list(arr.shape), "dtype": "float32", "offset": offset}
        )
        blobs.append(arr.tobytes())
        offset += arr.size
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": asdict(cfg),
        "vocab_sha256": vocab.vocab_hash(),
        "tensors": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def read_checkpoint_header(path) -> dict:
    """Parse and sanity-check just the JSON header of a checkpoint."""
    with open(path, "rb") as fh:
        prefix = fh.read(8)
        if len(prefix) < 8:
            raise CheckpointMismatch("checkpoint file is truncated")
        (header_len,) = struct.unpack("<Q", prefix)
        header_bytes = fh.read(header_len)
    if len(header_bytes) < header_len:
        raise CheckpointMismatch("checkpoint header is truncated")
    try:
        header = json.loads(header_bytes)
    except json.JSONDecodeError as exc:
        raise CheckpointMismatch(f"checkpoint header is not valid JSON: {exc}") from None
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointMismatch(
            f"unsupported checkpoint format version: {header.get('format_version')!r}"
        )
    return header


def load_checkpoint(path) -> Tuple[DataConditionedLM, ModelConfig]:
    """Rebuild a model from a checkpoint, verifying the vocabulary hash."""
    header = read_checkpoint_header(path)
    if header.get("vocab_sha256") != vocab.vocab_hash():
        raise CheckpointMismatch(
            "checkpoint was written against a different vocabulary table"
        )
    try:
        cfg = ModelConfig(**header["config"])
    except (TypeError, KeyError) as exc:
        raise CheckpointMismatch(f"checkpoint config is unreadable: {exc}") from None
    with open(path, "rb") as fh:
        (header_len,) = struct.unpack("<Q", fh.read(8))
        fh.seek(8 + header_len)
        raw = fh.read()
    flat = np.frombuffer(raw, dtype="<f4")
    state: Dict[str, torch.Tensor] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        numel = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        if start + numel > flat.size:
            raise CheckpointMismatch(f"tensor {entry['name']!r} overruns the checkpoint blob")
        state[entry["name"]] = torch.from_numpy(
            flat[start : start + numel].reshape(shape).copy()
        )
    model = build_model(cfg, seed=0)
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointMismatch(f"checkpoint tensors do not fit the config: {exc}") from None
    model.eval()
    return model, cfg
