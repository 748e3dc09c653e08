"""Training loop: triplet batches, forward on a fresh tape, backward, RMSProp."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autograd import NumericError, Tape, backward
from .checkpoint import save_checkpoint
from .encoders import FUSIONS, VARIANTS, Encoder, EncoderSpec, init_weights, param_leaves
from .graph import SignedDigraph
from .losses import LossBreakdown, assemble_objective
from .optim import NonFiniteGradientError, RMSProp
from .sampling import sample_batches

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "batch") + LossBreakdown.FIELDS + ("grad_norm",)


class DivergenceError(RuntimeError):
    def __init__(self, message: str, last_good: str | None = None):
        super().__init__(message)
        self.last_good = last_good


@dataclass
class TrainConfig:
    variant: str = "dve"
    epochs: int = 200
    batch_size: int = 1000
    learning_rate: float = 0.01
    dropout_rate: float = 0.2
    n_noise: int = 5
    d1: int = 128
    d: int = 64
    n_gcn_layers: int = 2
    fusion: str = "concat"
    seed: int = 0
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    checkpoint_every: int = 0
    # weight on the KL terms; 1.0 is the plain negative ELBO
    kl_weight: float = 1.0

    def validate(self) -> "TrainConfig":
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1 or self.n_noise < 1:
            raise ValueError("batch_size and n_noise must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not 1 <= self.n_gcn_layers <= 4:
            raise ValueError("n_gcn_layers must lie in [1, 4]")
        if self.d1 < 1 or self.d < 1:
            raise ValueError("embedding sizes must be positive")
        if not 0.0 <= self.rmsprop_decay < 1.0 or self.rmsprop_epsilon <= 0:
            raise ValueError("invalid RMSProp settings")
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be >= 0")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def encoder_spec(self, n_nodes: int, n_features: int | None = None) -> EncoderSpec:
        return EncoderSpec(variant=self.variant, n_nodes=n_nodes,
                           n_features=n_nodes if n_features is None else n_features,
                           d1=self.d1, d=self.d, n_layers=self.n_gcn_layers, fusion=self.fusion)


@dataclass
class TrainResult:
    spec: EncoderSpec
    config: TrainConfig
    weights: dict[str, np.ndarray]
    encoder: Encoder
    log_rows: list[tuple] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)

    def embeddings(self) -> tuple[np.ndarray, np.ndarray]:
        return self.encoder.embed(self.weights)


def write_log_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r[0], r[1]] + [repr(float(x)) for x in r[2:]])


def train(graph: SignedDigraph, config: TrainConfig, out_dir=None, features: np.ndarray | None = None,
          checkpoint_extra: dict | None = None) -> TrainResult:
    """Optimize the configured variant on the training graph.

    With ``out_dir``, writes ``checkpoint.bin`` (final), periodic
    ``checkpoint_epochNNNN.bin`` files and ``train_log.csv``. A non-finite
    loss or gradient raises ``DivergenceError`` after saving the last good
    weights to ``checkpoint_last_good.bin``. ``checkpoint_extra`` is merged
    into every checkpoint header.
    """
    config.validate()
    spec = config.encoder_spec(graph.num_nodes, None if features is None else np.shape(features)[1])
    encoder = Encoder(spec, graph, features, keep_prob=1.0 - config.dropout_rate)
    weights = init_weights(spec, config.seed)
    opt = RMSProp(config.learning_rate, config.rmsprop_decay, config.rmsprop_epsilon)
    result = TrainResult(spec, config, weights, encoder)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def save(name, w, epoch):
        if out is None:
            return None
        path = out / name
        save_checkpoint(path, spec, w, config.seed, {**(checkpoint_extra or {}), "epoch": epoch})
        return str(path)

    for epoch in range(config.epochs):
        totals = []
        for batch in sample_batches(graph, config.batch_size, config.n_noise, config.seed, epoch):
            rng = np.random.default_rng([config.seed, 2, epoch, batch.batch])
            try:
                tape = Tape()
                params = param_leaves(tape, weights)
                latent = encoder.forward(tape, params, rng)
                breakdown, total = assemble_objective(spec.variant, latent, batch, config.kl_weight)
                grads = backward(tape, total)
                gnorm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                new_weights = opt.step(weights, grads)
            except (NumericError, NonFiniteGradientError, FloatingPointError) as exc:
                last = save("checkpoint_last_good.bin", weights, epoch)
                if out is not None:
                    write_log_csv(result.log_rows, out / "train_log.csv")
                raise DivergenceError(f"epoch {epoch} batch {batch.batch}: {exc}", last) from exc
            weights = new_weights
            result.log_rows.append((epoch, batch.batch, *breakdown.as_row(), gnorm))
            totals.append(breakdown.total)
        result.epoch_losses.append(float(np.mean(totals)))
        log.debug("epoch %d mean loss %.6f", epoch, result.epoch_losses[-1])
        if config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0 and epoch + 1 < config.epochs:
            result.checkpoints.append(save(f"checkpoint_epoch{epoch + 1:04d}.bin", weights, epoch + 1))
    result.weights = weights
    if out is not None:
        result.checkpoints.append(save("checkpoint.bin", weights, config.epochs))
        write_log_csv(result.log_rows, out / "train_log.csv")
    return result
