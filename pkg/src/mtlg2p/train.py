"""Epoch loop with validation checks, learning-rate halving and early stopping."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numcore as nc
from .lexicon import EncodedExample, Vocabulary, batch_examples
from .metrics import ClassifierReport, classifier_metrics
from .model import ModelConfig, ModelParams, combined_loss, forward_batch, save_checkpoint
from .seeding import stream

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 25
    lr_initial: float = 0.007
    lr_floor: float = 1e-5
    patience: int = 5
    max_epochs: int = 100
    seed: int = 0
    clip_norm: float | None = 5.0
    optimizer: str = "adam"
    precision: str = "float32"

    def __post_init__(self):
        if not 0 < self.lr_floor:
            raise ValueError("lr_floor must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class LRSchedule:
    """Halve the rate after ``patience`` consecutive checks without a strictly lower validation loss."""

    lr: float
    patience: int = 5
    best: float = math.inf
    since_best: int = 0
    halvings: int = 0

    def update(self, loss: float) -> bool:
        """Record one check; returns True when it was an improvement."""
        if loss < self.best:
            self.best = loss
            self.since_best = 0
            return True
        self.since_best += 1
        if self.since_best >= self.patience:
            self.lr /= 2
            self.halvings += 1
            self.since_best = 0
        return False


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    valid_decoder_loss: float
    valid_classifier_loss: float
    valid_total_loss: float
    accuracy: float
    precision: float
    recall: float
    f1: float
    improved: bool
    next_lr: float


@dataclass
class TrainState:
    epoch: int = 0
    lr: float = 0.0
    best_valid_loss: float = math.inf
    checks_since_best: int = 0
    history: list[EpochRecord] = field(default_factory=list)


@dataclass
class Validation:
    decoder_loss: float
    classifier_loss: float
    total_loss: float
    metrics: ClassifierReport
    probabilities: np.ndarray


def train_epoch(params: ModelParams, examples: Sequence[EncodedExample], model_cfg: ModelConfig, cfg: TrainConfig,
                epoch: int, lr: float, optimizer=None) -> float:
    """One pass over permuted batches; returns the mean batch loss."""
    optimizer = optimizer or nc.make_optimizer(cfg.optimizer)
    plist = list(params)
    losses = []
    for b, batch in enumerate(batch_examples(examples, cfg.batch_size, cfg.seed, epoch)):
        nc.zero_grads(plist)
        out = forward_batch(params, batch, model_cfg, "train", stream(cfg.seed, "dropout", epoch, b))
        value = out.total.item()
        if not math.isfinite(value):
            raise TrainingAborted(f"non-finite loss {value} at epoch {epoch}, batch {b}")
        nc.backward(out.total)
        if cfg.clip_norm is not None:
            nc.clip_global_norm(plist, cfg.clip_norm)
        optimizer.step(plist, lr)
        losses.append(value)
    return float(np.mean(losses)) if losses else 0.0


def validate(params: ModelParams, examples: Sequence[EncodedExample], model_cfg: ModelConfig, cfg: TrainConfig,
             threshold: float = 0.5) -> Validation:
    if not examples:
        raise ValueError("validate: empty validation set")
    dec_sum = cls_sum = 0.0
    tokens = items = 0
    probs = np.zeros(len(examples))
    with nc.no_grad():
        for batch in batch_examples(examples, cfg.batch_size):
            out = forward_batch(params, batch, model_cfg, "eval")
            n_tok = int(batch.decoder_mask.sum())
            dec_sum += out.decoder_loss.item() * n_tok
            cls_sum += out.classifier_loss.item() * len(batch)
            tokens += n_tok
            items += len(batch)
            probs[batch.index] = out.probabilities
    dec, cls = dec_sum / tokens, cls_sum / items
    labels = [e.label for e in examples]
    return Validation(dec, cls, combined_loss(dec, cls, model_cfg.alpha), classifier_metrics(probs, labels, threshold), probs)


def lr_schedule_update(state: TrainState, loss: float, patience: int = 5) -> bool:
    """Apply one validation check to ``state``; returns True if the lr was halved."""
    sched = LRSchedule(state.lr, patience, state.best_valid_loss, state.checks_since_best)
    before = sched.halvings
    sched.update(loss)
    state.lr, state.best_valid_loss, state.checks_since_best = sched.lr, sched.best, sched.since_best
    return sched.halvings > before


@dataclass
class FitResult:
    params: ModelParams
    best_params: ModelParams
    state: TrainState


def fit(params: ModelParams, train: Sequence[EncodedExample], valid: Sequence[EncodedExample], model_cfg: ModelConfig,
        cfg: TrainConfig, out_dir=None, vocab: Vocabulary | None = None) -> FitResult:
    """Train until the lr falls below ``lr_floor`` or ``max_epochs`` is reached.

    With ``out_dir`` set, writes ``history.jsonl`` (one line per epoch),
    ``best.ckpt`` (lowest validation total loss) and ``final.ckpt``.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        if vocab is None:
            raise ValueError("fit: vocab is required to write checkpoints")
        out.mkdir(parents=True, exist_ok=True)
        (out / "history.jsonl").write_text("", encoding="utf-8")
    state = TrainState(lr=cfg.lr_initial)
    optimizer = nc.make_optimizer(cfg.optimizer)
    best = params.copy()
    while state.epoch < cfg.max_epochs and state.lr >= cfg.lr_floor:
        epoch = state.epoch + 1
        lr = state.lr
        train_loss = train_epoch(params, train, model_cfg, cfg, epoch, lr, optimizer)
        val = validate(params, valid, model_cfg, cfg)
        improved = val.total_loss < state.best_valid_loss
        lr_schedule_update(state, val.total_loss, cfg.patience)
        state.epoch = epoch
        m = val.metrics
        rec = EpochRecord(epoch, lr, train_loss, val.decoder_loss, val.classifier_loss, val.total_loss,
                          m.accuracy, m.precision, m.recall, m.f1, improved, state.lr)
        state.history.append(rec)
        log.info("epoch %d lr %.3g train %.4f valid %.4f (dec %.4f cls %.4f) acc %.2f%s", epoch, lr, train_loss,
                 val.total_loss, val.decoder_loss, val.classifier_loss, m.accuracy, " *" if improved else "")
        if improved:
            best = params.copy()
            if out is not None:
                save_checkpoint(best, model_cfg, vocab, out / "best.ckpt")
        if out is not None:
            with open(out / "history.jsonl", "a", encoding="utf-8") as fh:
                fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
    if out is not None:
        save_checkpoint(params, model_cfg, vocab, out / "final.ckpt")
    return FitResult(params, best, state)


def summary(state: TrainState) -> str:
    if not state.history:
        return "no epochs completed"
    best = min(state.history, key=lambda r: r.valid_total_loss)
    return (f"{state.epoch} epochs, final lr {state.lr:.3g}; best validation total loss "
            f"{best.valid_total_loss:.4f} at epoch {best.epoch}")
