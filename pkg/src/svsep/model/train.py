"""Training loop: one U-Net per source, ADAM, validation-based early stopping."""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..dataset import TrainingSample
from ..errors import DivergenceError, InvalidInputError
from . import checkpoint
from .adam import Adam
from .unet import (ModelParams, UNetConfig, forward, init_params, l1_masked_loss,
                   loss_and_grads, update_running_stats)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 1
    epochs: int = 500
    steps_per_epoch: int = 800
    seed: int = 0
    patience: int = 10

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "epochs", "steps_per_epoch"):
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.patience < 0:
            raise InvalidInputError("patience must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    params: ModelParams
    history: dict = field(default_factory=lambda: {"train": [], "val": []})
    best_epoch: int = 0
    epochs_run: int = 0
    updates: int = 0


def validation_loss(params: ModelParams, samples: Sequence[TrainingSample], source: str) -> float:
    return float(np.mean([l1_masked_loss(forward(params, s.mixture)[1], s.targets[source])
                          for s in samples]))


def _source_seed(seed: int, source: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, zlib.crc32(source.encode())])


def train_source(train_data, val_data: Sequence[TrainingSample], source: str, config: TrainConfig,
                 model_config: UNetConfig, augment: Callable | None = None,
                 checkpoint_dir=None, seed_seq: np.random.SeedSequence | None = None) -> TrainResult:
    """Train a single U-Net to estimate ``source``.

    ``train_data`` is either a sequence of samples (drawn uniformly per step)
    or a callable ``draw(rng) -> TrainingSample``.
    """
    seed_seq = seed_seq or np.random.SeedSequence(config.seed)
    init_seed, data_seed, drop_seed = seed_seq.spawn(3)
    params = init_params(model_config, int(init_seed.generate_state(1)[0]))
    data_rng = np.random.default_rng(data_seed)
    drop_rng = np.random.default_rng(drop_seed)
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.eps)

    if callable(train_data):
        draw = train_data
    else:
        pool = list(train_data)
        draw = lambda rng: pool[int(rng.integers(len(pool)))]  # noqa: E731

    result = TrainResult(params.copy())
    best = validation_loss(params, val_data, source)
    result.history["val"].append(best)
    wait = 0
    ckpt_dir = Path(checkpoint_dir) / source if checkpoint_dir is not None else None

    for epoch in range(1, config.epochs + 1):
        losses = []
        for step in range(config.steps_per_epoch):
            batch = [draw(data_rng) for _ in range(config.batch_size)]
            if augment is not None:
                batch = [augment(s, data_rng) for s in batch]
            x = np.stack([s.mixture for s in batch])
            y = np.stack([s.targets[source] for s in batch])
            loss, grads, stats = loss_and_grads(params, x, y, drop_rng)
            if not np.isfinite(loss):
                raise DivergenceError(f"{source}: loss became {loss} at epoch {epoch}, step {step}",
                                      layer="loss")
            opt.step(params.weights, grads)
            update_running_stats(params, stats)
            result.updates += 1
            losses.append(loss)
        val = validation_loss(params, val_data, source)
        if not np.isfinite(val):
            raise DivergenceError(f"{source}: validation loss became {val} at epoch {epoch}", layer="loss")
        result.history["train"].append(float(np.mean(losses)))
        result.history["val"].append(val)
        result.epochs_run = epoch
        log.info("%s epoch %d: train %.6g val %.6g", source, epoch, result.history["train"][-1], val)
        if ckpt_dir is not None:
            checkpoint.save(ckpt_dir / f"epoch_{epoch:04d}.ckpt", params, epoch, result.history,
                            {"source": source})
        if val < best:
            best = val
            result.params = params.copy()
            result.best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait > config.patience:
                log.info("%s: early stop after epoch %d", source, epoch)
                break

    if ckpt_dir is not None:
        checkpoint.save(ckpt_dir / "best.ckpt", result.params, result.best_epoch, result.history,
                        {"source": source})
    return result


def train(train_data, val_data: Sequence[TrainingSample], sources: Sequence[str],
          config: TrainConfig, model_config: UNetConfig, augment: Callable | None = None,
          checkpoint_dir=None) -> dict[str, TrainResult]:
    """Train one independent U-Net per source.

    Each source gets its own seed stream derived from ``config.seed`` so that
    results do not depend on which other sources are trained.
    """
    if not callable(train_data) and len(train_data) == 0:
        raise InvalidInputError("no training samples")
    if len(val_data) == 0:
        raise InvalidInputError("no validation samples")
    out = {}
    for source in sources:
        out[source] = train_source(train_data, val_data, source, config, model_config, augment,
                                   checkpoint_dir, _source_seed(config.seed, source))
    return out
