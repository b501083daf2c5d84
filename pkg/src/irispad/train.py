"""Mini-batch SGD training with momentum, plus batch score evaluation.

The update rule is v <- momentum*v - lr*g; theta <- theta + v, applied
per parameter tensor.  Shuffling is a seeded permutation drawn fresh
from (config.seed, epoch) each epoch, so runs are bit-reproducible and
any epoch's order can be regenerated in isolation.
"""

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import nn, synthdata
from .model import ConfigError, save_checkpoint


class TrainAbort(RuntimeError):
    """Raised when the loss goes non-finite; carries epoch and batch."""

    def __init__(self, epoch, batch_index, loss):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch_index}")
        self.epoch = epoch
        self.batch_index = batch_index


@dataclass
class TrainConfig:
    learning_rate: float = 0.005
    momentum: float = 0.9
    batch_size: int = 20
    epochs: int = 50
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        # zero lr is allowed so a no-op run is expressible; negative is not
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    accuracy: float
    wall_time: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def to_csv(self, path):
        # wall_time stays out of the CSV so reruns are byte-identical;
        # it lives on the records and in the timing sidecar
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "mean_loss", "accuracy"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.mean_loss), repr(r.accuracy)])

    def write_timing(self, path):
        with open(path, "w") as f:
            for r in self.records:
                f.write(f"epoch {r.epoch}: {r.wall_time:.3f}s\n")


def epoch_permutation(seed, epoch, n):
    """The shuffle order for one epoch, reproducible in isolation."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch)]))
    return rng.permutation(n)


def sgd_momentum_step(params, velocity, grads, lr, momentum):
    """In-place momentum update over matching name->array dicts."""
    for name, p in params.items():
        v = velocity[name]
        v *= momentum
        v -= lr * grads[name]
        p += v


def train(model, dataset, config, out_dir=None):
    """Train in place; returns (model, TrainLog).

    dataset is a list of LabeledImage spanning both binary classes.
    Checkpoints go to out_dir when given: model.ckpt at the end, plus
    checkpoint_epoch_NNNN.ckpt every checkpoint_every epochs.
    """
    if not dataset:
        raise ConfigError("training dataset is empty")
    x, y = synthdata.batch(dataset, model.config.input_size)
    present = set(int(v) for v in np.unique(y))
    if present != {0, 1}:
        raise ConfigError(f"training needs both binary classes, dataset has only {sorted(present)}")

    params = model.params()
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    n = len(dataset)
    bs = config.batch_size
    log = TrainLog()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        perm = epoch_permutation(config.seed, epoch, n)
        loss_sum = 0.0
        correct = 0
        for bi, start in enumerate(range(0, n, bs)):
            idx = perm[start : start + bs]
            xb, yb = x[idx], y[idx]
            logits, _, caches = model.forward_batch(xb, need_caches=True)
            loss, probs, grad = nn.softmax_cross_entropy(logits, yb)
            if not np.isfinite(loss):
                raise TrainAbort(epoch, bi, loss)
            loss_sum += float(loss) * len(idx)
            correct += int((probs.argmax(axis=1) == yb).sum())
            grads = model.backward(grad, caches)
            sgd_momentum_step(params, velocity, grads, config.learning_rate, config.momentum)
        model.meta["epoch"] = epoch
        log.records.append(
            EpochStats(epoch, loss_sum / n, correct / n, time.perf_counter() - t0)
        )
        if out is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_checkpoint(model, out / f"checkpoint_epoch_{epoch:04d}.ckpt")
    if out is not None:
        save_checkpoint(model, out / "model.ckpt")
        log.to_csv(out / "train_log.csv")
        log.write_timing(out / "train_timing.txt")
    return model, log


class ScoreRow(NamedTuple):
    score: float
    label: int
    class_label: str
    ident: str


def _sample_ident(image):
    return image.source_path if image.source_path else str(image.seed)


def evaluate_scores(model, dataset, csv_path=None, jobs=1):
    """Score every sample in input order; optionally stream rows to CSV.

    Forward passes are pure, so with jobs > 1 chunks fan out over
    threads; rows still come back in dataset order.
    """
    size = model.config.input_size
    tensors = []
    for image in dataset:
        try:
            tensors.append(synthdata.crop_and_resize(image, size))
        except ValueError as e:
            raise ValueError(f"sample {_sample_ident(image)}: {e}") from e

    def score_chunk(chunk):
        if not chunk:
            return np.zeros(0)
        from .model import pa_scores

        return pa_scores(model, np.concatenate(chunk, axis=0))

    if tensors and jobs > 1:
        step = max(1, (len(tensors) + jobs - 1) // jobs)
        chunks = [tensors[i : i + step] for i in range(0, len(tensors), step)]
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(score_chunk, chunks))
        scores = np.concatenate(parts) if parts else np.zeros(0)
    else:
        scores = score_chunk(tensors)

    rows = [
        ScoreRow(float(s), im.binary_label, im.label, _sample_ident(im))
        for s, im in zip(scores, dataset)
    ]
    if csv_path is not None:
        write_scores_csv(csv_path, rows)
    return rows


def write_scores_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["path_or_seed", "class", "label", "score"])
        for r in rows:
            w.writerow([r.ident, r.class_label, r.label, repr(r.score)])


def read_scores_csv(path):
    rows = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            rows.append(
                ScoreRow(
                    float(rec["score"]), int(rec["label"]), rec["class"], rec["path_or_seed"]
                )
            )
    return rows
