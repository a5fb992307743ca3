"""Training loop: Adam updates, BLEU validation, early stopping.

After each epoch the validation captions are regenerated greedily and scored
against their references with conventional uniform-weight BLEU-1..4; the
checkpoint with the best BLEU-4 wins and training stops once `patience`
epochs pass without improvement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError
from ..similarity import ScoreConfig, SearchTask, SearchTaskSet, score
from ..text import Vocabulary, decode
from .gradients import loss_and_gradients
from .model import ModelWeights
from .network import generate

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters; patience = 0 disables early stopping."""

    learning_rate: float = 1e-3
    batch_size: int = 4
    dropout: float = 0.0
    patience: int = 10
    max_epochs: int = 100
    seed: int = 0
    validation_fraction: float = 0.10

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError("dropout must be in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ParameterError("batch_size/max_epochs must be >= 1 and patience >= 0")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ParameterError("validation_fraction must be in [0, 1)")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    bleu: tuple[float, float, float, float]


@dataclass
class TrainResult:
    weights: ModelWeights               # checkpoint with the best validation BLEU-4
    history: list[EpochMetrics]
    best_epoch: int
    train_size: int
    validation_size: int
    final_weights: ModelWeights = field(repr=False, default=None)


class AdamOptimizer:
    """Standard Adam with bias-corrected moment estimates."""

    def __init__(self, weights: ModelWeights, learning_rate: float):
        self.learning_rate = learning_rate
        self.step_count = 0
        self.m = {n: np.zeros_like(t) for n, t in weights.tensors.items()}
        self.v = {n: np.zeros_like(t) for n, t in weights.tensors.items()}

    def step(self, weights: ModelWeights, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        b1c = 1.0 - ADAM_BETA1**self.step_count
        b2c = 1.0 - ADAM_BETA2**self.step_count
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            weights.tensors[name] -= self.learning_rate * (m / b1c) / (
                np.sqrt(v / b2c) + ADAM_EPSILON
            )


def split_dataset(dataset, fraction: float, seed: int):
    """Deterministic shuffle + split; errors if either side comes out empty."""
    if len(dataset) < 2:
        raise ParameterError("dataset must contain at least 2 samples to split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    n_val = int(round(len(dataset) * fraction))
    if n_val == 0 or n_val == len(dataset):
        raise ParameterError(
            f"split {1 - fraction:.2f}/{fraction:.2f} of {len(dataset)} samples "
            "leaves an empty side"
        )
    val_idx = set(order[:n_val].tolist())
    train = [dataset[i] for i in order if i not in val_idx]
    val = [dataset[int(i)] for i in order[:n_val]]
    return train, val


def bleu_n(candidate_tokens, reference_tokens, n: int) -> float:
    """Conventional BLEU-n: uniform weights 1/n over orders 1..n."""
    if not candidate_tokens:
        return 0.0
    task = SearchTaskSet((SearchTask("ref", " ".join(reference_tokens), tuple(reference_tokens)),))
    return score(candidate_tokens, task, ScoreConfig.uniform(n)).value


def validation_bleu(weights: ModelWeights, samples, vocab: Vocabulary):
    """Mean BLEU-1..4 of greedy captions over (feature map, content ids) pairs."""
    totals = [0.0, 0.0, 0.0, 0.0]
    for a, content_ids in samples:
        result = generate(a, weights, mode="greedy")
        candidate = decode(list(result.ids), vocab)
        reference = decode(list(content_ids), vocab)
        for n in range(1, 5):
            totals[n - 1] += bleu_n(candidate, reference, n)
    count = max(len(samples), 1)
    return tuple(t / count for t in totals)


def train(
    dataset,
    vocab: Vocabulary,
    config: TrainingConfig | None = None,
    initial_weights: ModelWeights | None = None,
    model_config=None,
    validation=None,
) -> TrainResult:
    """Fit the captioner on (feature map, content token ids) pairs.

    Either `initial_weights` (warm start) or `model_config` (fresh init from
    config.seed) must be given. By default the dataset is split
    0.90/0.10 into train/validation; passing `validation` explicitly skips
    the split and trains on the full dataset (used for overfit runs).
    """
    cfg = config or TrainingConfig()
    if initial_weights is not None:
        weights = initial_weights.copy()
    elif model_config is not None:
        weights = ModelWeights.initialize(model_config, seed=cfg.seed)
    else:
        raise ParameterError("either initial_weights or model_config is required")
    if not dataset:
        raise ParameterError("dataset must be non-empty")

    if validation is None:
        train_set, val_set = split_dataset(dataset, cfg.validation_fraction, cfg.seed)
    else:
        train_set, val_set = list(dataset), list(validation)
        if not val_set:
            raise ParameterError("explicit validation set must be non-empty")

    rng = np.random.default_rng(cfg.seed + 1)
    optimizer = AdamOptimizer(weights, cfg.learning_rate)
    history: list[EpochMetrics] = []
    # BLEU-4 decides, lower orders break exact ties (captions shorter than
    # four tokens pin BLEU-4 at zero, so ties are common at desk scale)
    best_metric: tuple | None = None
    best_weights = weights.copy()
    best_epoch = 0
    since_best = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_set))
        epoch_loss = 0.0
        batches = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_set[int(i)] for i in order[start : start + cfg.batch_size]]
            loss, grads = loss_and_gradients(
                batch, weights, cfg.dropout, seed=cfg.seed * 1_000_003 + optimizer.step_count
            )
            optimizer.step(weights, grads)
            epoch_loss += loss
            batches += 1
        bleu = validation_bleu(weights, val_set, vocab)
        history.append(EpochMetrics(epoch, epoch_loss / max(batches, 1), bleu))
        metric = (bleu[3], bleu[2], bleu[1], bleu[0])
        if best_metric is None or metric > best_metric:
            best_metric = metric
            best_weights = weights.copy()
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience > 0:
                break
    return TrainResult(
        weights=best_weights,
        history=history,
        best_epoch=best_epoch,
        train_size=len(train_set),
        validation_size=len(val_set),
        final_weights=weights,
    )


def history_rows(history: list[EpochMetrics]) -> list[dict]:
    """JSON-friendly learning-curve rows (stored with each checkpoint)."""
    return [
        {"epoch": m.epoch, "train_loss": m.train_loss, "bleu": list(m.bleu)}
        for m in history
    ]


def history_csv(history) -> str:
    """Per-epoch learning-curve table (the training artifact for plotting).

    Accepts EpochMetrics or the dict rows stored in checkpoint metadata.
    """
    lines = ["epoch,train_loss,bleu1,bleu2,bleu3,bleu4"]
    for row in history:
        if isinstance(row, EpochMetrics):
            epoch, loss, bleu = row.epoch, row.train_loss, row.bleu
        else:
            epoch, loss, bleu = row["epoch"], row["train_loss"], row["bleu"]
        joined = ",".join(repr(float(b)) for b in bleu)
        lines.append(f"{epoch},{float(loss)!r},{joined}")
    return "\n".join(lines) + "\n"
