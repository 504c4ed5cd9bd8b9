"""Training loop with gradient accumulation, freeze flags, and evaluation.

Each optimizer step consumes ``grad_accum_steps`` micro-batches of
``batch_size`` samples; the micro-batch losses are averaged per
micro-batch and the accumulated gradients are divided by the number of
accumulation steps before the AdamW update. Sample order is a seeded
per-epoch permutation, so identical configs produce identical loss logs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DivergenceError, NonFiniteError
from .losses import bce_loss, dice_loss
from .metrics import MetricsReport, compute_metrics
from .model import DEFAULT_TRAINABLE, ReferringSegmenter
from .optim import AdamW, linear_lr
from .synth import SegSample


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    lr_final: float = 0.0
    total_iterations: int = 200
    batch_size: int = 8
    grad_accum_steps: int = 2
    bce_weight: float = 1.0
    dice_weight: float = 1.0
    seed: int = 0
    weight_decay: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    trainable: dict[str, bool] = field(default_factory=lambda: dict(DEFAULT_TRAINABLE))
    eval_every: int = 0               # 0 = evaluate only at the end
    eval_threshold: float = 0.0
    early_stop_giou: Optional[float] = None

    @property
    def effective_batch(self) -> int:
        return self.batch_size * self.grad_accum_steps


@dataclass
class TrainResult:
    log: list[dict]
    final_eval: Optional[MetricsReport]
    iterations_run: int


def collate(samples: Sequence[SegSample], tokenizer):
    images = np.stack([s.image for s in samples])
    targets = np.stack([s.mask.astype(np.float64) for s in samples])
    ids, mask = tokenizer.encode_batch([s.expression for s in samples])
    return images, ids, mask, targets


def _sample_stream(n: int, seed: int):
    """Endless deterministic stream of sample indices (fresh shuffle per epoch)."""
    rng = np.random.default_rng([seed, 0xDA7A])
    while True:
        yield from rng.permutation(n)


def train(model: ReferringSegmenter, dataset: Sequence[SegSample],
          config: TrainConfig, eval_dataset: Optional[Sequence[SegSample]] = None,
          on_log: Optional[Callable[[dict], None]] = None) -> TrainResult:
    if not dataset:
        raise ConfigError("training dataset is empty")
    canvas = dataset[0].mask.shape[0]
    if canvas != model.output_size:
        raise ConfigError(
            f"mask resolution {canvas} != model output {model.output_size}; "
            "choose sam.patch_size so grid*4 matches the canvas")

    model.set_trainable_groups(config.trainable)
    trainable = {name: p for name, p in model.named_parameters() if p.requires_grad}
    optimizer = AdamW(trainable, betas=config.betas, eps=config.eps,
                      weight_decay=config.weight_decay)
    stream = _sample_stream(len(dataset), config.seed)
    eval_set = eval_dataset if eval_dataset is not None else dataset

    log: list[dict] = []

    def emit(record: dict):
        log.append(record)
        if on_log is not None:
            on_log(record)

    iterations_run = 0
    for it in range(config.total_iterations):
        lr = linear_lr(it, config.total_iterations, config.lr0, config.lr_final)
        optimizer.zero_grad()
        bce_total = 0.0
        dice_total = 0.0
        for _ in range(config.grad_accum_steps):
            batch = [dataset[next(stream)] for _ in range(config.batch_size)]
            images, ids, mask, targets = collate(batch, model.tokenizer)
            try:
                with T.record() as tape:
                    logits = model.forward_tokens(images, ids, mask)
                    bce = bce_loss(logits, targets) * config.bce_weight
                    dice = dice_loss(logits, targets) * config.dice_weight
                    loss = bce + dice
                T.backward(loss, tape)
            except NonFiniteError as e:
                raise DivergenceError(f"training diverged at iteration {it}: {e}") from e
            bce_total += bce.item()
            dice_total += dice.item()
        optimizer.step(lr, grad_scale=1.0 / config.grad_accum_steps)
        iterations_run = it + 1
        bce_mean = bce_total / config.grad_accum_steps
        dice_mean = dice_total / config.grad_accum_steps
        emit({"it": it, "lr": lr, "loss": bce_mean + dice_mean,
              "bce": bce_mean, "dice": dice_mean})

        if config.eval_every and (it + 1) % config.eval_every == 0:
            report = evaluate(model, eval_set, threshold=config.eval_threshold)
            emit({"it": it, "giou": report.giou, "ciou": report.ciou})
            if config.early_stop_giou is not None and report.giou >= config.early_stop_giou:
                return TrainResult(log, report, iterations_run)

    report = evaluate(model, eval_set, threshold=config.eval_threshold)
    emit({"it": config.total_iterations - 1, "giou": report.giou, "ciou": report.ciou})
    return TrainResult(log, report, iterations_run)


def evaluate(model: ReferringSegmenter, dataset: Sequence[SegSample],
             threshold: float = 0.0, batch_size: int = 16,
             keep_per_sample: bool = False) -> MetricsReport:
    """Binarize logits at `threshold` and score against the ground truth."""
    preds: list[np.ndarray] = []
    gts: list[np.ndarray] = []
    for start in range(0, len(dataset), batch_size):
        batch = list(dataset[start:start + batch_size])
        images, ids, mask, targets = collate(batch, model.tokenizer)
        with T.no_grad():
            logits = model.forward_tokens(images, ids, mask).data
        preds.extend(logits > threshold)
        gts.extend(t.astype(bool) for t in targets)
    return compute_metrics(preds, gts, keep_per_sample=keep_per_sample)
