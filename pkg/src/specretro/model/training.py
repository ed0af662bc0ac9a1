from __future__ import annotations

import csv
import logging
import math
import time
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from specretro.model.config import ModelConfig
from specretro.model.loss import make_batch, medusa_loss
from specretro.model.network import Seq2SeqTransformer, freeze, init_model

logger = logging.getLogger(__name__)

Pair = tuple[Sequence[int], Sequence[int]]


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainSchedule:
    epochs: int = 20
    max_steps: int | None = None
    batch_size: int = 64
    lr: float = 1e-3
    warmup_steps: int = 200
    min_lr_ratio: float = 0.05
    grad_clip: float = 1.0
    seed: int = 0
    log_every: int = 50


@dataclass
class TrainLog:
    steps: list[int] = field(default_factory=list)
    total: list[float] = field(default_factory=list)
    per_head: list[list[float]] = field(default_factory=list)
    heldout: list[tuple[int, float]] = field(default_factory=list)
    wall_time: float = 0.0

    def write_csv(self, path: str | Path) -> None:
        n_heads = len(self.per_head[0]) if self.per_head else 0
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "total_loss"] + [f"loss_head_{k + 1}" for k in range(n_heads)])
            for step, total, heads in zip(self.steps, self.total, self.per_head):
                writer.writerow([step, f"{total:.6f}"] + [f"{h:.6f}" for h in heads])


def _batches(pairs: Sequence[Pair], batch_size: int, rng: np.random.Generator) -> list[list[int]]:
    """Shuffled, length-bucketed batch index lists."""
    order = rng.permutation(len(pairs))
    chunk = batch_size * 50
    batches = []
    for start in range(0, len(order), chunk):
        block = sorted(order[start : start + chunk], key=lambda i: len(pairs[i][1]))
        batches.extend(block[i : i + batch_size] for i in range(0, len(block), batch_size))
    perm = rng.permutation(len(batches))
    return [batches[i] for i in perm]


@torch.no_grad()
def evaluate_loss(model: Seq2SeqTransformer, pairs: Sequence[Pair], batch_size: int = 128) -> float:
    model.eval()
    n_heads = model.num_heads_out
    totals = []
    weights = []
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start : start + batch_size]
        batch = make_batch([p[0] for p in chunk], [p[1] for p in chunk], n_heads)
        logits, _ = model.decode(batch.tgt_in, model.encode(batch.src), return_cache=False)
        total, _ = medusa_loss(logits, batch)
        totals.append(float(total))
        weights.append(len(chunk))
    return float(np.average(totals, weights=weights)) if totals else float("nan")


def train(
    pairs: Sequence[Pair],
    config: ModelConfig,
    schedule: TrainSchedule,
    heldout: Sequence[Pair] = (),
    model: Seq2SeqTransformer | None = None,
) -> tuple[Seq2SeqTransformer, TrainLog]:
    """Teacher-forced Adam training of the base model and extra heads jointly.

    Data order and initialisation are fixed by ``schedule.seed`` and
    ``config.seed``. Raises :class:`TrainingDivergedError` on a non-finite loss.
    """
    started = time.perf_counter()
    model = model if model is not None else init_model(config)
    log = TrainLog()
    total_steps = schedule.max_steps
    if total_steps is None:
        total_steps = schedule.epochs * math.ceil(len(pairs) / schedule.batch_size)
    if total_steps <= 0 or not pairs:
        log.wall_time = time.perf_counter() - started
        return freeze(model), log

    torch.manual_seed(schedule.seed)
    rng = np.random.default_rng(schedule.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=schedule.lr, betas=(0.9, 0.98), eps=1e-9)

    def lr_at(step: int) -> float:
        if step < schedule.warmup_steps:
            return (step + 1) / schedule.warmup_steps
        progress = (step - schedule.warmup_steps) / max(1, total_steps - schedule.warmup_steps)
        cosine = 0.5 * (1 + math.cos(math.pi * min(1.0, progress)))
        return schedule.min_lr_ratio + (1 - schedule.min_lr_ratio) * cosine

    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lr_at)
    n_heads = model.num_heads_out
    step = 0
    epoch = 0
    while step < total_steps:
        model.train()
        for idx in _batches(pairs, schedule.batch_size, rng):
            if step >= total_steps:
                break
            batch = make_batch([pairs[i][0] for i in idx], [pairs[i][1] for i in idx], n_heads)
            logits, _ = model.decode(batch.tgt_in, model.encode(batch.src), return_cache=False)
            total, per_head = medusa_loss(logits, batch)
            if not torch.isfinite(total):
                raise TrainingDivergedError(
                    f"non-finite loss at step {step}: per-head {[float(h.detach()) for h in per_head]}"
                )
            optimizer.zero_grad(set_to_none=True)
            total.backward()
            if schedule.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), schedule.grad_clip)
            optimizer.step()
            scheduler.step()
            step += 1
            log.steps.append(step)
            head_values = [float(h.detach()) for h in per_head]
            log.total.append(float(total.detach()))
            log.per_head.append(head_values)
            if schedule.log_every and step % schedule.log_every == 0:
                logger.info("step %d loss %.4f main %.4f", step, log.total[-1], head_values[0])
        epoch += 1
        if heldout:
            loss = evaluate_loss(model, heldout)
            log.heldout.append((step, loss))
            logger.info("epoch %d step %d heldout loss %.4f", epoch, step, loss)
    log.wall_time = time.perf_counter() - started
    model.meta.update({"train_steps": step, "train_wall_time": log.wall_time})
    return freeze(model), log
