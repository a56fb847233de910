from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, TrainingError
from .features import PeakFeatures
from .model import ModelParams, forward_batch, init_params, loss_and_grads
from .neuralnet import AdamState, RngStream, adam_update, bce_loss
from .schemas import HistoryRecord, TrainConfig, VariantConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PairExample:
    a: PeakFeatures
    b: PeakFeatures
    label: int

    @property
    def abs_rt_diff(self) -> float:
        return abs(self.a.rt - self.b.rt)


def make_pairs(
    features: Sequence[PeakFeatures], seed: int = 0, max_rt_diff: float | None = None
) -> list[PairExample]:
    """Every same-group pair as a positive plus an equal number of random negatives.

    Peaks pair across m/z channels the same way prediction scores them.
    Unidentified peaks (group -1) appear only as negatives opposite an identified peak.
    """
    n = len(features)
    first, second = np.triu_indices(n, 1)
    groups = np.array([f.group for f in features], dtype=np.int64)
    rt = np.array([f.rt for f in features], dtype=np.float64)
    ga, gb = groups[first], groups[second]
    positive = (ga == gb) & (ga >= 0)
    negative = (ga != gb) & ((ga >= 0) | (gb >= 0))
    if max_rt_diff is not None:
        negative &= np.abs(rt[first] - rt[second]) <= max_rt_diff
    pos_idx = np.flatnonzero(positive)
    neg_idx = np.flatnonzero(negative)
    if pos_idx.size == 0:
        raise ConfigError("no positive pairs: need a group with at least two identified peaks")
    rng = RngStream(seed)
    if neg_idx.size < pos_idx.size:
        logger.warning(
            "only %d negative pairs available for %d positives", neg_idx.size, pos_idx.size
        )
        chosen = neg_idx
    else:
        chosen = np.sort(rng.choice(neg_idx, pos_idx.size, replace=False))
    picked = np.concatenate([pos_idx, chosen])
    labels = np.concatenate([np.ones(pos_idx.size, int), np.zeros(chosen.size, int)])
    order = rng.permutation(picked.size)
    pairs = [
        PairExample(features[first[picked[k]]], features[second[picked[k]]], int(labels[k]))
        for k in order
    ]
    logger.info("%d pairs (%d positive)", len(pairs), pos_idx.size)
    return pairs


def stratified_split(
    labels: np.ndarray, fraction: float, rng: RngStream
) -> tuple[np.ndarray, np.ndarray]:
    """Indices for training and validation with each label split separately."""
    train_parts, val_parts = [], []
    for value in (0, 1):
        idx = np.flatnonzero(labels == value)
        idx = idx[rng.permutation(idx.size)]
        n_val = max(1, min(idx.size - 1, int(round(fraction * idx.size))))
        val_parts.append(idx[:n_val])
        train_parts.append(idx[n_val:])
    return np.sort(np.concatenate(train_parts)), np.sort(np.concatenate(val_parts))


class _Tally:
    def __init__(self, outputs: list[str]):
        self.loss = {name: 0.0 for name in outputs}
        self.correct = {name: 0 for name in outputs}
        self.count = 0

    def add(self, outputs: dict[str, np.ndarray], labels: np.ndarray) -> None:
        for name, p in outputs.items():
            loss, _ = bce_loss(p, labels)
            self.loss[name] += float(loss.sum())
            self.correct[name] += int(np.sum((p >= 0.5) == (labels == 1)))
        self.count += labels.size

    def records(self, epoch: int, split: str) -> list[HistoryRecord]:
        return [
            HistoryRecord(
                epoch=epoch,
                split=split,
                output=name,
                loss=self.loss[name] / self.count,
                accuracy=self.correct[name] / self.count,
            )
            for name in self.loss
        ]


def _sides(pairs: Sequence[PairExample], idx: np.ndarray):
    return [pairs[i].a for i in idx], [pairs[i].b for i in idx]


def evaluate_pairs(
    params: ModelParams, pairs: Sequence[PairExample], batch_size: int = 256
) -> dict[str, np.ndarray]:
    """Infer-mode outputs for every pair."""
    collected: dict[str, list[np.ndarray]] = {}
    for start in range(0, len(pairs), batch_size):
        idx = np.arange(start, min(start + batch_size, len(pairs)))
        left, right = _sides(pairs, idx)
        outputs, _ = forward_batch(params, left, right, "infer")
        for name, value in outputs.items():
            collected.setdefault(name, []).append(value)
    return {name: np.concatenate(parts) for name, parts in collected.items()}


def train(
    pairs: Sequence[PairExample], variant: VariantConfig, cfg: TrainConfig | None = None
) -> tuple[ModelParams, list[HistoryRecord]]:
    cfg = cfg or TrainConfig()
    labels = np.array([p.label for p in pairs], dtype=np.int64)
    if np.sum(labels == 1) < 2 or np.sum(labels == 0) < 2:
        raise ConfigError("training needs at least two pairs of each label")
    rng = RngStream(cfg.seed)
    train_idx, val_idx = stratified_split(labels, cfg.validation_fraction, rng)
    sample = pairs[0].a
    params = init_params(
        variant, sample.mass_spectrum.size, sample.chrom_segment.size, rng
    )
    state = AdamState(lr=cfg.learning_rate)
    outputs_names = ["main", *variant.encoders]
    history: list[HistoryRecord] = []
    logger.info(
        "training variant %s on %d pairs (%d validation) for %d epochs",
        variant.id,
        train_idx.size,
        val_idx.size,
        cfg.epochs,
    )
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        order = train_idx[rng.permutation(train_idx.size)]
        tally = _Tally(outputs_names)
        for start in range(0, order.size, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            left, right = _sides(pairs, batch)
            y = labels[batch].astype(np.float64)
            loss, grads, outputs = loss_and_grads(
                params, left, right, y, cfg.aux_loss_weight, "train", rng
            )
            if not np.isfinite(loss):
                raise TrainingError("non-finite training loss", epoch=epoch)
            adam_update(params.tensors, grads, state)
            tally.add(outputs, y)
            logger.debug("epoch %d batch %d loss %.5f", epoch, start // cfg.batch_size, loss)
        history.extend(tally.records(epoch, "train"))
        val_outputs = evaluate_pairs(params, [pairs[i] for i in val_idx])
        val_tally = _Tally(outputs_names)
        val_tally.add(val_outputs, labels[val_idx].astype(np.float64))
        history.extend(val_tally.records(epoch, "validation"))
        elapsed = time.perf_counter() - started
        main_val = val_tally.records(epoch, "validation")[0]
        logger.info(
            "epoch %d/%d: validation loss %.4f accuracy %.3f (%.2fs)",
            epoch,
            cfg.epochs,
            main_val.loss,
            main_val.accuracy,
            elapsed,
        )
    return params, history
