"""Cross entropy, Adam, cosine annealing and the multi-seed training driver."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import augment
from .evaluate import accuracy, predict_labels
from .nn.network import (NetworkConfig, check_params, forward, init_params,
                         network_backward, predict_proba, trainable)
from .params import ModelParams, save_model

log = logging.getLogger(__name__)

PROB_CLIP = 1e-15


@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 100
    lr_max: float = 1e-3
    lr_min: float = 1e-7
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-7
    seeds: Tuple[int, ...] = (1, 2, 3)
    mixup: bool = False
    alpha: float = 0.4

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not self.lr_min <= self.lr_max:
            raise ValueError("lr_min must not exceed lr_max")
        if not self.seeds:
            raise ValueError("at least one seed is required")


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 4:
            raise ValueError(f"features must be (N, H, W, C), got {self.features.shape}")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("feature and label counts differ")

    def __len__(self):
        return self.labels.shape[0]


def one_hot(labels, n_classes: int = 10, dtype=np.float32) -> np.ndarray:
    return np.eye(n_classes, dtype=dtype)[np.asarray(labels)]


def cross_entropy(probs, target) -> float:
    """-sum(target * ln(clip(p))) for one sample, or the batch mean for 2-D input."""
    p = np.clip(np.asarray(probs, dtype=np.float64), PROB_CLIP, 1.0 - PROB_CLIP)
    t = np.asarray(target, dtype=np.float64)
    per_sample = -np.sum(t * np.log(p), axis=-1)
    return float(np.mean(per_sample))


def cosine_lr(epoch: float, total: int, lr_max: float = 1e-3, lr_min: float = 1e-7) -> float:
    if not 0 <= epoch <= total:
        raise ValueError(f"epoch {epoch} outside [0, {total}]")
    if epoch == 0:
        return lr_max
    if epoch == total:
        return lr_min
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * epoch / total))


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads: Dict[str, np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-7):
    """Bias-corrected Adam update, applied in place to the tensors named in ``grads``."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, g in grads.items():
        theta = params[name]
        if g.shape != theta.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {theta.shape}")
        m = state.m.setdefault(name, np.zeros_like(theta))
        v = state.v.setdefault(name, np.zeros_like(theta))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        theta -= step.astype(theta.dtype, copy=False)
    return params, state


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    val_accuracy: float


@dataclass
class SeedResult:
    seed: int
    best_accuracy: float
    best_epoch: int
    curve: List[EpochLog]
    params: ModelParams
    checkpoint: Optional[Path] = None


@dataclass
class TrainReport:
    results: List[SeedResult]

    @property
    def best_accuracies(self) -> List[float]:
        return [r.best_accuracy for r in self.results]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.best_accuracies))

    @property
    def checkpoints(self) -> List[Optional[Path]]:
        return [r.checkpoint for r in self.results]

    def to_text(self) -> str:
        lines = []
        for r in self.results:
            lines.append(f"seed={r.seed} best_val_accuracy={r.best_accuracy:.6f} "
                         f"best_epoch={r.best_epoch} checkpoint={r.checkpoint or '-'}")
        lines.append(f"mean_best_val_accuracy={self.mean_accuracy:.6f}")
        return "\n".join(lines) + "\n"


def write_curve(path, curve: Sequence[EpochLog]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "lr", "train_loss", "val_accuracy"])
        for row in curve:
            w.writerow([row.epoch, repr(row.lr), repr(row.train_loss), repr(row.val_accuracy)])


def train_seed(seed: int, config: TrainConfig, train: Dataset, val: Dataset,
               net: NetworkConfig) -> SeedResult:
    rng = np.random.default_rng(seed)
    params = init_params(net, rng)
    check_params(params, net)
    state = AdamState()
    targets = one_hot(train.labels, net.n_classes)
    n = len(train)
    best_acc, best_epoch, best_params = -1.0, -1, params.copy()
    curve = []
    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.lr_max, config.lr_min)
        order = rng.permutation(n)
        partner = rng.permutation(n) if config.mixup else None
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            x, y = train.features[idx], targets[idx]
            if partner is not None:
                jdx = partner[start:start + config.batch_size]
                x, y, _ = augment.mixup_batches(x, y, train.features[jdx], targets[jdx],
                                                config.alpha, rng)
            probs, cache = forward(x, params, net, "train")
            loss_sum += cross_entropy(probs, y) * len(idx)
            grads, _ = network_backward(cache, y)
            adam_step(params, grads, state, lr, config.beta1, config.beta2, config.adam_eps)
            for name, value in cache.stats.items():
                params[name] = value.astype(params[name].dtype, copy=False)
        val_acc = accuracy(predict_labels(predict_proba(val.features, params, net)), val.labels)
        curve.append(EpochLog(epoch, lr, loss_sum / n, val_acc))
        log.debug("seed %d epoch %d lr %.3g loss %.4f val_acc %.4f", seed, epoch, lr, loss_sum / n, val_acc)
        # ties keep the earlier epoch
        if val_acc > best_acc:
            best_acc, best_epoch, best_params = val_acc, epoch, params.copy()
    return SeedResult(seed, best_acc, best_epoch, curve, best_params)


def train_run(config: TrainConfig, train: Dataset, val: Dataset, net: NetworkConfig,
              out_dir=None) -> TrainReport:
    """Train one model per seed, keep each seed's best-validation checkpoint.

    With ``out_dir`` set, writes ``model_seed<k>.lasc`` and
    ``curve_seed<k>.csv`` per seed plus ``report.txt``.
    """
    if len(train) == 0 or len(val) == 0:
        raise ValueError("training and validation sets must be non-empty")
    for name, ds in (("train", train), ("validation", val)):
        if ds.features.shape[1:] != tuple(net.input_shape):
            raise ValueError(f"{name} features {ds.features.shape[1:]} do not match network input {net.input_shape}")
    results = []
    for seed in config.seeds:
        result = train_seed(seed, config, train, val, net)
        log.info("seed %d: best validation accuracy %.4f at epoch %d", seed, result.best_accuracy, result.best_epoch)
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            result.checkpoint = out / f"model_seed{seed}.lasc"
            save_model(result.checkpoint, result.params)
            write_curve(out / f"curve_seed{seed}.csv", result.curve)
        results.append(result)
    report = TrainReport(results)
    if out_dir is not None:
        (Path(out_dir) / "report.txt").write_text(report.to_text())
    return report
