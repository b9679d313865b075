"""Optimization and evaluation.

Each sample has its own graph, so a "batch" is gradient accumulation over
per-sample tapes followed by one Adam step on the batch-mean gradient.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .model import ModelConfig, forward, init_params
from .seqdata import Dataset, MultimodalSample, Task

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-3
    batch_size: int = 64
    epochs: int = 20
    plateau_patience: int = 3
    lr_halvings_max: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_halvings_max < 0:
            raise ValueError("lr_halvings_max must be >= 0")

    def to_json(self) -> dict:
        return asdict(self)


# -- loss -------------------------------------------------------------------

def loss_for_task(output: ad.Tensor, label, task: Task) -> ad.Tensor:
    """L1 for regression, summed per-class BCE for multilabel."""
    if not isinstance(task, Task):
        raise ValueError(f"unknown task {task!r}")
    if task.kind == "regression":
        return ad.l1_loss(output, np.array([[float(label)]]))
    if task.kind == "multilabel":
        return ad.bce_with_logits(output, np.asarray(label, dtype=np.float64).reshape(1, -1))
    raise ValueError(f"unknown task kind {task.kind!r}")


def sample_loss(params: Mapping, sample: MultimodalSample, config: ModelConfig, seed: int = 0) -> float:
    out = forward(params, sample, config, "eval", seed)
    return loss_for_task(out.output, sample.label, config.task).item()


# -- Adam -------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Mapping, grads: Mapping, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update.  Returns ``(new_params, new_state)``;
    the inputs are left untouched."""
    if set(grads) != set(params):
        raise ValueError("gradient names do not match parameter names")
    t = state.step + 1
    new_p, new_m, new_v = {}, {}, {}
    c1 = 1 - beta1 ** t
    c2 = 1 - beta2 ** t
    for name, p in params.items():
        g = np.asarray(grads[name])
        if g.shape != p.shape:
            raise ad.ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = beta1 * state.m.get(name, 0.0) + (1 - beta1) * g
        v = beta2 * state.v.get(name, 0.0) + (1 - beta2) * g * g
        new_m[name], new_v[name] = m, v
        new_p[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return new_p, AdamState(t, new_m, new_v)


# -- schedule / history -----------------------------------------------------

@dataclass
class History:
    epoch: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    halved: list = field(default_factory=list)
    patience: int = 3
    halvings_max: int = 5

    def append(self, epoch, train_loss, val_loss, lr, halved):
        self.epoch.append(epoch)
        self.train_loss.append(train_loss)
        self.val_loss.append(val_loss)
        self.lr.append(lr)
        self.halved.append(halved)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "lr", "halved"])
        for row in zip(self.epoch, self.train_loss, self.val_loss, self.lr, self.halved):
            e, tl, vl, lr, h = row
            w.writerow([e, repr(tl), repr(vl), repr(lr), int(h)])
        return buf.getvalue()


class PlateauHalver:
    """Halve the rate after ``patience`` epochs without a val-loss gain
    larger than ``min_delta``, at most ``max_halvings`` times."""

    def __init__(self, lr: float, patience: int, max_halvings: int, min_delta: float = 1e-6):
        self.lr = lr
        self.patience = patience
        self.max_halvings = max_halvings
        self.min_delta = min_delta
        self.best = math.inf
        self.bad_epochs = 0
        self.halvings = 0

    def update(self, val_loss: float) -> bool:
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience and self.halvings < self.max_halvings:
            self.lr /= 2
            self.halvings += 1
            self.bad_epochs = 0
            return True
        return False


def lr_schedule_check(history: History, min_delta: float = 1e-6) -> bool:
    """Replay the val losses through the plateau rule and compare."""
    if not history.lr:
        return True
    if any(b > a for a, b in zip(history.lr, history.lr[1:])):
        return False
    sched = PlateauHalver(history.lr[0], history.patience, history.halvings_max, min_delta)
    for lr, val, halved in zip(history.lr, history.val_loss, history.halved):
        if lr != sched.lr:
            return False
        if sched.update(val) != bool(halved):
            return False
    return True


# -- training ---------------------------------------------------------------

def _mean_loss(params, samples, config, seed) -> float:
    return float(np.mean([sample_loss(params, s, config, seed) for s in samples]))


def train(dataset: Dataset, model_config: ModelConfig, train_config: TrainConfig,
          callback: Optional[Callable[[int, float, float, float], None]] = None):
    """Returns ``(best params by val loss, History)``."""
    tc = train_config
    train_set = dataset.split("train")
    val_set = dataset.split("val")
    if not train_set or not val_set:
        raise TrainingError("training needs non-empty train and val splits")
    if model_config.task != dataset.task:
        raise TrainingError("model task does not match dataset task")

    rng = np.random.default_rng(tc.seed)
    params = init_params(model_config, tc.seed)
    state = AdamState()
    sched = PlateauHalver(tc.lr0, tc.plateau_patience, tc.lr_halvings_max)
    history = History(patience=tc.plateau_patience, halvings_max=tc.lr_halvings_max)
    best_params, best_val = params, math.inf

    for epoch in range(tc.epochs):
        lr = sched.lr
        order = rng.permutation(len(train_set))
        epoch_loss = 0.0
        for start in range(0, len(order), tc.batch_size):
            batch = order[start:start + tc.batch_size]
            acc = {k: np.zeros_like(v) for k, v in params.items()}
            for i in batch:
                s = train_set[i]
                out = forward(params, s, model_config, "train", tc.seed)
                loss = loss_for_task(out.output, s.label, model_config.task)
                grads = ad.backward(out.tape, loss)
                for k, g in grads.items():
                    acc[k] += g
                epoch_loss += loss.item()
            grads = {k: g / len(batch) for k, g in acc.items()}
            params, state = adam_step(params, grads, state, lr, tc.beta1, tc.beta2, tc.eps)
        train_loss = epoch_loss / len(train_set)
        val_loss = _mean_loss(params, val_set, model_config, tc.seed)
        if not math.isfinite(val_loss):
            raise ad.NumericalError(f"validation loss diverged at epoch {epoch}")
        if val_loss < best_val:
            best_val, best_params = val_loss, params
        halved = sched.update(val_loss)
        history.append(epoch, train_loss, val_loss, lr, halved)
        log.info("epoch %d train %.4f val %.4f lr %.2e%s", epoch, train_loss, val_loss, lr,
                 " (halved)" if halved else "")
        if callback is not None:
            callback(epoch, train_loss, val_loss, lr)
    return best_params, history


# -- metrics ----------------------------------------------------------------

@dataclass
class Metrics:
    n: int
    mae: Optional[float] = None
    corr: Optional[float] = None
    acc2: Optional[float] = None
    acc7: Optional[float] = None
    f1: object = None  # float for regression, per-class list for multilabel
    accuracy: Optional[list] = None  # per-class, multilabel only
    corr_undefined: bool = False

    def to_json(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def binary_f1(pred_pos: np.ndarray, true_pos: np.ndarray) -> float:
    tp = int(np.sum(pred_pos & true_pos))
    fp = int(np.sum(pred_pos & ~true_pos))
    fn = int(np.sum(~pred_pos & true_pos))
    if tp == 0:
        return 0.0 if (fp or fn) else 1.0
    return 2 * tp / (2 * tp + fp + fn)


def acc7_bin(x) -> np.ndarray:
    """Clamp to [-3, 3] and round half up: bins are the integers -3..3."""
    return np.floor(np.clip(np.asarray(x, dtype=np.float64), -3.0, 3.0) + 0.5).astype(int)


def pearson(x: np.ndarray, y: np.ndarray) -> tuple[float, bool]:
    """Returns ``(r, undefined)``; zero variance gives ``(0.0, True)``."""
    xc = x - x.mean()
    yc = y - y.mean()
    den = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if den == 0.0:
        return 0.0, True
    return float(np.clip((xc @ yc) / den, -1.0, 1.0)), False


def regression_metrics(preds: Sequence[float], labels: Sequence[float]) -> Metrics:
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.size == 0:
        raise ValueError("no predictions to score")
    nz = y != 0
    acc2 = float(np.mean((p[nz] > 0) == (y[nz] > 0))) if nz.any() else 0.0
    f1 = binary_f1(p[nz] > 0, y[nz] > 0) if nz.any() else 0.0
    corr, undefined = pearson(p, y)
    return Metrics(
        n=int(p.size),
        mae=float(np.mean(np.abs(p - y))),
        corr=corr,
        acc2=acc2,
        acc7=float(np.mean(acc7_bin(p) == acc7_bin(y))),
        f1=f1,
        corr_undefined=undefined,
    )


def multilabel_metrics(logits: np.ndarray, labels: np.ndarray) -> Metrics:
    pred = np.asarray(logits) > 0
    true = np.asarray(labels).astype(bool)
    k = true.shape[1]
    return Metrics(
        n=int(true.shape[0]),
        f1=[binary_f1(pred[:, c], true[:, c]) for c in range(k)],
        accuracy=[float(np.mean(pred[:, c] == true[:, c])) for c in range(k)],
    )


def predict(params: Mapping, samples: Sequence[MultimodalSample], config: ModelConfig, seed: int = 0) -> np.ndarray:
    return np.array([forward(params, s, config, "eval", seed).prediction for s in samples])


def evaluate(params: Mapping, dataset: Dataset, split: str, model_config: ModelConfig, seed: int = 0) -> Metrics:
    samples = dataset.split(split)
    if not samples:
        raise ValueError(f"split {split!r} is empty")
    preds = predict(params, samples, model_config, seed)
    if model_config.task.kind == "regression":
        m = regression_metrics(preds[:, 0], [s.label for s in samples])
        if m.corr_undefined:
            log.warning("predictions have zero variance; correlation reported as 0")
        return m
    return multilabel_metrics(preds, np.array([s.label for s in samples]))
