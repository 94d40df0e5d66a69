"""Loss, Adam with decoupled weight decay, learning-rate schedules, early stopping and the epoch loop."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .analysis import MetricsReport, metrics, predict_logits
from .autodiff import Tape, Tensor, backward, log_softmax
from .errors import ConfigurationError, ContractError, DimensionError, TrainingDiverged
from .models import Model, forward

LOG_COLUMNS = ("epoch", "train_loss", "val_loss", "val_accuracy", "val_kappa", "val_macro_f1", "lr")
SCHEDULERS = ("constant", "warmup")
WARMUP_CHOICES = (10, 100, 1000)
LR_RANGE = (1e-8, 1e-1)
WD_RANGE = (1e-12, 1e-1)


def _check_one_hot(targets):
    t = np.asarray(targets)
    if t.ndim != 2:
        raise DimensionError(f"targets must be one-hot [N, C], got shape {t.shape}")
    ok = np.all((t == 0) | (t == 1), axis=1) & (t.sum(axis=1) == 1)
    if not ok.all():
        raise ContractError(f"target row {int(np.argmin(ok))} is not one-hot")


def cross_entropy(logits, targets) -> Tensor:
    """Batch mean of -log softmax(logits)[true class] (log-sum-exp form)."""
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    _check_one_hot(targets)
    if logits.shape != np.shape(targets):
        raise DimensionError(f"logits {logits.shape} and targets {np.shape(targets)} differ")
    n = logits.shape[0]
    return (log_softmax(logits, axis=-1) * Tensor(np.asarray(targets, dtype=float))).sum() * (-1.0 / n)


def cross_entropy_value(logits, targets) -> float:
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-(logp * targets).sum() / len(targets))


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    lr: float = 1e-3
    weight_decay: float = 0.0

    @classmethod
    def for_params(cls, params, lr=1e-3, weight_decay=0.0, **kw):
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params],
                   lr=lr, weight_decay=weight_decay, **kw)


def adam_step(params, grads, state: AdamState, lr_t: float):
    """One bias-corrected Adam update followed by decoupled decay ``θ -= lr_t·λ·θ``."""
    if lr_t <= 0:
        raise ConfigurationError(f"learning rate must be positive, got {lr_t}")
    if len(params) != len(state.m):
        raise DimensionError(f"{len(params)} parameters but optimizer tracks {len(state.m)}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if m.shape != p.data.shape:
            raise DimensionError(f"optimizer buffer {m.shape} does not match parameter {p.data.shape}")
        if g is None:
            g = np.zeros_like(m)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr_t * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay:
            p.data -= lr_t * state.weight_decay * p.data


def warmup_lr(step: int, hidden_dim: int, n_warmup: int) -> float:
    """Linear warm-up then inverse square-root decay, peaking at ``step = n_warmup``."""
    if step < 1:
        raise ConfigurationError(f"warmup schedule starts at step 1, got {step}")
    return hidden_dim ** -0.5 * min(step ** -0.5, step * n_warmup ** -1.5)


def should_stop(history, window: int = 10, patience: int = 5) -> bool:
    """Pure early-stopping rule over a loss history.

    C(e) holds when loss[e] >= mean(loss[e-window:e]); training stops once C has
    held for ``patience`` consecutive epochs.
    """
    streak = 0
    for e in range(len(history)):
        if e >= window and history[e] >= sum(history[e - window:e]) / window:
            streak += 1
        else:
            streak = 0
    return streak >= patience


@dataclass
class EarlyStopper:
    window: int = 10
    patience: int = 5
    history: list = field(default_factory=list)


def early_stop(stopper: EarlyStopper, new_epoch_loss: float) -> str:
    stopper.history.append(float(new_epoch_loss))
    return "stop" if should_stop(stopper.history, stopper.window, stopper.patience) else "continue"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 60
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    scheduler: str = "constant"
    n_warmup: int = 100
    seed: int = 0
    early_stopping: bool = True
    stop_metric: str = "val_loss"

    def validate(self):
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ConfigurationError("batch_size >= 1 and max_epochs >= 0 required")
        if not LR_RANGE[0] <= self.learning_rate <= LR_RANGE[1]:
            raise ConfigurationError(f"learning_rate must lie in {LR_RANGE}")
        if self.weight_decay != 0 and not WD_RANGE[0] <= self.weight_decay <= WD_RANGE[1]:
            raise ConfigurationError(f"weight_decay must be 0 or lie in {WD_RANGE}")
        if self.scheduler not in SCHEDULERS:
            raise ConfigurationError(f"scheduler must be one of {SCHEDULERS}")
        if self.n_warmup not in WARMUP_CHOICES:
            raise ConfigurationError(f"n_warmup must be one of {WARMUP_CHOICES}")
        if self.stop_metric not in ("val_loss", "train_loss"):
            raise ConfigurationError("stop_metric must be 'val_loss' or 'train_loss'")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown train settings: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    report: MetricsReport
    lr: float

    def row(self):
        return (self.epoch, self.train_loss, self.val_loss, self.report.accuracy, self.report.kappa,
                self.report.macro_f1, self.lr)


@dataclass
class FitResult:
    model: Model
    history: list
    best_epoch: Optional[int]
    stopped_early: bool

    @property
    def best(self) -> Optional[EpochRecord]:
        return None if self.best_epoch is None else self.history[self.best_epoch - 1]


def snapshot(model: Model):
    params = {k: p.data.copy() for k, p in model.named_parameters()}
    buffers = {k: (b.running_mean.copy(), b.running_var.copy(), b.steps)
               for k, b in model.named_buffers()}
    return params, buffers


def restore(model: Model, snap):
    params, buffers = snap
    for k, p in model.named_parameters():
        p.data[...] = params[k]
    for k, b in model.named_buffers():
        b.running_mean, b.running_var, b.steps = buffers[k][0].copy(), buffers[k][1].copy(), buffers[k][2]


def evaluate(model: Model, x, y, batch_size: int = 256):
    """(loss, MetricsReport) of ``model`` on arrays ``x`` and one-hot ``y``."""
    logits = predict_logits(model, x, batch_size)
    return cross_entropy_value(logits, y), metrics(logits.argmax(1), y.argmax(1), y.shape[1])


class Trainer:
    """Epoch-at-a-time training loop; :func:`fit` drives it to completion.

    ``train_set`` and ``val_set`` are ``(X, Y)`` pairs with one-hot ``Y``.
    """

    def __init__(self, model: Model, train_set, val_set, config: TrainConfig = TrainConfig(),
                 log_path=None):
        config.validate()
        self.x_tr, self.y_tr = (np.asarray(a, dtype=float) for a in train_set)
        self.x_va, self.y_va = (np.asarray(a, dtype=float) for a in val_set)
        if len(self.x_tr) == 0 or len(self.x_va) == 0:
            raise ContractError("fit needs non-empty training and validation sets")
        _check_one_hot(self.y_tr)
        _check_one_hot(self.y_va)
        self.model, self.config, self.log_path = model, config, log_path
        self.rng = np.random.default_rng(config.seed)
        self.params = model.parameters()
        self.state = AdamState.for_params(self.params, config.learning_rate, config.weight_decay)
        self.stopper = EarlyStopper()
        self.history: list[EpochRecord] = []
        self.best_kappa, self.best_epoch, self._best = -math.inf, None, None
        self.stopped_early = False
        self.step = 0

    @property
    def done(self):
        return self.stopped_early or len(self.history) >= self.config.max_epochs

    def _lr(self):
        if self.config.scheduler == "warmup":
            return warmup_lr(self.step, self.model.spec.hidden_dim, self.config.n_warmup)
        return self.config.learning_rate

    def run_epoch(self) -> EpochRecord:
        model, cfg = self.model, self.config
        epoch = len(self.history) + 1
        n = len(self.x_tr)
        order = self.rng.permutation(n)
        total, seen = 0.0, 0
        lr_t = self._lr() if self.step else cfg.learning_rate
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if len(idx) < 2 <= n:
                continue  # a single-sample batch would break batch statistics
            self.step += 1
            lr_t = self._lr()
            model.zero_grad()
            with Tape() as tape:
                loss = cross_entropy(forward(model, self.x_tr[idx], "train", self.rng).logits,
                                     self.y_tr[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite training loss {value} at epoch {epoch}, step {self.step} (lr={lr_t:.3g})")
            backward(loss, tape)
            adam_step(self.params, [p.grad for p in self.params], self.state, lr_t)
            total += value * len(idx)
            seen += len(idx)
        val_loss, report = evaluate(model, self.x_va, self.y_va)
        if not math.isfinite(val_loss):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        rec = EpochRecord(epoch, total / max(seen, 1), val_loss, report, lr_t)
        self.history.append(rec)
        if report.kappa > self.best_kappa:
            self.best_kappa, self.best_epoch, self._best = report.kappa, epoch, snapshot(model)
        if self.log_path is not None:
            write_log(self.history, self.log_path)
        if cfg.early_stopping:
            watched = val_loss if cfg.stop_metric == "val_loss" else rec.train_loss
            self.stopped_early = early_stop(self.stopper, watched) == "stop"
        return rec

    def finish(self) -> FitResult:
        """Restore the best-kappa parameters and return the run summary."""
        if self._best is not None:
            restore(self.model, self._best)
        if self.log_path is not None and not self.history:
            write_log(self.history, self.log_path)
        return FitResult(self.model, self.history, self.best_epoch, self.stopped_early)


def fit(model: Model, train_set, val_set, config: TrainConfig = TrainConfig(),
        log_path=None, on_epoch: Optional[Callable[[EpochRecord], bool]] = None) -> FitResult:
    """Mini-batch Adam training with per-epoch validation.

    Stops at ``max_epochs`` or when early stopping fires, then restores the
    parameters with the best validation kappa. ``on_epoch`` may return False
    to end training early.
    """
    trainer = Trainer(model, train_set, val_set, config, log_path)
    while not trainer.done:
        rec = trainer.run_epoch()
        if on_epoch is not None and on_epoch(rec) is False:
            break
    return trainer.finish()


def write_log(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for rec in history:
            w.writerow([rec.epoch] + [repr(float(v)) for v in rec.row()[1:]])
