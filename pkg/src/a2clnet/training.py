"""Losses, optimizers and the mini-batch training loop."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from dataclasses import fields as fields_of
from enum import Enum
from typing import Dict, List, Optional

import numpy as np

from . import layers as L
from .errors import ConfigurationError, DomainError, NonFiniteError, TrainingDiverged
from .init import InitScheme
from .tensor import Rng, as_tensor, tune_allocator

log = logging.getLogger(__name__)

LR_RANGE = (0.001, 0.1)
BATCH_RANGE = (1, 128)
EPOCH_RANGE = (100, 5000)
CLIP_NORM = 5.0
EVAL_CHUNK = 512


class LossMetric(str, Enum):
    MSE = "MSE"
    CROSS_ENTROPY = "CrossEntropy"
    MAPE = "MAPE"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        norm = str(value).replace("-", "").replace("_", "").lower()
        for member in cls:
            if norm == member.value.lower():
                return member
        raise ConfigurationError(f"unknown loss metric {value!r}; choose from {[m.value for m in cls]}")


@dataclass(frozen=True)
class HyperParams:
    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 150
    init_scheme: InitScheme = InitScheme.XAVIER
    loss_metric: LossMetric = LossMetric.MSE

    def __post_init__(self):
        object.__setattr__(self, "init_scheme", InitScheme.parse(self.init_scheme))
        object.__setattr__(self, "loss_metric", LossMetric.parse(self.loss_metric))
        object.__setattr__(self, "learning_rate", float(self.learning_rate))
        object.__setattr__(self, "batch_size", int(self.batch_size))
        object.__setattr__(self, "epochs", int(self.epochs))
        self.validate()

    def validate(self):
        lo, hi = LR_RANGE
        if not lo <= self.learning_rate <= hi:
            raise ConfigurationError(f"learning_rate {self.learning_rate} outside [{lo}, {hi}]")
        lo, hi = BATCH_RANGE
        if not lo <= self.batch_size <= hi:
            raise ConfigurationError(f"batch_size {self.batch_size} outside [{lo}, {hi}]")
        lo, hi = EPOCH_RANGE
        if not lo <= self.epochs <= hi:
            raise ConfigurationError(f"epochs {self.epochs} outside [{lo}, {hi}]")

    @classmethod
    def unchecked(cls, **fields) -> "HyperParams":
        """Build without range checks (ablations and tests, e.g. a zero learning rate)."""
        hp = object.__new__(cls)
        defaults = {f.name: f.default for f in fields_of(cls)}
        defaults.update(fields)
        object.__setattr__(hp, "learning_rate", float(defaults["learning_rate"]))
        object.__setattr__(hp, "batch_size", int(defaults["batch_size"]))
        object.__setattr__(hp, "epochs", int(defaults["epochs"]))
        object.__setattr__(hp, "init_scheme", InitScheme.parse(defaults["init_scheme"]))
        object.__setattr__(hp, "loss_metric", LossMetric.parse(defaults["loss_metric"]))
        if hp.batch_size < 1 or hp.epochs < 0 or hp.learning_rate < 0:
            raise ConfigurationError("batch_size must be >= 1, epochs and learning_rate >= 0")
        return hp

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "init_scheme": self.init_scheme.value,
            "loss_metric": self.loss_metric.value,
        }

    @classmethod
    def from_dict(cls, d: dict, checked: bool = True) -> "HyperParams":
        fields = {k: d[k] for k in ("learning_rate", "batch_size", "epochs", "init_scheme", "loss_metric") if k in d}
        return cls(**fields) if checked else cls.unchecked(**fields)


# --------------------------------------------------------------------------
# Losses


def _pair(pred, target):
    pred = as_tensor(pred).reshape(-1)
    target = as_tensor(target).reshape(-1)
    if pred.shape != target.shape:
        raise ConfigurationError(f"prediction length {pred.size} != target length {target.size}")
    if pred.size == 0:
        raise DomainError("loss of an empty batch is undefined")
    return pred, target


def mse_loss(pred, target):
    pred, target = _pair(pred, target)
    r = pred - target
    return float(np.mean(r * r)), 2.0 * r / r.size


def mape_loss(pred, target):
    """Mean absolute percentage error as a fraction (not ×100)."""
    pred, target = _pair(pred, target)
    zero = np.flatnonzero(target == 0)
    if zero.size:
        raise DomainError(f"MAPE undefined for zero targets at indices {zero[:10].tolist()}")
    r = pred - target
    a = np.abs(target)
    return float(np.mean(np.abs(r) / a)), np.sign(r) / a / r.size


def cross_entropy_loss(pred, target):
    """Binary cross-entropy; predictions must lie strictly inside (0, 1).

    Targets may touch the closed interval [0, 1] because min-max scaling maps
    the training extremes exactly onto 0 and 1.
    """
    pred, target = _pair(pred, target)
    if not ((pred > 0) & (pred < 1)).all():
        raise DomainError("cross-entropy needs predictions strictly inside (0, 1); use the sigmoid head")
    if not ((target >= 0) & (target <= 1)).all():
        raise DomainError("cross-entropy needs targets in [0, 1] (min-max normalized loads)")
    n = pred.size
    value = -np.mean(target * np.log(pred) + (1 - target) * np.log1p(-pred))
    grad = (pred - target) / (pred * (1 - pred)) / n
    return float(value), grad


LOSSES = {
    LossMetric.MSE: mse_loss,
    LossMetric.MAPE: mape_loss,
    LossMetric.CROSS_ENTROPY: cross_entropy_loss,
}


def loss(pred, target, metric):
    """``(value, d value / d pred)`` for the chosen metric."""
    return LOSSES[LossMetric.parse(metric)](pred, target)


def head_activation_for(metric) -> str:
    return "sigmoid" if LossMetric.parse(metric) is LossMetric.CROSS_ENTROPY else "linear"


# --------------------------------------------------------------------------
# Optimizers


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k in sorted(grads):
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            if self.lr:
                params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        if self.lr:
            for k in sorted(grads):
                params[k] -= self.lr * grads[k]


OPTIMIZERS = {"adam": Adam, "sgd": SGD}


def clip_by_global_norm(grads, max_norm=CLIP_NORM) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# --------------------------------------------------------------------------
# Reports


def param_checksum(params) -> str:
    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k], dtype="<f8").tobytes())
    return h.hexdigest()


@dataclass
class TrainReport:
    seed: Optional[int]
    hyperparams: dict
    train_loss: List[float] = field(default_factory=list)  # mean over the epoch's mini-batches
    val_loss: List[float] = field(default_factory=list)  # normalized-scale MSE, infer mode
    final_train_loss: float = math.nan  # hp.loss_metric on the whole training split, infer mode
    steps: int = 0
    seconds: float = 0.0
    checksum: str = ""

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "seed": self.seed,
            "hyperparams": self.hyperparams,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "final_train_loss": self.final_train_loss,
            "epochs_run": self.epochs_run,
            "steps": self.steps,
            "checksum": self.checksum,
        }
        if include_timing:
            d["seconds"] = self.seconds
        return d

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), sort_keys=True, indent=1, allow_nan=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for e, tl in enumerate(self.train_loss, start=1):
            vl = self.val_loss[e - 1] if e - 1 < len(self.val_loss) else ""
            w.writerow([e, repr(tl), repr(vl) if vl != "" else ""])
        return buf.getvalue()


# --------------------------------------------------------------------------
# Training loop


def predict(model, X, batch=EVAL_CHUNK) -> np.ndarray:
    """Infer-mode predictions (normalized scale) for a stack of windows."""
    X = as_tensor(X)
    if len(X) == 0:
        return np.zeros(0)
    return np.concatenate([model.forward_with_cache(X[s : s + batch], L.INFER)[0] for s in range(0, len(X), batch)])


class _Objective:
    """Training objective in normalized space; MAPE is taken on denormalized loads."""

    def __init__(self, metric, stats):
        self.metric = LossMetric.parse(metric)
        self.lo, self.span = 0.0, 1.0
        if self.metric is LossMetric.MAPE:
            if stats is None:
                raise ConfigurationError("MAPE training needs normalization stats to denormalize targets")
            self.lo, self.span = stats.load_min, stats.load_range

    def __call__(self, pred, target):
        if self.metric is LossMetric.MAPE:
            value, g = mape_loss(pred * self.span + self.lo, target * self.span + self.lo)
            return value, g * self.span
        return LOSSES[self.metric](pred, target)


def _first_bad_layer(model, grads):
    for layer in model.layers:
        for key in layer.param_shapes():
            if key in grads and not np.isfinite(grads[key]).all():
                return layer.name
    return None


def train(model, dataset, hp: HyperParams, rng: Rng, *, epoch_budget: Optional[int] = None,
          optimizer: str = "adam", clip_norm: Optional[float] = CLIP_NORM,
          on_epoch=None) -> TrainReport:
    """Mini-batch training; ``model.params`` are updated in place.

    ``epoch_budget`` caps the number of epochs (desk-scale runs) without
    touching ``hp``. Each epoch reshuffles the training windows with ``rng``,
    which also drives dropout.
    """
    if optimizer not in OPTIMIZERS:
        raise ConfigurationError(f"unknown optimizer {optimizer!r}; choose from {sorted(OPTIMIZERS)}")
    metric = hp.loss_metric
    if metric is LossMetric.CROSS_ENTROPY and model.head_activation != "sigmoid":
        raise ConfigurationError("cross-entropy training needs a model built with the sigmoid head")
    X, y = dataset.train
    Xv, yv = dataset.val
    if len(X) == 0:
        raise ConfigurationError("training split is empty")
    objective = _Objective(metric, dataset.stats)
    tune_allocator()
    epochs = hp.epochs if epoch_budget is None else min(hp.epochs, int(epoch_budget))
    opt = OPTIMIZERS[optimizer](hp.learning_rate)
    report = TrainReport(seed=model.seed, hyperparams=hp.to_dict())
    n, bs = len(X), hp.batch_size
    shuffle_rng = rng.child(0)
    dropout_rng = rng.child(1)
    start = time.perf_counter()
    for epoch in range(1, epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for s in range(0, n, bs):
            idx = order[s : s + bs]
            try:
                pred, cache = model.forward_with_cache(X[idx], L.TRAIN, dropout_rng)
            except NonFiniteError as exc:
                raise TrainingDiverged(f"epoch {epoch}: non-finite activations in {exc.where or 'model'}",
                                       where=exc.where) from None
            value, dpred = objective(pred, y[idx])
            if not math.isfinite(value):
                raise TrainingDiverged(f"epoch {epoch}: loss is {value}", where="loss")
            grads = model.backward(dpred, cache)
            norm = clip_by_global_norm(grads, clip_norm)
            if not math.isfinite(norm):
                bad = _first_bad_layer(model, grads)
                raise TrainingDiverged(f"epoch {epoch}: non-finite gradient in layer '{bad}'", where=bad)
            opt.step(model.params, grads)
            report.steps += 1
            total += value * len(idx)
        report.train_loss.append(total / n)
        if len(Xv):
            report.val_loss.append(mse_loss(predict(model, Xv), yv)[0])
        else:
            report.val_loss.append(math.nan)
        if on_epoch is not None:
            on_epoch(epoch, report)
    report.final_train_loss = objective(predict(model, X), y)[0]
    report.seconds = time.perf_counter() - start
    report.checksum = param_checksum(model.params)
    model.hyperparams = hp.to_dict()
    if dataset.stats is not None:
        model.normalization = dataset.stats.to_dict()
    return report
