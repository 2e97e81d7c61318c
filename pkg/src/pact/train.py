"""Optimisation loop: Adam with weight decay, warmup + cosine schedule.

One run trains one model for one station-dataset pair.  Shuffling is
deterministic per (seed, epoch), the tail threshold is frozen from the
training split before the first step, and the checkpoint kept is the one
with the best validation RMSE (metres, eval mode).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import ConfigError, Sample
from .loss import LossConfig, combined_loss, fit_tail_threshold
from .model import Batch, Model, build_batch, model_forward, predict
from .numerics import Tensor, backward

HISTORY_COLUMNS = ("epoch", "mse", "tail", "slope", "total", "tail_count",
                   "val_rmse", "val_mae", "lr", "seconds")


class NumericalDivergence(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    batch_size: int = 256
    peak_lr: float = 0.005
    epochs: int = 300            # reference protocol; desk runs use ~50
    weight_decay: float = 1e-5
    warmup_epochs: int = 5
    min_lr: float = 1e-6
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    decoupled_decay: bool = False

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch size must be positive")
        if self.epochs < 1:
            raise ConfigError("need at least one epoch")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError("warmup must be shorter than the run")
        if self.min_lr > self.peak_lr:
            raise ConfigError("min lr exceeds peak lr")


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


@dataclass
class TrainResult:
    model: Model
    history: list[dict]
    tau_tail: float | None
    best_epoch: int
    best_val_rmse: float


def lr_at(config: TrainConfig, epoch: int, step_in_epoch: int = 0) -> float:
    """Epoch-granular schedule: linear ramp to peak, then cosine to min lr.

    The ramp reaches the peak at the last warmup epoch and the cosine leg is
    parameterised so the *final* epoch lands exactly on ``min_lr``.
    ``step_in_epoch`` is accepted for signature stability but unused.
    """
    del step_in_epoch
    if not 0 <= epoch < config.epochs:
        raise ConfigError(f"epoch {epoch} outside 0..{config.epochs - 1}")
    warm = config.warmup_epochs
    if warm > 0 and epoch < warm:
        return config.peak_lr * ((epoch + 1) / warm)
    span = config.epochs - 1 - warm
    if span <= 0:
        return config.peak_lr
    x = (epoch - warm) / span
    return config.min_lr + 0.5 * (config.peak_lr - config.min_lr) * (1.0 + np.cos(np.pi * x))


def init_optimizer(model: Model) -> OptimizerState:
    return OptimizerState(
        m={name: np.zeros_like(t.data) for name, t in model.params.items()},
        v={name: np.zeros_like(t.data) for name, t in model.params.items()})


def adam_step(model: Model, grads: dict[str, np.ndarray], state: OptimizerState,
              lr: float, weight_decay: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8,
              decoupled: bool = False) -> None:
    """Bias-corrected Adam update; L2 decay enters through the gradient
    unless ``decoupled`` is set."""
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for name, param in model.params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(param.data)
        if not np.all(np.isfinite(g)):
            raise NumericalDivergence(f"non-finite gradient for parameter {name!r}")
        if weight_decay != 0.0 and not decoupled:
            g = g + weight_decay * param.data
        m = state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        if weight_decay != 0.0 and decoupled:
            update = update + lr * weight_decay * param.data
        param.data = param.data - update


def _stack_split(samples: list[Sample]) -> dict[str, np.ndarray]:
    batch = build_batch(samples)
    return {"features": batch.features, "station": batch.station,
            "targets": batch.targets, "peaks": batch.peak_scores,
            "topology": batch.topology}


def _eval_metrics(model: Model, arrays: dict, chunk: int = 512) -> tuple[float, float]:
    n = arrays["features"].shape[0]
    sq_sum, abs_sum, count = 0.0, 0.0, 0
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        batch = Batch(features=arrays["features"][lo:hi],
                      station=arrays["station"][lo:hi],
                      targets=arrays["targets"][lo:hi],
                      peak_scores=arrays["peaks"][lo:hi],
                      topology=arrays["topology"])
        err = predict(model, batch) - batch.targets
        sq_sum += float((err * err).sum())
        abs_sum += float(np.abs(err).sum())
        count += err.size
    return float(np.sqrt(sq_sum / count)), abs_sum / count


def train(model: Model, train_samples: list[Sample], val_samples: list[Sample],
          train_config: TrainConfig, loss_config: LossConfig,
          log=None) -> TrainResult:
    """Train in place and return the best-validation snapshot.

    ``loss_config.tau_tail`` is fitted here, once, from the training split,
    if it has not been fitted already.
    """
    train_config.validate()
    loss_config.validate()
    if not train_samples:
        raise ConfigError("training split is empty")
    if not val_samples:
        raise ConfigError("validation split is empty")

    if loss_config.tau_tail is None:
        loss_config.tau_tail = fit_tail_threshold(
            [s.peak_score for s in train_samples], loss_config.tail_fraction)

    train_arrays = _stack_split(train_samples)
    val_arrays = _stack_split(val_samples)
    topo = train_arrays["topology"]
    n = train_arrays["features"].shape[0]
    name_of = {id(t): name for name, t in model.params.items()}
    state = init_optimizer(model)

    history: list[dict] = []
    best_rmse = np.inf
    best_epoch = -1
    best_params: dict[str, np.ndarray] = {}

    for epoch in range(train_config.epochs):
        t0 = time.perf_counter()
        lr = lr_at(train_config, epoch)
        rng = np.random.default_rng([train_config.seed, 0xE90C, epoch])
        order = rng.permutation(n)
        sums = {"mse": 0.0, "tail": 0.0, "slope": 0.0, "total": 0.0}
        tail_count = 0
        weight = 0

        for lo in range(0, n, train_config.batch_size):
            idx = order[lo:lo + train_config.batch_size]
            batch = Batch(features=train_arrays["features"][idx],
                          station=train_arrays["station"][idx],
                          targets=train_arrays["targets"][idx],
                          peak_scores=train_arrays["peaks"][idx],
                          topology=topo)
            pred = model_forward(model, batch, training=True, rng=rng)
            total, parts = combined_loss(pred, batch.targets, batch.peak_scores,
                                         loss_config)
            if not np.isfinite(parts.total):
                raise NumericalDivergence(f"non-finite loss at epoch {epoch}")
            grads = backward(total)
            named = {name_of[id(t)]: g for t, g in grads.items() if id(t) in name_of}
            adam_step(model, named, state, lr, train_config.weight_decay,
                      train_config.beta1, train_config.beta2,
                      train_config.adam_eps, train_config.decoupled_decay)
            b = len(idx)
            for key, value in (("mse", parts.mse), ("tail", parts.tail),
                               ("slope", parts.slope), ("total", parts.total)):
                sums[key] += value * b
            tail_count += parts.tail_batch_count
            weight += b

        val_rmse, val_mae = _eval_metrics(model, val_arrays)
        if val_rmse < best_rmse:
            best_rmse = val_rmse
            best_epoch = epoch
            best_params = {k: t.data.copy() for k, t in model.params.items()}
        row = {"epoch": epoch,
               "mse": sums["mse"] / weight, "tail": sums["tail"] / weight,
               "slope": sums["slope"] / weight, "total": sums["total"] / weight,
               "tail_count": tail_count,
               "val_rmse": val_rmse, "val_mae": val_mae, "lr": lr,
               "seconds": time.perf_counter() - t0}
        history.append(row)
        if log is not None:
            log(row)

    for name, tensor in model.params.items():
        tensor.data = best_params[name]
    return TrainResult(model=model, history=history, tau_tail=loss_config.tau_tail,
                       best_epoch=best_epoch, best_val_rmse=best_rmse)


def write_history_csv(path: Path, history: list[dict]) -> None:
    rows = [",".join(HISTORY_COLUMNS)]
    for row in history:
        cells = []
        for col in HISTORY_COLUMNS:
            value = row[col]
            cells.append(str(value) if isinstance(value, int) else repr(float(value)))
        rows.append(",".join(cells))
    Path(path).write_text("\n".join(rows) + "\n")
