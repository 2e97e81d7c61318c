"""Peak-aware training objective: bulk MSE + tail MSE + slope regulariser.

The tail term re-weights samples whose 6-hour ground-truth peak clears a
threshold frozen from the training split; membership never depends on the
prediction, so the whole objective stays smooth in the model output.  The
slope term applies a Charbonnier penalty to first differences along the
horizon axis; its floor value ``eps`` is reported as-is, not subtracted.
All terms are computed in metres.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .data import ConfigError
from .numerics import ShapeError, Tensor


@dataclass
class LossConfig:
    lambda_tail: float = 0.5
    lambda_slope: float = 0.2
    tail_fraction: float = 0.05        # rho
    charbonnier_eps: float = 0.001
    tau_tail: float | None = None      # frozen once from the training split

    def validate(self) -> None:
        if self.lambda_tail < 0.0 or self.lambda_slope < 0.0:
            raise ConfigError("loss weights must be nonnegative")
        if not 0.0 < self.tail_fraction < 1.0:
            raise ConfigError(f"tail fraction must lie in (0, 1), got {self.tail_fraction}")
        if self.charbonnier_eps <= 0.0:
            raise ConfigError("charbonnier eps must be positive")


@dataclass
class LossBreakdown:
    mse: float
    tail: float
    slope: float
    total: float
    tail_batch_count: int


def lower_quantile(values, level: float) -> float:
    """Order-statistic quantile: sorted ascending, index ceil(level*n) - 1.

    The index is clamped to [0, n-1]; no interpolation.  This is the single
    quantile convention shared by the tail threshold and the peak-subset
    metrics.
    """
    arr = np.sort(np.asarray(values, dtype=np.float64))
    if arr.size == 0:
        raise ConfigError("quantile of an empty list")
    idx = math.ceil(level * arr.size) - 1
    return float(arr[min(max(idx, 0), arr.size - 1)])


def fit_tail_threshold(peak_scores, tail_fraction: float) -> float:
    """(1 - rho)-quantile of the training peak scores."""
    if not 0.0 < tail_fraction < 1.0:
        raise ConfigError(f"tail fraction must lie in (0, 1), got {tail_fraction}")
    scores = np.asarray(peak_scores, dtype=np.float64)
    if scores.size == 0:
        raise ConfigError("cannot fit a tail threshold on zero peak scores")
    return lower_quantile(scores, 1.0 - tail_fraction)


def _check_shapes(pred: Tensor, targets: np.ndarray) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.float64)
    if pred.shape != targets.shape or pred.ndim != 2:
        raise ShapeError(f"prediction {pred.shape} vs target {targets.shape}")
    return targets


def mse_loss(pred: Tensor, targets: np.ndarray) -> Tensor:
    """Mean squared error over all batch entries and horizons (m^2)."""
    targets = _check_shapes(pred, targets)
    err = pred - Tensor(targets)
    return (err * err).mean()


def tail_loss(pred: Tensor, targets: np.ndarray, peak_scores: np.ndarray,
              tau_tail: float) -> tuple[Tensor | None, int]:
    """Per-sample MSE averaged over tail members; (None, 0) if none present."""
    targets = _check_shapes(pred, targets)
    peaks = np.asarray(peak_scores, dtype=np.float64)
    members = np.flatnonzero(peaks >= tau_tail)
    if members.size == 0:
        return None, 0
    sub = nm.take_rows(pred, members)
    err = sub - Tensor(targets[members])
    per_sample = (err * err).mean(axis=1)
    return per_sample.mean(), int(members.size)


def slope_loss(pred: Tensor, targets: np.ndarray, eps: float) -> Tensor:
    """Charbonnier penalty on horizon-to-horizon slope errors (floor = eps)."""
    targets = _check_shapes(pred, targets)
    if eps <= 0.0:
        raise ConfigError("charbonnier eps must be positive")
    h = pred.shape[1]
    d_pred = nm.slice_axis(pred, 1, 1, h) - nm.slice_axis(pred, 1, 0, h - 1)
    d_true = np.diff(targets, axis=1)
    err = d_pred - Tensor(d_true)
    return nm.sqrt(err * err + eps * eps).mean()


def combined_loss(pred: Tensor, targets: np.ndarray, peak_scores: np.ndarray,
                  config: LossConfig) -> tuple[Tensor, LossBreakdown]:
    """Total objective plus its reported decomposition.

    With both weights at zero the total is bitwise the plain MSE term (the
    loss-ablation identity); an empty tail set contributes exactly zero.
    """
    config.validate()
    mse = mse_loss(pred, targets)
    total = mse
    tail_value, tail_count = 0.0, 0
    if config.lambda_tail > 0.0:
        if config.tau_tail is None:
            raise ConfigError("tail loss requested but tau_tail was never fitted")
        tail_term, tail_count = tail_loss(pred, targets, peak_scores, config.tau_tail)
        if tail_term is not None:
            total = total + config.lambda_tail * tail_term
            tail_value = float(tail_term.data)
    slope_value = 0.0
    if config.lambda_slope > 0.0:
        slope_term = slope_loss(pred, targets, config.charbonnier_eps)
        total = total + config.lambda_slope * slope_term
        slope_value = float(slope_term.data)
    breakdown = LossBreakdown(mse=float(mse.data), tail=tail_value,
                              slope=slope_value, total=float(total.data),
                              tail_batch_count=tail_count)
    return total, breakdown
