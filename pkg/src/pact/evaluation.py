"""Trajectory reconstruction, bulk/peak metrics, and event-level diagnostics.

Multi-horizon outputs tile the hourly axis exactly (origins sit on a 6 h
grid and each contributes 6 hours), so reconstruction never averages across
windows; missing origins become masked gaps.  Event extraction follows a
peaks-over-threshold recipe: strict exceedance of a high quantile,
declustering by a minimum gap between consecutive exceedances, and a
minimum number of exceedance hours per cluster.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ConfigError
from .loss import lower_quantile

ORIGIN_STRIDE = 6
HORIZONS = 6

DEFAULT_EVENT_QUANTILE = 0.95
DEFAULT_CLUSTER_GAP_H = 24
DEFAULT_MIN_DURATION_H = 3
DEFAULT_PAIR_TOLERANCE_H = 48
DEFAULT_MIN_BIN_COUNT = 5
DEFAULT_SMOOTH_WINDOW = 3
DEFAULT_SEVERITY_BINS = 10


@dataclass
class HourlySeries:
    start_hour: int
    values: np.ndarray
    mask: np.ndarray | None = None   # True where the hour is covered

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size == 0:
            raise ConfigError("hourly series must be a nonempty vector")
        if self.mask is None:
            self.mask = np.ones(self.values.size, dtype=bool)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.values.shape:
                raise ConfigError("mask and values disagree in length")

    @property
    def hours(self) -> np.ndarray:
        return self.start_hour + np.arange(self.values.size)

    def covered_hours(self) -> np.ndarray:
        return self.hours[self.mask]


@dataclass
class PeakEvent:
    start: int          # first exceedance hour
    end: int            # last exceedance hour
    peak: float         # max value over the cluster
    peak_time: int      # hour of the (first) maximum
    duration: int       # number of exceedance hours in the cluster


@dataclass
class PairedPeak:
    gt: PeakEvent
    pred: PeakEvent
    time_delta: int     # |gt.peak_time - pred.peak_time|


@dataclass
class PeakMetricBlock:
    rmse: float
    mae: float
    mean_signed_error: float   # mean(pred - gt); negative = underprediction
    max_abs_error: float
    count: int

    def to_dict(self) -> dict:
        return {"rmse": self.rmse, "mae": self.mae,
                "mean_signed_error": self.mean_signed_error,
                "max_abs_error": self.max_abs_error, "count": self.count}


# ---------------------------------------------------------------------------
# reconstruction and bulk metrics
# ---------------------------------------------------------------------------

def reconstruct_hourly(window_predictions: list[tuple[int, np.ndarray]]) -> HourlySeries:
    """Stitch per-origin 6-hour windows into one hourly series.

    Origins must sit on the 6 h grid and be unique; the windows then tile
    the axis with no overlap, and absent origins leave masked gaps.
    """
    if not window_predictions:
        raise ConfigError("no windows to reconstruct from")
    seen: set[int] = set()
    for origin, values in window_predictions:
        if origin % ORIGIN_STRIDE != 0:
            raise ConfigError(f"origin {origin} is not on the {ORIGIN_STRIDE} h grid")
        if origin in seen:
            raise ConfigError(f"duplicate origin {origin}")
        seen.add(origin)
        if np.asarray(values).shape != (HORIZONS,):
            raise ConfigError(f"window at origin {origin} must have {HORIZONS} values")
    start = min(seen)
    length = max(seen) + HORIZONS - start
    values = np.zeros(length)
    mask = np.zeros(length, dtype=bool)
    for origin, window in window_predictions:
        lo = origin - start
        values[lo:lo + HORIZONS] = window
        mask[lo:lo + HORIZONS] = True
    return HourlySeries(start_hour=start, values=values, mask=mask)


def _aligned(pred: HourlySeries, gt: HourlySeries) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lo = max(pred.start_hour, gt.start_hour)
    hi = min(pred.start_hour + pred.values.size, gt.start_hour + gt.values.size)
    if hi <= lo:
        raise ConfigError("series do not overlap")
    ps = slice(lo - pred.start_hour, hi - pred.start_hour)
    gs = slice(lo - gt.start_hour, hi - gt.start_hour)
    keep = pred.mask[ps] & gt.mask[gs]
    if not keep.any():
        raise ConfigError("no jointly covered hours")
    hours = np.arange(lo, hi)[keep]
    return pred.values[ps][keep], gt.values[gs][keep], hours


def overall_metrics(pred: HourlySeries, gt: HourlySeries) -> tuple[float, float]:
    """(RMSE, MAE) in metres over jointly covered hours."""
    p, g, _ = _aligned(pred, gt)
    err = p - g
    return float(np.sqrt(np.mean(err * err))), float(np.mean(np.abs(err)))


def _metric_block(pred_vals: np.ndarray, gt_vals: np.ndarray) -> PeakMetricBlock:
    err = pred_vals - gt_vals
    return PeakMetricBlock(rmse=float(np.sqrt(np.mean(err * err))),
                           mae=float(np.mean(np.abs(err))),
                           mean_signed_error=float(np.mean(err)),
                           max_abs_error=float(np.max(np.abs(err))),
                           count=int(err.size))


def peak_subset_metrics(pred: HourlySeries, gt: HourlySeries,
                        fraction: float) -> PeakMetricBlock:
    """Metrics over the hours whose ground truth reaches the top fraction.

    Subset membership uses the shared order-statistic quantile convention
    with a >= comparison, mirroring the tail-loss definition.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"fraction must lie in (0, 1), got {fraction}")
    p, g, _ = _aligned(pred, gt)
    cutoff = lower_quantile(g, 1.0 - fraction)
    keep = g >= cutoff
    if not keep.any():
        raise ConfigError("peak subset is empty")
    return _metric_block(p[keep], g[keep])


def peak_sample_metrics(pred: HourlySeries, gt: HourlySeries,
                        fraction: float) -> PeakMetricBlock:
    """Per-sample variant: select whole 6-hour windows by their GT peak."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"fraction must lie in (0, 1), got {fraction}")
    p, g, hours = _aligned(pred, gt)
    by_hour_p = dict(zip(hours.tolist(), p.tolist()))
    by_hour_g = dict(zip(hours.tolist(), g.tolist()))
    windows = []
    first = int(hours.min())
    start = first + (-first) % ORIGIN_STRIDE
    for origin in range(start, int(hours.max()) + 1, ORIGIN_STRIDE):
        span = [origin + k for k in range(HORIZONS)]
        if all(h in by_hour_g for h in span):
            gt_win = np.array([by_hour_g[h] for h in span])
            pred_win = np.array([by_hour_p[h] for h in span])
            windows.append((float(gt_win.max()), pred_win, gt_win))
    if not windows:
        raise ConfigError("no complete windows available for per-sample metrics")
    peaks = [w[0] for w in windows]
    cutoff = lower_quantile(peaks, 1.0 - fraction)
    chosen = [w for w in windows if w[0] >= cutoff]
    pred_vals = np.concatenate([w[1] for w in chosen])
    gt_vals = np.concatenate([w[2] for w in chosen])
    return _metric_block(pred_vals, gt_vals)


# ---------------------------------------------------------------------------
# event extraction and pairing
# ---------------------------------------------------------------------------

def extract_events(series: HourlySeries, quantile: float = DEFAULT_EVENT_QUANTILE,
                   gap_h: int = DEFAULT_CLUSTER_GAP_H,
                   min_duration_h: int = DEFAULT_MIN_DURATION_H,
                   threshold: float | None = None) -> list[PeakEvent]:
    """Declustered exceedance events of one hourly series.

    The threshold defaults to the ``quantile`` of the covered values.
    Exceedance is strict (value > threshold); clusters split whenever the
    gap between consecutive exceedances is larger than ``gap_h``; clusters
    with fewer than ``min_duration_h`` exceedance hours are discarded.
    Masked hours are excluded outright: clusters never bridge a gap.
    """
    if not 0.0 < quantile < 1.0:
        raise ConfigError(f"quantile must lie in (0, 1), got {quantile}")
    covered = series.values[series.mask]
    if covered.size == 0:
        raise ConfigError("series has no covered hours")
    u = lower_quantile(covered, quantile) if threshold is None else float(threshold)

    hours = series.hours
    exceed = series.mask & (series.values > u)
    exc_hours = hours[exceed]
    events: list[PeakEvent] = []
    if exc_hours.size == 0:
        return events

    # masked hours terminate any cluster: exceedances on opposite sides of a
    # coverage gap are split apart regardless of their distance
    covered_idx = np.flatnonzero(series.mask)
    breaks = np.flatnonzero(np.diff(covered_idx) > 1) + 1
    run_id = np.full(series.values.size, -1)
    for rid, run in enumerate(np.split(covered_idx, breaks)):
        run_id[run] = rid

    clusters: list[list[int]] = []
    current: list[int] = []
    prev_hour = None
    prev_run = None
    for h in exc_hours:
        i = h - series.start_hour
        if current and (h - prev_hour > gap_h or run_id[i] != prev_run):
            clusters.append(current)
            current = []
        current.append(int(h))
        prev_hour = h
        prev_run = run_id[i]
    clusters.append(current)

    for cluster in clusters:
        if len(cluster) < min_duration_h:
            continue
        vals = series.values[np.asarray(cluster) - series.start_hour]
        top = int(np.argmax(vals))
        events.append(PeakEvent(start=cluster[0], end=cluster[-1],
                                peak=float(vals[top]), peak_time=cluster[top],
                                duration=len(cluster)))
    return events


def pair_events(gt_events: list[PeakEvent], pred_events: list[PeakEvent],
                tolerance_h: int = DEFAULT_PAIR_TOLERANCE_H) -> list[PairedPeak]:
    """Pair i-th with i-th in time order, then drop gross time mismatches.

    Filtering happens after index pairing; surviving pairs keep their
    original partners.
    """
    pairs = []
    for gt, pred in zip(gt_events, pred_events):
        delta = abs(gt.peak_time - pred.peak_time)
        if delta <= tolerance_h:
            pairs.append(PairedPeak(gt=gt, pred=pred, time_delta=int(delta)))
    return pairs


# ---------------------------------------------------------------------------
# distributional diagnostics
# ---------------------------------------------------------------------------

def silverman_bandwidth(values) -> float:
    """Silverman's rule on the pooled peaks, with a floor for degeneracy."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ConfigError("bandwidth of an empty peak set")
    spread = float(np.std(arr))
    q75, q25 = np.percentile(arr, [75.0, 25.0])
    iqr = float(q75 - q25)
    candidates = [s for s in (spread, iqr / 1.34) if s > 0.0]
    if not candidates:
        return 0.05 * max(1.0, abs(float(np.mean(arr))))
    return 0.9 * min(candidates) * arr.size ** (-0.2)


def kde_density(peaks, bandwidth: float, grid) -> np.ndarray:
    """Gaussian kernel density of the peak magnitudes on ``grid``."""
    arr = np.asarray(peaks, dtype=np.float64)
    if arr.size == 0:
        raise ConfigError("KDE of an empty peak set")
    if bandwidth <= 0.0:
        raise ConfigError(f"bandwidth must be positive, got {bandwidth}")
    grid = np.asarray(grid, dtype=np.float64)
    z = (grid[:, None] - arr[None, :]) / bandwidth
    kernel = np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
    return kernel.sum(axis=1) / (arr.size * bandwidth)


def binned_peak_rmse(pairs: list[PairedPeak], n_bins: int = DEFAULT_SEVERITY_BINS,
                     smooth_window: int = DEFAULT_SMOOTH_WINDOW,
                     min_count: int = DEFAULT_MIN_BIN_COUNT
                     ) -> list[tuple[float, float, int]]:
    """Per-severity RMSE: equal-probability bins of GT peaks, 1st-99th pct.

    Bins with fewer than ``min_count`` events are omitted; the surviving
    curve is smoothed with a centred moving mean (window shrinks at the
    edges).  Returns (bin centre, smoothed RMSE, count) rows.
    """
    if not pairs:
        raise ConfigError("no paired peaks to bin")
    gt = np.array([p.gt.peak for p in pairs])
    pred = np.array([p.pred.peak for p in pairs])
    levels = np.linspace(0.01, 0.99, n_bins + 1)
    edges = np.quantile(gt, levels)
    keep = (gt >= edges[0]) & (gt <= edges[-1])
    gt, pred = gt[keep], pred[keep]
    if gt.size == 0:
        raise ConfigError("no peaks inside the 1st-99th percentile span")
    idx = np.clip(np.searchsorted(edges, gt, side="right") - 1, 0, n_bins - 1)

    centers, rmses, counts = [], [], []
    for b in range(n_bins):
        members = idx == b
        count = int(members.sum())
        if count < min_count:
            continue
        err = pred[members] - gt[members]
        centers.append(float(np.mean(gt[members])))
        rmses.append(float(np.sqrt(np.mean(err * err))))
        counts.append(count)
    if not centers:
        raise ConfigError(f"every severity bin has fewer than {min_count} events")

    half = max(0, smooth_window // 2)
    smoothed = []
    for i in range(len(rmses)):
        lo, hi = max(0, i - half), min(len(rmses), i + half + 1)
        smoothed.append(float(np.mean(rmses[lo:hi])))
    return list(zip(centers, smoothed, counts))
