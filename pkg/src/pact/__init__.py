"""Peak-aware cross-attention graph transformer for storm-surge emulation."""

__version__ = "0.1.0"

from .data import (ConfigError, DatasetManifest, ForcingGraph, ForcingSnapshot,
                   NormStats, Sample, StationMeta, assemble_samples,
                   build_grid_graph, center_pressure, fit_norm_stats,
                   normalize_samples, read_manifest, split_dataset)
from .evaluation import (HourlySeries, PairedPeak, PeakEvent, binned_peak_rmse,
                         extract_events, kde_density, overall_metrics, pair_events,
                         peak_subset_metrics, reconstruct_hourly)
from .loss import LossBreakdown, LossConfig, combined_loss, fit_tail_threshold
from .model import (Model, PactConfig, build_batch, init_model, load_checkpoint,
                    pact_forward, save_checkpoint)
from .numerics import Tensor, backward, grad_check, tensor
from .synth import SynthConfig, synthesize_dataset
from .train import TrainConfig, adam_step, lr_at, train

__all__ = [
    "ConfigError", "DatasetManifest", "ForcingGraph", "ForcingSnapshot",
    "HourlySeries", "LossBreakdown", "LossConfig", "Model", "NormStats",
    "PactConfig", "PairedPeak", "PeakEvent", "Sample", "StationMeta",
    "SynthConfig", "Tensor", "TrainConfig", "adam_step", "assemble_samples",
    "backward", "binned_peak_rmse", "build_batch", "build_grid_graph",
    "center_pressure", "combined_loss", "extract_events", "fit_norm_stats",
    "fit_tail_threshold", "grad_check", "init_model", "kde_density",
    "load_checkpoint", "lr_at", "normalize_samples", "overall_metrics",
    "pact_forward", "pair_events", "peak_subset_metrics", "read_manifest",
    "reconstruct_hourly", "save_checkpoint", "split_dataset",
    "synthesize_dataset", "tensor", "train",
]
