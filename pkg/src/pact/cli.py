"""Config-driven command line for the storm-surge emulation pipeline.

Commands: ``gen-data``, ``train``, ``predict``, ``evaluate``,
``diagnose-peaks``.  Option values resolve as flags > environment
(``PACT_<NAME>``) > config file (flat JSON) > built-in defaults, and every
command writes a ``resolved_config.json`` echo so a run can be replayed
exactly.  Exit codes: 0 success, 2 configuration/input error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .data import (ConfigError, DatasetManifest, NormStats, load_station_samples,
                   normalize_samples, fit_norm_stats, read_manifest, read_surge_csv,
                   split_dataset, validate_manifest)
from .evaluation import (DEFAULT_CLUSTER_GAP_H, DEFAULT_EVENT_QUANTILE,
                         DEFAULT_MIN_BIN_COUNT, DEFAULT_MIN_DURATION_H,
                         DEFAULT_PAIR_TOLERANCE_H, DEFAULT_SEVERITY_BINS,
                         DEFAULT_SMOOTH_WINDOW, HourlySeries, binned_peak_rmse,
                         extract_events, kde_density, overall_metrics, pair_events,
                         peak_sample_metrics, peak_subset_metrics, reconstruct_hourly,
                         silverman_bandwidth)
from .figures import density_svg, peak_scatter_svg, severity_svg
from .loss import LossConfig
from .model import (Batch, PactConfig, build_batch, init_model, load_checkpoint,
                    predict as model_predict, save_checkpoint)
from .numerics import ShapeError
from .synth import SynthConfig, synthesize_dataset
from .train import NumericalDivergence, TrainConfig, train, write_history_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
ENV_PREFIX = "PACT_"
METRIC_FRACTIONS = (0.10, 0.05, 0.01)


def _fmt(x: float) -> str:
    return repr(float(x))


class Resolver:
    """flags > environment > config file > defaults, with an echo trail."""

    def __init__(self, args: argparse.Namespace, command: str):
        self.args = args
        self.resolved: dict = {"command": command}
        self.file_cfg: dict = {}
        cfg_path = getattr(args, "config", None)
        if cfg_path:
            path = Path(cfg_path)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            try:
                self.file_cfg = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
            if not isinstance(self.file_cfg, dict):
                raise ConfigError(f"config file {path} must hold a JSON object")

    def get(self, key: str, default, cast=None):
        value = getattr(self.args, key, None)
        if value is None:
            env = os.environ.get(ENV_PREFIX + key.upper())
            if env is not None:
                value = env
            elif key in self.file_cfg:
                value = self.file_cfg[key]
            else:
                value = default
        if value is not None and cast is not None:
            if cast is bool and isinstance(value, str):
                value = value.strip().lower() in ("1", "true", "yes", "on")
            else:
                value = cast(value)
        self.resolved[key] = value
        return value

    def echo(self, out_dir: Path, extra: dict | None = None) -> None:
        doc = dict(self.resolved)
        if extra:
            doc.update(extra)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "resolved_config.json").write_text(
            json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def _say(args, message: str) -> None:
    if not getattr(args, "quiet", False):
        print(message)


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    r = Resolver(args, "gen-data")
    out_dir = Path(r.get("out", "dataset", cast=str))
    seed = r.get("seed", 0, cast=int)
    cfg = SynthConfig(
        dataset_name=r.get("name", "synthetic", cast=str),
        ny=r.get("ny", 8, cast=int), nx=r.get("nx", 8, cast=int),
        years=r.get("years", 6, cast=int),
        future_years=r.get("future_years", 0, cast=int),
        season_days=r.get("season_days", 151, cast=int),
        cadence_hours=r.get("cadence_hours", 6, cast=int),
        n_stations=r.get("stations", 1, cast=int),
        storm_rate=r.get("storm_rate", 4.0, cast=float),
        noise_std=r.get("noise_std", 0.004, cast=float),
        background_wind_sigma=r.get("background_wind_sigma", 2.0, cast=float),
    )
    manifest = synthesize_dataset(cfg, seed, out_dir)
    r.echo(out_dir)

    _say(args, f"dataset {manifest.dataset_name!r}: {len(manifest.years)} seasons, "
               f"grid {manifest.ny}x{manifest.nx}, cadence {manifest.cadence_hours} h")
    for station in manifest.stations:
        samples, skipped = load_station_samples(out_dir, manifest, station.station_id)
        peaks = np.array([s.peak_score for s in samples])
        qs = np.quantile(peaks, [0.5, 0.9, 0.99])
        _say(args, f"  station {station.station_id}: {len(samples)} samples "
                   f"({len(skipped)} origins skipped), peak score "
                   f"p50={qs[0]:.3f} p90={qs[1]:.3f} p99={qs[2]:.3f} m")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _load_and_split(r: Resolver, manifest_path: Path):
    manifest = read_manifest(manifest_path)
    root = manifest_path.parent
    station_id = r.get("station", manifest.stations[0].station_id, cast=str)
    protocol = r.get("protocol", "past_only", cast=str)
    center = r.get("center_pressure", True, cast=bool)
    samples, skipped = load_station_samples(root, manifest, station_id, center=center)
    if not samples:
        raise ConfigError("dataset produced no samples")
    split = split_dataset(samples, manifest, protocol,
                          train_years=r.get("train_years", None, cast=int),
                          val_years=r.get("val_years", None, cast=int))
    return manifest, station_id, split, skipped, center


def cmd_train(args) -> int:
    r = Resolver(args, "train")
    manifest_path = Path(r.get("dataset", None, cast=str) or "")
    if not manifest_path.name:
        raise ConfigError("--dataset is required")
    out_dir = Path(r.get("out", "run", cast=str))
    seed = r.get("seed", 0, cast=int)
    kind = r.get("model", "pact", cast=str)

    manifest, station_id, split, skipped, center = _load_and_split(r, manifest_path)
    stats = fit_norm_stats(split.train)
    train_set = normalize_samples(split.train, stats)
    val_set = normalize_samples(split.val, stats)

    model_config = PactConfig(
        latent_dim=r.get("latent_dim", 64, cast=int),
        sage_layers=r.get("sage_layers", 2, cast=int),
        heads=r.get("heads", 4, cast=int),
        temporal_layers=r.get("temporal_layers", 2, cast=int),
        ff_width=r.get("ff_width", None, cast=int),
        dropout=r.get("dropout", 0.1, cast=float),
        tail_clip=r.get("tail_clip", 1.0, cast=float),
        leaky_slope=r.get("leaky_slope", 0.01, cast=float),
        use_dual_head=r.get("use_dual_head", True, cast=bool),
    )
    loss_kind = r.get("loss", "peak_aware", cast=str)
    if loss_kind not in ("mse", "peak_aware"):
        raise ConfigError(f"unknown loss {loss_kind!r}")
    loss_config = LossConfig(
        lambda_tail=r.get("lambda_tail", 0.5, cast=float),
        lambda_slope=r.get("lambda_slope", 0.2, cast=float),
        tail_fraction=r.get("tail_fraction", 0.05, cast=float),
        charbonnier_eps=r.get("charbonnier_eps", 0.001, cast=float),
    )
    if not r.get("use_tail", True, cast=bool):
        loss_config.lambda_tail = 0.0
    if not r.get("use_slope", True, cast=bool):
        loss_config.lambda_slope = 0.0
    if loss_kind == "mse":
        loss_config.lambda_tail = 0.0
        loss_config.lambda_slope = 0.0
    train_config = TrainConfig(
        batch_size=r.get("batch_size", 256, cast=int),
        peak_lr=r.get("peak_lr", 0.005, cast=float),
        epochs=r.get("epochs", 300, cast=int),
        weight_decay=r.get("weight_decay", 1e-5, cast=float),
        warmup_epochs=r.get("warmup_epochs", 5, cast=int),
        min_lr=r.get("min_lr", 1e-6, cast=float),
        seed=seed,
        decoupled_decay=r.get("decoupled_decay", False, cast=bool),
    )

    out_dir.mkdir(parents=True, exist_ok=True)
    every = max(1, train_config.epochs // 10)

    def progress(row):
        if row["epoch"] % every == 0 or row["epoch"] == train_config.epochs - 1:
            _say(args, f"  epoch {row['epoch']:>4} total={row['total']:.6f} "
                       f"val_rmse={row['val_rmse']:.6f} lr={row['lr']:.2e}")

    model = init_model(kind, model_config, seed)
    _say(args, f"training {kind} on {manifest.dataset_name}/{station_id}: "
               f"{len(train_set)} train / {len(val_set)} val samples, "
               f"{len(skipped)} origins skipped")
    result = train(model, train_set, val_set, train_config, loss_config,
                   log=progress)

    extra = {
        "dataset_name": manifest.dataset_name,
        "station_id": station_id,
        "center_pressure": center,
        "norm_stats": stats.to_dict(),
        "tau_tail": result.tau_tail,
        "loss_config": asdict(loss_config),
        "train_config": asdict(train_config),
        "split_years": {"train": split.train_years, "val": split.val_years,
                        "test": split.test_years},
        "best_epoch": result.best_epoch,
        "best_val_rmse": result.best_val_rmse,
    }
    save_checkpoint(out_dir / "checkpoint.json", result.model, extra)
    write_history_csv(out_dir / "history.csv", result.history)
    r.echo(out_dir, {"samples_train": len(train_set), "samples_val": len(val_set)})
    _say(args, f"best val RMSE {result.best_val_rmse:.6f} m at epoch "
               f"{result.best_epoch}; checkpoint in {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------

def cmd_predict(args) -> int:
    r = Resolver(args, "predict")
    ckpt_path = Path(r.get("checkpoint", None, cast=str) or "")
    manifest_path = Path(r.get("dataset", None, cast=str) or "")
    if not ckpt_path.name or not manifest_path.name:
        raise ConfigError("--checkpoint and --dataset are required")
    out_dir = Path(r.get("out", "predictions", cast=str))
    out_dir.mkdir(parents=True, exist_ok=True)

    model, extra = load_checkpoint(ckpt_path)
    manifest = read_manifest(manifest_path)
    root = manifest_path.parent
    station_id = r.get("station", extra.get("station_id"), cast=str)
    if station_id is None:
        raise ConfigError("checkpoint carries no station and none was given")
    manifest.station(station_id)   # existence check
    stats = NormStats.from_dict(extra["norm_stats"])
    center = bool(extra.get("center_pressure", True))

    years_arg = r.get("years", None)
    if years_arg:
        years = [int(y) for y in (years_arg.split(",") if isinstance(years_arg, str)
                                  else years_arg)]
    else:
        years = [e.year for e in manifest.years]

    chunk = r.get("chunk_size", 512, cast=int)
    written = []
    for year in years:
        t0 = time.perf_counter()
        samples, _ = load_station_samples(root, manifest, station_id,
                                          years=[year], center=center)
        if not samples:
            raise ConfigError(f"year {year} yields no samples")
        samples = normalize_samples(samples, stats)
        batch_all = build_batch(samples)
        preds = np.empty((len(samples), 6))
        for lo in range(0, len(samples), chunk):
            hi = min(len(samples), lo + chunk)
            sub = Batch(features=batch_all.features[lo:hi],
                        station=batch_all.station[lo:hi],
                        targets=batch_all.targets[lo:hi],
                        peak_scores=batch_all.peak_scores[lo:hi],
                        topology=batch_all.topology)
            preds[lo:hi] = model_predict(model, sub)
        series = reconstruct_hourly([(s.origin_time, preds[i])
                                     for i, s in enumerate(samples)])
        rel = f"predictions_{station_id}_{year}.csv"
        rows = ["hour,pred_m"]
        for hour, value in zip(series.hours[series.mask],
                               series.values[series.mask]):
            rows.append(f"{int(hour)},{_fmt(value)}")
        (out_dir / rel).write_text("\n".join(rows) + "\n")
        written.append(rel)
        _say(args, f"  year {year}: {int(series.mask.sum())} hours in "
                   f"{time.perf_counter() - t0:.2f} s -> {rel}")
    r.echo(out_dir, {"files": written})
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _series_from_csv(path: Path, column: str) -> HourlySeries:
    if column == "pred_m":
        lines = Path(path).read_text().strip().splitlines()
        if lines[0].strip() != "hour,pred_m":
            raise ConfigError(f"{path}: unexpected prediction header {lines[0]!r}")
        hours = np.array([int(line.split(",")[0]) for line in lines[1:]])
        values = np.array([float(line.split(",")[1]) for line in lines[1:]])
    else:
        hours, values = read_surge_csv(Path(path))
    if hours.size == 0:
        raise ConfigError(f"{path}: empty series")
    start, stop = int(hours.min()), int(hours.max())
    full = np.zeros(stop - start + 1)
    mask = np.zeros(stop - start + 1, dtype=bool)
    full[hours - start] = values
    mask[hours - start] = True
    return HourlySeries(start_hour=start, values=full, mask=mask)


def _series_pairs(r: Resolver) -> list[tuple[HourlySeries, HourlySeries]]:
    preds = r.get("pred", None)
    gts = r.get("gt", None)
    if not preds or not gts:
        raise ConfigError("--pred and --gt are required")
    if isinstance(preds, str):
        preds = preds.split(",")
    if isinstance(gts, str):
        gts = gts.split(",")
    if len(preds) != len(gts):
        raise ConfigError(f"{len(preds)} prediction files vs {len(gts)} truth files")
    return [(_series_from_csv(Path(p), "pred_m"), _series_from_csv(Path(g), "surge_m"))
            for p, g in zip(preds, gts)]


def cmd_evaluate(args) -> int:
    from .evaluation import _aligned  # module-private on purpose; reused here
    r = Resolver(args, "evaluate")
    out_dir = Path(r.get("out", "evaluation", cast=str))
    per_sample = r.get("per_sample", False, cast=bool)
    pairs = _series_pairs(r)

    aligned = [_aligned(p, g) for p, g in pairs]
    pred_all = np.concatenate([a[0] for a in aligned])
    gt_all = np.concatenate([a[1] for a in aligned])
    err = pred_all - gt_all
    pooled_pred = HourlySeries(0, pred_all)
    pooled_gt = HourlySeries(0, gt_all)

    report = {
        "mode": "per_sample" if per_sample else "per_hour",
        "hours": int(gt_all.size),
        "overall": {"rmse": float(np.sqrt(np.mean(err * err))),
                    "mae": float(np.mean(np.abs(err)))},
        "peaks": {},
    }
    for fraction in METRIC_FRACTIONS:
        if per_sample:
            merged = _pool_sample_blocks(pairs, fraction)
            report["peaks"][f"{fraction:.2f}"] = merged.to_dict()
        else:
            block = peak_subset_metrics(pooled_pred, pooled_gt, fraction)
            report["peaks"][f"{fraction:.2f}"] = block.to_dict()

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.json").write_text(json.dumps(report, indent=2,
                                                     sort_keys=True) + "\n")
    r.echo(out_dir)
    _say(args, f"overall rmse={report['overall']['rmse']:.6f} "
               f"mae={report['overall']['mae']:.6f} over {report['hours']} hours")
    return EXIT_OK


def _pool_sample_blocks(pairs, fraction):
    """Per-sample peak metrics over windows pooled across all series pairs."""
    from .evaluation import _aligned, _metric_block
    from .loss import lower_quantile
    windows = []
    for pred, gt in pairs:
        p, g, hours = _aligned(pred, gt)
        lookup_p = dict(zip(hours.tolist(), p.tolist()))
        lookup_g = dict(zip(hours.tolist(), g.tolist()))
        first = int(hours.min())
        start = first + (-first) % 6
        for origin in range(start, int(hours.max()) + 1, 6):
            span = [origin + k for k in range(6)]
            if all(h in lookup_g for h in span):
                gt_win = np.array([lookup_g[h] for h in span])
                pred_win = np.array([lookup_p[h] for h in span])
                windows.append((float(gt_win.max()), pred_win, gt_win))
    if not windows:
        raise ConfigError("no complete windows available for per-sample metrics")
    cutoff = lower_quantile([w[0] for w in windows], 1.0 - fraction)
    chosen = [w for w in windows if w[0] >= cutoff]
    return _metric_block(np.concatenate([w[1] for w in chosen]),
                         np.concatenate([w[2] for w in chosen]))


# ---------------------------------------------------------------------------
# diagnose-peaks
# ---------------------------------------------------------------------------

def cmd_diagnose_peaks(args) -> int:
    r = Resolver(args, "diagnose-peaks")
    out_dir = Path(r.get("out", "diagnostics", cast=str))
    out_dir.mkdir(parents=True, exist_ok=True)
    quantile = r.get("q", DEFAULT_EVENT_QUANTILE, cast=float)
    gap_h = r.get("gap_hours", DEFAULT_CLUSTER_GAP_H, cast=int)
    min_dur = r.get("min_duration_hours", DEFAULT_MIN_DURATION_H, cast=int)
    tolerance = r.get("tolerance_hours", DEFAULT_PAIR_TOLERANCE_H, cast=int)
    n_bins = r.get("bins", DEFAULT_SEVERITY_BINS, cast=int)
    smooth = r.get("smooth_window", DEFAULT_SMOOTH_WINDOW, cast=int)
    min_count = r.get("min_bin_count", DEFAULT_MIN_BIN_COUNT, cast=int)
    bandwidth_arg = r.get("bandwidth", None, cast=float)
    pairs_of_series = _series_pairs(r)

    all_pairs = []
    gt_event_count = pred_event_count = 0
    for pred_series, gt_series in pairs_of_series:
        gt_events = extract_events(gt_series, quantile, gap_h, min_dur)
        pred_events = extract_events(pred_series, quantile, gap_h, min_dur)
        gt_event_count += len(gt_events)
        pred_event_count += len(pred_events)
        all_pairs.extend(pair_events(gt_events, pred_events, tolerance))

    bundle = {
        "constants": {"q": quantile, "gap_hours": gap_h,
                      "min_duration_hours": min_dur,
                      "pair_tolerance_hours": tolerance,
                      "min_bin_count": min_count,
                      "smooth_window": smooth, "bins": n_bins},
        "gt_events": gt_event_count,
        "pred_events": pred_event_count,
        "paired": len(all_pairs),
        "empty": not all_pairs,
    }

    pair_rows = ["gt_peak,pred_peak,gt_time,pred_time"]
    for pair in all_pairs:
        pair_rows.append(f"{_fmt(pair.gt.peak)},{_fmt(pair.pred.peak)},"
                         f"{pair.gt.peak_time},{pair.pred.peak_time}")
    (out_dir / "paired_peaks.csv").write_text("\n".join(pair_rows) + "\n")

    if all_pairs:
        gt_peaks = np.array([p.gt.peak for p in all_pairs])
        pred_peaks = np.array([p.pred.peak for p in all_pairs])
        bandwidth = bandwidth_arg if bandwidth_arg else silverman_bandwidth(gt_peaks)
        bundle["kde_bandwidth"] = float(bandwidth)
        lo = min(gt_peaks.min(), pred_peaks.min()) - 3 * bandwidth
        hi = max(gt_peaks.max(), pred_peaks.max()) + 3 * bandwidth
        grid = np.linspace(lo, hi, 241)
        f_gt = kde_density(gt_peaks, bandwidth, grid)
        f_pred = kde_density(pred_peaks, bandwidth, grid)
        density_rows = ["x,f_gt,f_pred"]
        for x, a, b in zip(grid, f_gt, f_pred):
            density_rows.append(f"{_fmt(x)},{_fmt(a)},{_fmt(b)}")
        (out_dir / "density.csv").write_text("\n".join(density_rows) + "\n")

        try:
            curve = binned_peak_rmse(all_pairs, n_bins, smooth, min_count)
        except ConfigError as exc:
            curve = []
            bundle["severity_curve_note"] = str(exc)
        rmse_rows = ["bin_center,rmse,count"]
        for center, rmse, count in curve:
            rmse_rows.append(f"{_fmt(center)},{_fmt(rmse)},{count}")
        (out_dir / "binned_rmse.csv").write_text("\n".join(rmse_rows) + "\n")

        peak_scatter_svg(out_dir / "scatter.svg", gt_peaks, pred_peaks)
        density_svg(out_dir / "density.svg", grid,
                    {"ground truth": f_gt, "model": f_pred})
        severity_svg(out_dir / "severity.svg", curve)
    else:
        (out_dir / "density.csv").write_text("x,f_gt,f_pred\n")
        (out_dir / "binned_rmse.csv").write_text("bin_center,rmse,count\n")

    (out_dir / "bundle.json").write_text(json.dumps(bundle, indent=2,
                                                    sort_keys=True) + "\n")
    r.echo(out_dir)
    _say(args, f"events: {gt_event_count} gt / {pred_event_count} pred, "
               f"{len(all_pairs)} paired")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------

def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat JSON config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--quiet", action="store_true", default=False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pact", description="Storm-surge emulation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="synthesize a desk-scale dataset")
    _common(g)
    g.add_argument("--name")
    g.add_argument("--years", type=int, help="historical seasons")
    g.add_argument("--future-years", dest="future_years", type=int)
    g.add_argument("--season-days", dest="season_days", type=int)
    g.add_argument("--cadence-hours", dest="cadence_hours", type=int)
    g.add_argument("--ny", type=int)
    g.add_argument("--nx", type=int)
    g.add_argument("--stations", type=int)
    g.add_argument("--storm-rate", dest="storm_rate", type=float)
    g.add_argument("--noise-std", dest="noise_std", type=float)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one model for one station")
    _common(t)
    t.add_argument("--dataset", help="path to manifest.json")
    t.add_argument("--station")
    t.add_argument("--protocol", choices=("past_only", "future_period", "all_year"))
    t.add_argument("--train-years", dest="train_years", type=int)
    t.add_argument("--val-years", dest="val_years", type=int)
    t.add_argument("--model", choices=("pact", "stgnn", "simple_gnn"))
    t.add_argument("--loss", choices=("mse", "peak_aware"))
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--peak-lr", dest="peak_lr", type=float)
    t.add_argument("--weight-decay", dest="weight_decay", type=float)
    t.add_argument("--warmup-epochs", dest="warmup_epochs", type=int)
    t.add_argument("--min-lr", dest="min_lr", type=float)
    t.add_argument("--latent-dim", dest="latent_dim", type=int)
    t.add_argument("--sage-layers", dest="sage_layers", type=int)
    t.add_argument("--heads", type=int)
    t.add_argument("--temporal-layers", dest="temporal_layers", type=int)
    t.add_argument("--ff-width", dest="ff_width", type=int)
    t.add_argument("--dropout", type=float)
    t.add_argument("--tail-clip", dest="tail_clip", type=float)
    t.add_argument("--lambda-tail", dest="lambda_tail", type=float)
    t.add_argument("--lambda-slope", dest="lambda_slope", type=float)
    t.add_argument("--tail-fraction", dest="tail_fraction", type=float)
    t.add_argument("--center-pressure", dest="center_pressure",
                   action=argparse.BooleanOptionalAction, default=None)
    t.add_argument("--dual-head", dest="use_dual_head",
                   action=argparse.BooleanOptionalAction, default=None)
    t.add_argument("--tail-term", dest="use_tail",
                   action=argparse.BooleanOptionalAction, default=None)
    t.add_argument("--slope-term", dest="use_slope",
                   action=argparse.BooleanOptionalAction, default=None)
    t.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="emit hourly trajectories from a checkpoint")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--dataset")
    p.add_argument("--station")
    p.add_argument("--years", help="comma-separated season years (default: all)")
    p.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="metrics report for prediction/truth series")
    _common(e)
    e.add_argument("--pred", action="append", help="prediction CSV (repeatable)")
    e.add_argument("--gt", action="append", help="ground-truth surge CSV (repeatable)")
    e.add_argument("--per-sample", dest="per_sample",
                   action=argparse.BooleanOptionalAction, default=None,
                   help="select peak subsets by 6-hour-window peaks")
    e.set_defaults(func=cmd_evaluate)

    d = sub.add_parser("diagnose-peaks", help="event-level peak diagnostics bundle")
    _common(d)
    d.add_argument("--pred", action="append")
    d.add_argument("--gt", action="append")
    d.add_argument("--q", type=float)
    d.add_argument("--gap-hours", dest="gap_hours", type=int)
    d.add_argument("--min-duration-hours", dest="min_duration_hours", type=int)
    d.add_argument("--tolerance-hours", dest="tolerance_hours", type=int)
    d.add_argument("--bins", type=int)
    d.add_argument("--smooth-window", dest="smooth_window", type=int)
    d.add_argument("--min-bin-count", dest="min_bin_count", type=int)
    d.add_argument("--bandwidth", type=float)
    d.set_defaults(func=cmd_diagnose_peaks)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ShapeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalDivergence as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
