"""Shared fixtures: a tiny synthetic dataset reused across test modules."""

import pytest

from pact.data import fit_norm_stats, load_station_samples, normalize_samples, split_dataset
from pact.synth import SynthConfig, synthesize_dataset


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Three 10-day seasons on a 4x4 grid with a couple of storms each."""
    root = tmp_path_factory.mktemp("tiny_dataset")
    cfg = SynthConfig(dataset_name="tiny", ny=4, nx=4, years=3, season_days=10,
                      storm_rate=3.0, noise_std=0.002)
    manifest = synthesize_dataset(cfg, seed=42, out_dir=root)
    return root, manifest


@pytest.fixture(scope="session")
def tiny_splits(tiny_dataset):
    root, manifest = tiny_dataset
    samples, _ = load_station_samples(root, manifest, "st00")
    split = split_dataset(samples, manifest, "past_only", train_years=1, val_years=1)
    stats = fit_norm_stats(split.train)
    return {
        "train": normalize_samples(split.train, stats),
        "val": normalize_samples(split.val, stats),
        "test": normalize_samples(split.test, stats),
        "stats": stats,
    }
