"""Graph construction, sample assembly, normalisation, splits, file I/O."""

import numpy as np
import pytest

from pact.data import (ConfigError, DatasetManifest, ForcingGraph, ForcingSnapshot,
                       NormStats, Sample, StationMeta, YearEntry, assemble_samples,
                       build_grid_graph, center_pressure, fit_norm_stats,
                       normalize_samples, read_forcing_csv, read_manifest,
                       read_surge_csv, snapshot_to_graph, split_dataset,
                       topology_from_edges, write_forcing_csv, write_manifest,
                       write_surge_csv)

STATION = StationMeta("st00", 40.0, -74.0, 2.0)


def _graph(n_nodes=4, seed=0):
    edges = build_grid_graph(2, 2)
    feats = np.random.default_rng(seed).normal(size=(n_nodes, 5))
    return ForcingGraph(node_count=n_nodes, edges=edges, features=feats)


class TestCenterPressure:
    def test_uniform_field(self):
        out = center_pressure(np.array([101325.0, 101325.0, 101325.0]))
        assert np.array_equal(out, np.zeros(3))

    def test_mean_subtraction(self):
        out = center_pressure(np.array([100000.0, 101000.0]))
        assert np.array_equal(out, [-500.0, 500.0])

    def test_idempotent(self):
        p = np.random.default_rng(0).normal(101000.0, 800.0, size=50)
        once = center_pressure(p)
        assert np.allclose(center_pressure(once), once, atol=1e-9)

    def test_zero_mean_relative(self):
        for seed in range(10):
            p = np.random.default_rng(seed).normal(101325.0, 1200.0, size=64)
            out = center_pressure(p)
            assert abs(out.mean()) <= 1e-9 * np.mean(np.abs(p))

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            center_pressure(np.array([]))


class TestGridGraph:
    def test_single_node(self):
        assert build_grid_graph(1, 1).shape == (0, 2)

    def test_2x2(self):
        edges = build_grid_graph(2, 2)
        assert edges.shape == (8, 2)       # 4 undirected edges
        pairs = {tuple(e) for e in edges}
        assert all((b, a) in pairs for a, b in pairs)

    def test_3x3(self):
        assert build_grid_graph(3, 3).shape == (24, 2)   # 12 undirected

    @pytest.mark.parametrize("ny,nx", [(1, 5), (4, 1), (3, 7), (8, 8)])
    def test_edge_count_formula(self, ny, nx):
        edges = build_grid_graph(ny, nx)
        assert edges.shape[0] == 2 * (ny * (nx - 1) + nx * (ny - 1))
        # 4-neighbour property in row-major indexing
        for a, b in edges:
            ra, ca = divmod(int(a), nx)
            rb, cb = divmod(int(b), nx)
            assert abs(ra - rb) + abs(ca - cb) == 1

    def test_zero_extent_rejected(self):
        with pytest.raises(ConfigError):
            build_grid_graph(0, 3)

    def test_topology_slots_cover_edges(self):
        edges = build_grid_graph(3, 4)
        topo = topology_from_edges(12, edges)
        assert topo.degree.sum() == edges.shape[0]
        for a, b in edges:
            assert a in topo.slots[b]


class TestSnapshotToGraph:
    def test_feature_layout_and_centering(self):
        snap = ForcingSnapshot(timestamp=0, ny=2, nx=2,
                               lat=np.array([1.0, 1.0, 2.0, 2.0]),
                               lon=np.array([5.0, 6.0, 5.0, 6.0]),
                               u=np.full(4, 3.0), v=np.full(4, -1.0),
                               p=np.array([100000.0, 100000.0, 102000.0, 102000.0]))
        g = snapshot_to_graph(snap, build_grid_graph(2, 2), center=True)
        assert g.features.shape == (4, 5)
        assert np.array_equal(g.features[:, 4], [-1000.0, -1000.0, 1000.0, 1000.0])
        raw = snapshot_to_graph(snap, build_grid_graph(2, 2), center=False)
        assert np.array_equal(raw.features[:, 4], snap.p)


def _graphs_by_hour(hours, seed=0):
    edges = build_grid_graph(2, 2)
    out = {}
    for k, h in enumerate(hours):
        feats = np.random.default_rng(seed + k).normal(size=(4, 5))
        out[h] = ForcingGraph(4, edges, feats)
    return out


class TestAssembleSamples:
    def test_six_hour_cadence_counts(self):
        graphs = _graphs_by_hour(range(0, 49, 6))
        surge_hours = np.arange(0, 54)
        surge = np.linspace(0.0, 1.0, 54)
        samples, skipped = assemble_samples(graphs, surge_hours, surge, STATION, 1979, 6)
        assert [s.origin_time for s in samples] == [12, 18, 24, 30, 36, 42, 48]
        assert not skipped

    def test_truncated_surge_drops_last_origin(self):
        graphs = _graphs_by_hour(range(0, 49, 6))
        surge_hours = np.arange(0, 51)
        samples, skipped = assemble_samples(graphs, surge_hours,
                                            np.zeros(51), STATION, 1979, 6)
        assert [s.origin_time for s in samples] == [12, 18, 24, 30, 36, 42]
        assert (48, "target horizon unavailable") in skipped

    def test_three_hour_cadence_skips_intermediates(self):
        graphs = _graphs_by_hour([0, 3, 6, 9, 12])
        samples, _ = assemble_samples(graphs, np.arange(0, 18), np.zeros(18),
                                      STATION, 1979, 3)
        assert len(samples) == 1
        sample = samples[0]
        assert sample.origin_time == 12
        assert sample.graphs[0] is graphs[0]
        assert sample.graphs[1] is graphs[6]
        assert sample.graphs[2] is graphs[12]

    def test_missing_interior_snapshot_reported(self):
        graphs = _graphs_by_hour([0, 6, 18, 24])    # hour 12 missing
        samples, skipped = assemble_samples(graphs, np.arange(0, 40), np.zeros(40),
                                            STATION, 1979, 6)
        origins = [s.origin_time for s in samples]
        assert 24 not in origins and 18 not in origins and 12 not in origins
        reasons = dict(skipped)
        assert reasons[18] == "missing forcing snapshot"

    def test_bad_cadence_rejected(self):
        with pytest.raises(ConfigError):
            assemble_samples(_graphs_by_hour([0]), np.arange(4), np.zeros(4),
                             STATION, 1979, 4)

    def test_never_exceeds_surge_span(self):
        rng = np.random.default_rng(7)
        for trial in range(20):
            hours = sorted(rng.choice(range(0, 120, 6), size=12, replace=False))
            graphs = _graphs_by_hour(hours, seed=trial)
            n_surge = int(rng.integers(10, 100))
            samples, _ = assemble_samples(graphs, np.arange(n_surge),
                                          np.zeros(n_surge), STATION, 1979, 6)
            for s in samples:
                assert s.origin_time + 5 <= n_surge - 1

    def test_peak_score_is_target_max(self):
        graphs = _graphs_by_hour(range(0, 25, 6))
        surge = np.random.default_rng(0).normal(size=30)
        samples, _ = assemble_samples(graphs, np.arange(30), surge, STATION, 1979, 6)
        for s in samples:
            assert s.peak_score == s.target.max()


class TestNormalization:
    def _samples(self, seed=0, n=6):
        graphs = _graphs_by_hour(range(0, 6 * (n + 2) + 1, 6), seed=seed)
        hours = np.arange(0, 6 * (n + 2) + 6)
        surge = np.random.default_rng(seed).normal(size=hours.size)
        samples, _ = assemble_samples(graphs, hours, surge, STATION, 1979, 6)
        return samples

    def test_zero_variance_names_feature(self):
        samples = self._samples()
        for g in {id(g): g for s in samples for g in s.graphs}.values():
            g.features[:, 2] = 5.0
        with pytest.raises(ConfigError, match="'u'"):
            fit_norm_stats(samples)

    def test_fitted_stats_zero_out_train_means(self):
        samples = self._samples(seed=3)
        stats = fit_norm_stats(samples)
        normed = normalize_samples(samples, stats)
        feats = np.concatenate([g.features[:, 2:5]
                                for g in {id(g): g for s in normed
                                          for g in s.graphs}.values()])
        assert np.max(np.abs(feats.mean(axis=0))) <= 1e-9
        assert np.allclose(feats.std(axis=0), 1.0, atol=1e-9)

    def test_identity_stats_noop(self):
        samples = self._samples(seed=4)
        normed = normalize_samples(samples, NormStats.identity())
        for before, after in zip(samples, normed):
            for g0, g1 in zip(before.graphs, after.graphs):
                assert np.array_equal(g0.features, g1.features)

    def test_targets_untouched_latlon_only_shifted(self):
        samples = self._samples(seed=5)
        stats = fit_norm_stats(samples)
        normed = normalize_samples(samples, stats)
        for before, after in zip(samples, normed):
            assert np.array_equal(before.target, after.target)
            for g0, g1 in zip(before.graphs, after.graphs):
                # degree spacing survives; only the datum moves
                shifted = g0.features[:, :2] - stats.latlon_datum
                assert np.allclose(g1.features[:, :2], shifted, atol=1e-12)
            # station metadata moves into the same frame
            assert after.station.lat == pytest.approx(
                before.station.lat - stats.latlon_datum[0])
            assert after.station.elevation_m == before.station.elevation_m

    def test_inputs_not_mutated(self):
        samples = self._samples(seed=6)
        copies = [g.features.copy() for s in samples for g in s.graphs]
        normalize_samples(samples, fit_norm_stats(samples))
        for (g, copy) in zip([g for s in samples for g in s.graphs], copies):
            assert np.array_equal(g.features, copy)


def _manifest_with_years(years):
    entries = [YearEntry(year=y, period=p, hours=24, forcing_files={}, surge_files={})
               for y, p in years]
    return DatasetManifest("toy", 6, 2, 2, "test epoch",
                           [STATION], entries, None)


def _samples_for_years(years):
    g = _graph()
    out = []
    for y in years:
        for origin in (12, 18):
            out.append(Sample(origin_time=origin, graphs=(g, g, g), station=STATION,
                              target=np.arange(6.0), peak_score=5.0, year=y))
    return out


class TestSplits:
    def test_past_only_proportions_36(self):
        years = [(1979 + i, "historical") for i in range(36)]
        manifest = _manifest_with_years(years)
        samples = _samples_for_years([y for y, _ in years])
        split = split_dataset(samples, manifest, "past_only")
        assert (len(split.train_years), len(split.val_years), len(split.test_years)) == (22, 7, 7)

    def test_partition_property(self):
        years = [(2000 + i, "historical") for i in range(9)]
        manifest = _manifest_with_years(years)
        samples = _samples_for_years([y for y, _ in years])
        split = split_dataset(samples, manifest, "past_only",
                              train_years=5, val_years=2)
        ids = lambda subset: {id(s) for s in subset}
        assert ids(split.train) | ids(split.val) | ids(split.test) == ids(samples)
        assert not ids(split.train) & ids(split.val)
        assert not ids(split.train) & ids(split.test)
        assert not ids(split.val) & ids(split.test)

    def test_future_period(self):
        years = ([(1979 + i, "historical") for i in range(6)]
                 + [(2070 + i, "future") for i in range(2)])
        manifest = _manifest_with_years(years)
        samples = _samples_for_years([y for y, _ in years])
        split = split_dataset(samples, manifest, "future_period", train_years=5)
        assert split.test_years == [2070, 2071]
        assert split.train_years == [1979, 1980, 1981, 1982, 1983]
        assert split.val_years == [1984]

    def test_future_period_requires_future_years(self):
        years = [(1979 + i, "historical") for i in range(6)]
        manifest = _manifest_with_years(years)
        samples = _samples_for_years([y for y, _ in years])
        with pytest.raises(ConfigError):
            split_dataset(samples, manifest, "future_period")

    def test_all_year_is_evaluation_only(self):
        years = [(1979, "historical"), (2070, "future")]
        manifest = _manifest_with_years(years)
        samples = _samples_for_years([1979, 2070])
        split = split_dataset(samples, manifest, "all_year")
        assert split.train == [] and split.val == []
        assert len(split.test) == len(samples)

    def test_overlapping_counts_rejected(self):
        years = [(1979 + i, "historical") for i in range(4)]
        manifest = _manifest_with_years(years)
        samples = _samples_for_years([y for y, _ in years])
        with pytest.raises(ConfigError):
            split_dataset(samples, manifest, "past_only", train_years=3, val_years=2)

    def test_unknown_protocol(self):
        manifest = _manifest_with_years([(1979, "historical")])
        with pytest.raises(ConfigError):
            split_dataset(_samples_for_years([1979]), manifest, "bogus")


class TestFileRoundtrips:
    def test_forcing_csv(self, tmp_path):
        rng = np.random.default_rng(0)
        snap = ForcingSnapshot(timestamp=42, ny=2, nx=3,
                               lat=rng.normal(size=6), lon=rng.normal(size=6),
                               u=rng.normal(size=6), v=rng.normal(size=6),
                               p=rng.normal(101325.0, 500.0, size=6))
        path = tmp_path / "t000042.csv"
        write_forcing_csv(path, snap)
        back = read_forcing_csv(path, 42, 2, 3)
        for field in ("lat", "lon", "u", "v", "p"):
            assert np.array_equal(getattr(back, field), getattr(snap, field))

    def test_surge_csv(self, tmp_path):
        hours = np.arange(0, 30)
        values = np.random.default_rng(1).normal(size=30) * 0.3
        path = tmp_path / "surge.csv"
        write_surge_csv(path, hours, values)
        h, v = read_surge_csv(path)
        assert np.array_equal(h, hours) and np.array_equal(v, values)

    def test_manifest_roundtrip(self, tmp_path):
        manifest = DatasetManifest(
            "toy", 6, 2, 2, "hours since season start", [STATION],
            [YearEntry(1979, "historical", 24, {0: "f/t0.csv", 6: "f/t6.csv"},
                       {"st00": "s/st00.csv"})],
            {"ib_coeff": -1e-4})
        path = tmp_path / "manifest.json"
        write_manifest(path, manifest)
        back = read_manifest(path)
        assert back.dataset_name == "toy"
        assert back.years[0].forcing_files == {0: "f/t0.csv", 6: "f/t6.csv"}
        assert back.stations[0] == STATION
        assert back.synthetic == {"ib_coeff": -1e-4}

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ConfigError):
            read_surge_csv(path)
        with pytest.raises(ConfigError):
            read_forcing_csv(path, 0, 1, 1)
