"""Forcing graphs, training samples, normalisation, splits, and dataset I/O.

A dataset on disk is a manifest JSON plus per-year forcing snapshot CSVs and
per-station hourly surge CSVs.  Winter seasons are independent series: hours
count from each season's own start and no sample ever spans two seasons.
All floats are serialised with ``repr`` so files round-trip bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

FEATURE_NAMES = ("lat", "lon", "u", "v", "p")
NORMALIZED_FEATURES = ("u", "v", "p")  # lat/lon stay in raw degrees
HORIZONS = 6
HISTORY_HOURS = 12
ORIGIN_STRIDE = 6


class ConfigError(ValueError):
    """Invalid configuration or dataset input."""


# ---------------------------------------------------------------------------
# core types
# ---------------------------------------------------------------------------

@dataclass
class ForcingSnapshot:
    """One gridded forcing field: winds (m/s) and sea-level pressure (Pa)."""
    timestamp: int          # hours since season start
    ny: int
    nx: int
    lat: np.ndarray
    lon: np.ndarray
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        n = self.ny * self.nx
        for name in ("lat", "lon", "u", "v", "p"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (n,):
                raise ConfigError(f"snapshot field {name} has {arr.shape}, expected ({n},)")
            setattr(self, name, arr)


@dataclass
class ForcingGraph:
    """One time slice as a graph: 4-neighbour edges plus N x 5 node features."""
    node_count: int
    edges: np.ndarray       # (E, 2) directed, both directions present
    features: np.ndarray    # (N, 5): lat, lon, u, v, p'  (p' in Pa)


@dataclass
class GraphTopology:
    """Neighbour slots derived from an edge list, in edge-list order.

    Slot order is what the aggregation sums over, so building slots from the
    relabelled edge list preserves per-node accumulation order exactly.
    """
    node_count: int
    edges: np.ndarray
    slots: np.ndarray       # (N, S), padded with node_count
    degree: np.ndarray      # (N,)


@dataclass(frozen=True)
class StationMeta:
    """Fixed per-station metadata (the 3-scalar conditioning vector)."""
    station_id: str
    lat: float
    lon: float
    elevation_m: float

    def vector(self) -> np.ndarray:
        return np.array([self.lat, self.lon, self.elevation_m], dtype=np.float64)


@dataclass
class Sample:
    """Three forcing graphs plus the 6-hour surge target at one station."""
    origin_time: int
    graphs: tuple[ForcingGraph, ForcingGraph, ForcingGraph]
    station: StationMeta
    target: np.ndarray      # (6,) metres, hours t .. t+5
    peak_score: float       # max(target)
    year: int

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=np.float64)
        if self.target.shape != (HORIZONS,):
            raise ConfigError(f"target must have {HORIZONS} entries")
        if self.origin_time % ORIGIN_STRIDE != 0:
            raise ConfigError(f"origin {self.origin_time} not on the 6 h grid")
        self.peak_score = float(np.max(self.target))


@dataclass
class NormStats:
    """Training-split feature statistics.

    (u, v, p') are standardised to zero mean / unit variance.  Latitude and
    longitude keep their degree units but are shifted to a training-split
    datum (their mean): without the shift the static coordinate offsets
    drown the weather signal in every downstream representation.  The same
    datum is applied to station metadata so query/key coordinates live in
    one frame.
    """
    mean: np.ndarray             # (3,) for u, v, p'
    std: np.ndarray              # (3,)
    latlon_datum: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @staticmethod
    def identity() -> "NormStats":
        return NormStats(np.zeros(3), np.ones(3), np.zeros(2))

    def to_dict(self) -> dict:
        return {"mean": [float(x) for x in self.mean],
                "std": [float(x) for x in self.std],
                "latlon_datum": [float(x) for x in self.latlon_datum]}

    @staticmethod
    def from_dict(d: dict) -> "NormStats":
        return NormStats(np.asarray(d["mean"], dtype=np.float64),
                         np.asarray(d["std"], dtype=np.float64),
                         np.asarray(d.get("latlon_datum", [0.0, 0.0]),
                                    dtype=np.float64))

    def shift_station(self, station: "StationMeta") -> "StationMeta":
        return StationMeta(station.station_id,
                           station.lat - float(self.latlon_datum[0]),
                           station.lon - float(self.latlon_datum[1]),
                           station.elevation_m)


@dataclass
class YearEntry:
    year: int
    period: str                      # "historical" | "future"
    hours: int                       # last hour of the season (inclusive)
    forcing_files: dict[int, str]    # snapshot hour -> relative path
    surge_files: dict[str, str]      # station id -> relative path


@dataclass
class DatasetManifest:
    dataset_name: str
    cadence_hours: int
    ny: int
    nx: int
    epoch: str
    stations: list[StationMeta]
    years: list[YearEntry]
    synthetic: dict | None = None

    def station(self, station_id: str) -> StationMeta:
        for st in self.stations:
            if st.station_id == station_id:
                return st
        raise ConfigError(f"unknown station {station_id!r}")

    def year_entry(self, year: int) -> YearEntry:
        for entry in self.years:
            if entry.year == year:
                return entry
        raise ConfigError(f"year {year} not in manifest")


@dataclass
class SplitResult:
    train: list[Sample]
    val: list[Sample]
    test: list[Sample]
    train_years: list[int] = field(default_factory=list)
    val_years: list[int] = field(default_factory=list)
    test_years: list[int] = field(default_factory=list)


# ---------------------------------------------------------------------------
# graph construction
# ---------------------------------------------------------------------------

def center_pressure(p: np.ndarray) -> np.ndarray:
    """Remove the instantaneous spatial mean from a pressure field."""
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0:
        raise ConfigError("cannot centre an empty pressure field")
    return p - p.mean()


def build_grid_graph(ny: int, nx: int) -> np.ndarray:
    """Directed edge list of the 4-neighbour grid graph, row-major nodes.

    Both directions of every undirected edge are emitted, adjacent in the
    list, giving 2 * (ny*(nx-1) + nx*(ny-1)) rows.
    """
    if ny < 1 or nx < 1:
        raise ConfigError(f"grid extents must be positive, got {ny}x{nx}")
    edges = []
    for i in range(ny):
        for j in range(nx):
            n = i * nx + j
            if j + 1 < nx:
                edges.append((n, n + 1))
                edges.append((n + 1, n))
            if i + 1 < ny:
                edges.append((n, n + nx))
                edges.append((n + nx, n))
    if not edges:
        return np.zeros((0, 2), dtype=np.int64)
    return np.asarray(edges, dtype=np.int64)


def topology_from_edges(node_count: int, edges: np.ndarray) -> GraphTopology:
    """Neighbour slots filled in edge-list order (padding index = node_count)."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    degree = np.zeros(node_count, dtype=np.int64)
    # an edge row (a, b) means a -> b; slots collect incoming sources per node
    for a, b in edges:
        degree[b] += 1
    width = max(1, int(degree.max()) if node_count else 1)
    slots = np.full((node_count, width), node_count, dtype=np.int64)
    fill = np.zeros(node_count, dtype=np.int64)
    for a, b in edges:
        slots[b, fill[b]] = a
        fill[b] += 1
    return GraphTopology(node_count=node_count, edges=edges, slots=slots,
                         degree=degree)


def snapshot_to_graph(snap: ForcingSnapshot, edges: np.ndarray,
                      center: bool = True) -> ForcingGraph:
    """Assemble node features [lat, lon, u, v, p'] for one snapshot."""
    p_anom = center_pressure(snap.p) if center else np.asarray(snap.p, dtype=np.float64)
    feats = np.column_stack([snap.lat, snap.lon, snap.u, snap.v, p_anom])
    return ForcingGraph(node_count=snap.ny * snap.nx, edges=edges, features=feats)


# ---------------------------------------------------------------------------
# sample assembly
# ---------------------------------------------------------------------------

def assemble_samples(graphs_by_hour: dict[int, ForcingGraph],
                     surge_hours: np.ndarray, surge_values: np.ndarray,
                     station: StationMeta, year: int,
                     cadence_hours: int) -> tuple[list[Sample], list[tuple[int, str]]]:
    """Build one sample per viable origin on the 6 h grid.

    An origin t needs forcing at t-12h, t-6h and t (exact timestamps, no
    interpolation) and surge at t..t+5h.  Skipped origins are reported, not
    silently dropped.
    """
    if cadence_hours not in (3, 6):
        raise ConfigError(f"unsupported forcing cadence {cadence_hours} h")
    if not graphs_by_hour:
        return [], []
    surge_hours = np.asarray(surge_hours, dtype=np.int64)
    surge_values = np.asarray(surge_values, dtype=np.float64)
    surge_at = dict(zip(surge_hours.tolist(), surge_values.tolist()))

    hours = sorted(graphs_by_hour)
    first = ((hours[0] + HISTORY_HOURS + ORIGIN_STRIDE - 1) // ORIGIN_STRIDE) * ORIGIN_STRIDE
    last = hours[-1]
    samples: list[Sample] = []
    skipped: list[tuple[int, str]] = []
    for origin in range(first, last + 1, ORIGIN_STRIDE):
        needed = (origin - HISTORY_HOURS, origin - ORIGIN_STRIDE, origin)
        if any(h not in graphs_by_hour for h in needed):
            skipped.append((origin, "missing forcing snapshot"))
            continue
        target_hours = range(origin, origin + HORIZONS)
        if any(h not in surge_at for h in target_hours):
            skipped.append((origin, "target horizon unavailable"))
            continue
        target = np.array([surge_at[h] for h in target_hours])
        samples.append(Sample(origin_time=origin,
                              graphs=tuple(graphs_by_hour[h] for h in needed),
                              station=station, target=target,
                              peak_score=float(target.max()), year=year))
    return samples, skipped


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------

def fit_norm_stats(train_samples: list[Sample]) -> NormStats:
    """Feature statistics over the unique graphs of the training split."""
    if not train_samples:
        raise ConfigError("cannot fit normalisation on an empty training split")
    seen: dict[int, ForcingGraph] = {}
    for sample in train_samples:
        for graph in sample.graphs:
            seen[id(graph)] = graph
    stacked = np.concatenate([g.features for g in seen.values()], axis=0)
    mean = stacked[:, 2:5].mean(axis=0)
    std = stacked[:, 2:5].std(axis=0)
    for k, name in enumerate(NORMALIZED_FEATURES):
        if std[k] <= 0.0:
            raise ConfigError(f"feature {name!r} has zero variance on the training split")
    return NormStats(mean=mean, std=std,
                     latlon_datum=stacked[:, 0:2].mean(axis=0))


def apply_norm(sample: Sample, stats: NormStats,
               _cache: dict[int, ForcingGraph] | None = None) -> Sample:
    """Standardise (u, v, p'), shift lat/lon to the datum; targets stay in metres."""
    cache = _cache if _cache is not None else {}
    graphs = []
    for graph in sample.graphs:
        found = cache.get(id(graph))
        if found is None:
            feats = graph.features.copy()
            feats[:, 0:2] = feats[:, 0:2] - stats.latlon_datum
            feats[:, 2:5] = (feats[:, 2:5] - stats.mean) / stats.std
            found = ForcingGraph(graph.node_count, graph.edges, feats)
            cache[id(graph)] = found
        graphs.append(found)
    return replace(sample, graphs=tuple(graphs), station=stats.shift_station(sample.station))


def normalize_samples(samples: list[Sample], stats: NormStats) -> list[Sample]:
    cache: dict[int, ForcingGraph] = {}
    return [apply_norm(s, stats, cache) for s in samples]


# ---------------------------------------------------------------------------
# split protocols
# ---------------------------------------------------------------------------

# year-count proportions taken from the reference split definitions
PAST_ONLY_FRACTIONS = (22 / 36, 7 / 36, 7 / 36)
FUTURE_PERIOD_FRACTIONS = (30 / 36, 6 / 36)


def _partition_counts(n: int, train_years: int | None, val_years: int | None,
                      fractions: tuple[float, ...]) -> tuple[int, int]:
    if train_years is not None or val_years is not None:
        t = train_years if train_years is not None else max(1, round(n * fractions[0]))
        v = val_years if val_years is not None else max(1, round(n * fractions[1]))
    else:
        t = max(1, round(n * fractions[0]))
        v = max(1, round(n * fractions[1]))
    if t + v >= n + (0 if len(fractions) == 2 else 0) and len(fractions) == 3:
        raise ConfigError(f"split {t}/{v} leaves no test years out of {n}")
    if t + v > n:
        raise ConfigError(f"split {t}/{v} overlaps: only {n} years available")
    return t, v


def split_dataset(samples: list[Sample], manifest: DatasetManifest, protocol: str,
                  train_years: int | None = None,
                  val_years: int | None = None) -> SplitResult:
    """Partition samples by season year under one of the three protocols.

    ``past_only`` splits the historical years by the 22/7/7 proportions
    (or explicit counts); ``future_period`` splits historical years 30/6 and
    tests on every future year; ``all_year`` is evaluation-only and places
    every sample in the test set.
    """
    period = {e.year: e.period for e in manifest.years}
    hist = sorted({s.year for s in samples if period.get(s.year) == "historical"})
    future = sorted({s.year for s in samples if period.get(s.year) == "future"})
    by_year: dict[int, list[Sample]] = {}
    for s in samples:
        by_year.setdefault(s.year, []).append(s)

    def collect(years: list[int]) -> list[Sample]:
        return [s for y in years for s in by_year.get(y, [])]

    if protocol == "past_only":
        if not hist:
            raise ConfigError("past_only split needs historical years")
        t, v = _partition_counts(len(hist), train_years, val_years, PAST_ONLY_FRACTIONS)
        tr, va, te = hist[:t], hist[t:t + v], hist[t + v:]
        if not te:
            raise ConfigError("past_only split left an empty test range")
    elif protocol == "future_period":
        if not future:
            raise ConfigError("future_period split needs future years in the manifest")
        if not hist:
            raise ConfigError("future_period split needs historical years")
        t, v = _partition_counts(len(hist), train_years, val_years, FUTURE_PERIOD_FRACTIONS)
        if t + v != len(hist):
            # default: validation absorbs the rest of the historical period
            v = len(hist) - t
            if v < 1:
                raise ConfigError("future_period split left no validation years")
        tr, va, te = hist[:t], hist[t:t + v], future
    elif protocol == "all_year":
        tr, va, te = [], [], hist + future
    else:
        raise ConfigError(f"unknown split protocol {protocol!r}")

    return SplitResult(train=collect(tr), val=collect(va), test=collect(te),
                       train_years=tr, val_years=va, test_years=te)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_forcing_csv(path: Path, snap: ForcingSnapshot) -> None:
    rows = ["lat,lon,u,v,p"]
    for k in range(snap.ny * snap.nx):
        rows.append(",".join(_fmt(a[k]) for a in (snap.lat, snap.lon, snap.u, snap.v, snap.p)))
    path.write_text("\n".join(rows) + "\n")


def read_forcing_csv(path: Path, timestamp: int, ny: int, nx: int) -> ForcingSnapshot:
    lines = path.read_text().strip().splitlines()
    if lines[0].strip() != "lat,lon,u,v,p":
        raise ConfigError(f"{path}: unexpected forcing header {lines[0]!r}")
    body = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    if body.shape != (ny * nx, 5):
        raise ConfigError(f"{path}: expected {ny * nx} rows x 5 cols, got {body.shape}")
    return ForcingSnapshot(timestamp=timestamp, ny=ny, nx=nx,
                           lat=body[:, 0], lon=body[:, 1], u=body[:, 2],
                           v=body[:, 3], p=body[:, 4])


def write_surge_csv(path: Path, hours: np.ndarray, values: np.ndarray) -> None:
    rows = ["hour,surge_m"]
    for h, v in zip(hours, values):
        rows.append(f"{int(h)},{_fmt(v)}")
    path.write_text("\n".join(rows) + "\n")


def read_surge_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    lines = path.read_text().strip().splitlines()
    if lines[0].strip() != "hour,surge_m":
        raise ConfigError(f"{path}: unexpected surge header {lines[0]!r}")
    hours, values = [], []
    for line in lines[1:]:
        h, v = line.split(",")
        hours.append(int(h))
        values.append(float(v))
    return np.asarray(hours, dtype=np.int64), np.asarray(values, dtype=np.float64)


def write_manifest(path: Path, manifest: DatasetManifest) -> None:
    doc = {
        "dataset_name": manifest.dataset_name,
        "cadence_hours": manifest.cadence_hours,
        "grid": {"ny": manifest.ny, "nx": manifest.nx},
        "epoch": manifest.epoch,
        "stations": [{"id": s.station_id, "lat": s.lat, "lon": s.lon,
                      "elevation_m": s.elevation_m} for s in manifest.stations],
        "years": [{"year": e.year, "period": e.period, "hours": e.hours,
                   "forcing_files": {str(h): p for h, p in sorted(e.forcing_files.items())},
                   "surge_files": dict(sorted(e.surge_files.items()))}
                  for e in manifest.years],
        "synthetic": manifest.synthetic,
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_manifest(path: Path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"manifest not found: {path}")
    doc = json.loads(path.read_text())
    stations = [StationMeta(station_id=s["id"], lat=float(s["lat"]), lon=float(s["lon"]),
                            elevation_m=float(s["elevation_m"])) for s in doc["stations"]]
    years = [YearEntry(year=int(e["year"]), period=e["period"], hours=int(e["hours"]),
                       forcing_files={int(h): p for h, p in e["forcing_files"].items()},
                       surge_files=dict(e["surge_files"]))
             for e in doc["years"]]
    return DatasetManifest(dataset_name=doc["dataset_name"],
                           cadence_hours=int(doc["cadence_hours"]),
                           ny=int(doc["grid"]["ny"]), nx=int(doc["grid"]["nx"]),
                           epoch=doc["epoch"], stations=stations, years=years,
                           synthetic=doc.get("synthetic"))


def validate_manifest(manifest: DatasetManifest, root: Path) -> None:
    """Check that every referenced file exists and parses."""
    if manifest.cadence_hours not in (3, 6):
        raise ConfigError(f"unsupported cadence {manifest.cadence_hours}")
    for entry in manifest.years:
        for hour, rel in entry.forcing_files.items():
            fp = root / rel
            if not fp.exists():
                raise ConfigError(f"missing forcing file {fp}")
            read_forcing_csv(fp, hour, manifest.ny, manifest.nx)
        for sid, rel in entry.surge_files.items():
            fp = root / rel
            if not fp.exists():
                raise ConfigError(f"missing surge file {fp}")
            read_surge_csv(fp)


def load_year_graphs(root: Path, manifest: DatasetManifest, entry: YearEntry,
                     center: bool = True,
                     edges: np.ndarray | None = None) -> dict[int, ForcingGraph]:
    """Read one season's snapshots and build forcing graphs keyed by hour."""
    if edges is None:
        edges = build_grid_graph(manifest.ny, manifest.nx)
    graphs = {}
    for hour, rel in sorted(entry.forcing_files.items()):
        snap = read_forcing_csv(root / rel, hour, manifest.ny, manifest.nx)
        graphs[hour] = snapshot_to_graph(snap, edges, center=center)
    return graphs


def load_station_samples(root: Path, manifest: DatasetManifest, station_id: str,
                         years: list[int] | None = None, center: bool = True
                         ) -> tuple[list[Sample], list[tuple[int, int, str]]]:
    """Assemble samples for one station across the requested years."""
    station = manifest.station(station_id)
    edges = build_grid_graph(manifest.ny, manifest.nx)
    wanted = set(years) if years is not None else {e.year for e in manifest.years}
    samples: list[Sample] = []
    report: list[tuple[int, int, str]] = []
    for entry in manifest.years:
        if entry.year not in wanted:
            continue
        if station_id not in entry.surge_files:
            raise ConfigError(f"station {station_id!r} has no surge file for {entry.year}")
        graphs = load_year_graphs(root, manifest, entry, center=center, edges=edges)
        hours, values = read_surge_csv(root / entry.surge_files[station_id])
        built, skipped = assemble_samples(graphs, hours, values, station,
                                          entry.year, manifest.cadence_hours)
        samples.extend(built)
        report.extend((entry.year, origin, why) for origin, why in skipped)
    return samples, report
