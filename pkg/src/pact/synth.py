"""Synthetic winter-season forcing and an analytic forcing-to-surge oracle.

The forcing is a spatially uniform background flow plus moving low-pressure
systems; each low contributes a radially decaying pressure deficit and a
counter-clockwise rotational wind field.  Station surge is a deterministic
function of the *written* forcing files: an inverse-barometer term on the
station's centred pressure anomaly, a lagged onshore wind projection,
first-order autoregressive smoothing, and seeded observation noise.  Every
coefficient (and the noise seed recipe) is recorded in the manifest, so
targets can be recomputed exactly from the dataset directory alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (ConfigError, DatasetManifest, ForcingSnapshot, StationMeta,
                   YearEntry, read_forcing_csv, read_surge_csv, write_forcing_csv,
                   write_manifest, write_surge_csv)

BASE_PRESSURE = 101325.0  # Pa


@dataclass
class SynthConfig:
    dataset_name: str = "synthetic"
    ny: int = 8
    nx: int = 8
    lat0: float = 36.0
    lon0: float = -76.0
    dlat: float = 1.0
    dlon: float = 1.0
    years: int = 6                     # historical seasons
    future_years: int = 0
    start_year: int = 1979
    future_start_year: int = 2070
    season_days: int = 151             # Nov 1 .. Mar 31
    cadence_hours: int = 6
    n_stations: int = 1
    storm_rate: float = 4.0            # mean lows per season
    deficit_scale: float = 1200.0      # Pa, median central pressure deficit
    deficit_sigma: float = 0.6         # lognormal shape: tail heaviness
    noise_std: float = 0.004           # m, observation noise on surge
    background_wind: tuple[float, float] = (3.0, 1.0)   # mean (u, v) in m/s
    background_wind_sigma: float = 2.0                  # AR(1) innovation scale
    # oracle coefficients
    ib_coeff: float = -1.0e-4          # m per Pa of centred pressure anomaly
    wind_coeff: float = 0.012          # m per (m/s) of onshore wind projection
    lag_hours: tuple[int, ...] = (0, 3, 6, 12)
    lag_weights: tuple[float, ...] = (0.35, 0.30, 0.20, 0.15)
    ar_coeff: float = 0.6
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.ny < 1 or self.nx < 1:
            raise ConfigError(f"grid extents must be positive, got {self.ny}x{self.nx}")
        if self.years < 1:
            raise ConfigError("need at least one historical year")
        if self.cadence_hours not in (3, 6):
            raise ConfigError(f"unsupported cadence {self.cadence_hours}")
        if self.season_days < 2:
            raise ConfigError("season too short")
        if len(self.lag_hours) != len(self.lag_weights):
            raise ConfigError("lag_hours and lag_weights differ in length")
        if self.n_stations < 1:
            raise ConfigError("need at least one station")


@dataclass
class _Storm:
    t_start: float
    duration: float
    lat_c: float
    lon_c: float
    v_lat: float       # deg/h
    v_lon: float
    deficit: float     # Pa
    radius: float      # deg
    wind_gain: float   # m/s per Pa of deficit

    def envelope(self, t: float) -> float:
        if t <= self.t_start or t >= self.t_start + self.duration:
            return 0.0
        return float(np.sin(np.pi * (t - self.t_start) / self.duration))


def _draw_storms(rng: np.random.Generator, cfg: SynthConfig, hours: int) -> list[_Storm]:
    count = int(rng.poisson(cfg.storm_rate))
    lat_lo, lat_hi = cfg.lat0, cfg.lat0 + cfg.dlat * (cfg.ny - 1)
    lon_lo, lon_hi = cfg.lon0, cfg.lon0 + cfg.dlon * (cfg.nx - 1)
    storms = []
    for _ in range(count):
        duration = rng.uniform(48.0, 120.0)
        t_start = rng.uniform(-12.0, max(1.0, hours - duration * 0.5))
        heading = rng.normal(np.pi / 4.0, np.pi / 9.0)   # roughly toward NE
        speed = rng.uniform(0.05, 0.25)                  # deg/h
        storms.append(_Storm(
            t_start=t_start,
            duration=duration,
            lat_c=rng.uniform(lat_lo - 2.0, lat_lo + 0.3 * (lat_hi - lat_lo)),
            lon_c=rng.uniform(lon_lo - 2.0, lon_lo + 0.5 * (lon_hi - lon_lo)),
            v_lat=speed * float(np.sin(heading)),
            v_lon=speed * float(np.cos(heading)),
            deficit=float(min(5000.0, rng.lognormal(np.log(cfg.deficit_scale),
                                                    cfg.deficit_sigma))),
            radius=rng.uniform(1.5, 3.0),
            wind_gain=0.012,
        ))
    return storms


def _season_snapshots(rng: np.random.Generator, cfg: SynthConfig,
                      lat: np.ndarray, lon: np.ndarray) -> list[ForcingSnapshot]:
    last_hour = cfg.season_days * 24
    snap_hours = list(range(0, last_hour + 1, cfg.cadence_hours))
    storms = _draw_storms(rng, cfg, last_hour)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    u_mean, v_mean = cfg.background_wind
    rho = 0.85
    innov = cfg.background_wind_sigma * np.sqrt(1.0 - rho * rho)
    bg_u, bg_v = 0.0, 0.0

    snapshots = []
    for hour in snap_hours:
        # spatially uniform background: centering removes it from p' entirely
        p = np.full(lat.shape, BASE_PRESSURE + 400.0 * np.sin(2.0 * np.pi * hour / 240.0 + phase))
        bg_u = rho * bg_u + innov * rng.standard_normal()
        bg_v = rho * bg_v + innov * rng.standard_normal()
        u = np.full(lat.shape, u_mean + bg_u)
        v = np.full(lat.shape, v_mean + bg_v)
        for storm in storms:
            env = storm.envelope(hour)
            if env == 0.0:
                continue
            c_lat = storm.lat_c + storm.v_lat * (hour - storm.t_start)
            c_lon = storm.lon_c + storm.v_lon * (hour - storm.t_start)
            dy = lat - c_lat
            dx = lon - c_lon
            r = np.sqrt(dx * dx + dy * dy)
            p = p - storm.deficit * env * np.exp(-0.5 * (r / storm.radius) ** 2)
            s = r / storm.radius
            speed = storm.wind_gain * storm.deficit * env * s * np.exp(1.0 - s)
            with np.errstate(invalid="ignore", divide="ignore"):
                tx = np.where(r > 0, -dy / r, 0.0)
                ty = np.where(r > 0, dx / r, 0.0)
            u = u + speed * tx
            v = v + speed * ty
        snapshots.append(ForcingSnapshot(timestamp=hour, ny=cfg.ny, nx=cfg.nx,
                                         lat=lat, lon=lon, u=u, v=v, p=p))
    return snapshots


# ---------------------------------------------------------------------------
# the oracle: forcing series -> hourly station surge
# ---------------------------------------------------------------------------

def surge_from_forcing(snap_hours: np.ndarray, p_anom: np.ndarray,
                       proj: np.ndarray, coeffs: dict,
                       noise: np.ndarray | None = None) -> np.ndarray:
    """Hourly surge response to station-local forcing series.

    ``p_anom`` and ``proj`` are per-snapshot values at the station node;
    both are linearly upsampled to hourly resolution first.  Lag indices
    clamp at the season start.
    """
    snap_hours = np.asarray(snap_hours, dtype=np.float64)
    hourly = np.arange(int(snap_hours[-1]) + 1, dtype=np.float64)
    p_h = np.interp(hourly, snap_hours, p_anom)
    w_h = np.interp(hourly, snap_hours, proj)

    raw = coeffs["ib_coeff"] * p_h
    for lag, weight in zip(coeffs["lag_hours"], coeffs["lag_weights"]):
        idx = np.maximum(np.arange(hourly.size) - int(lag), 0)
        raw = raw + coeffs["wind_coeff"] * weight * w_h[idx]

    ar = coeffs["ar_coeff"]
    surge = np.empty_like(raw)
    surge[0] = raw[0]
    for t in range(1, raw.size):
        surge[t] = ar * surge[t - 1] + (1.0 - ar) * raw[t]
    if noise is not None:
        surge = surge + noise
    return surge


def _noise_for(coeffs: dict, year: int, station_index: int, n: int) -> np.ndarray:
    if coeffs["noise_std"] == 0.0:
        return np.zeros(n)
    rng = np.random.default_rng([int(coeffs["noise_seed"]), int(year), int(station_index)])
    return coeffs["noise_std"] * rng.standard_normal(n)


def station_forcing_series(snapshots: list[ForcingSnapshot],
                           node_index: int, onshore: tuple[float, float]
                           ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-snapshot (hours, centred pressure anomaly, onshore wind projection)."""
    hours = np.array([s.timestamp for s in snapshots], dtype=np.float64)
    p_anom = np.array([s.p[node_index] - s.p.mean() for s in snapshots])
    proj = np.array([s.u[node_index] * onshore[0] + s.v[node_index] * onshore[1]
                     for s in snapshots])
    return hours, p_anom, proj


def oracle_station_surge(root: Path, manifest: DatasetManifest, year: int,
                         station_id: str) -> np.ndarray:
    """Recompute a station-year's surge from the dataset files alone."""
    if manifest.synthetic is None:
        raise ConfigError("manifest has no synthetic coefficient block")
    coeffs = manifest.synthetic
    entry = manifest.year_entry(year)
    snaps = [read_forcing_csv(root / rel, hour, manifest.ny, manifest.nx)
             for hour, rel in sorted(entry.forcing_files.items())]
    sinfo = coeffs["stations"][station_id]
    hours, p_anom, proj = station_forcing_series(
        snaps, int(sinfo["node_index"]), (sinfo["onshore_x"], sinfo["onshore_y"]))
    station_index = list(coeffs["stations"]).index(station_id)
    noise = _noise_for(coeffs, year, station_index, int(hours[-1]) + 1)
    return surge_from_forcing(hours, p_anom, proj, coeffs, noise)


# ---------------------------------------------------------------------------
# top-level generation
# ---------------------------------------------------------------------------

def synthesize_dataset(cfg: SynthConfig, seed: int, out_dir: Path) -> DatasetManifest:
    """Generate forcing + surge files and the manifest under ``out_dir``."""
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    grid_lat, grid_lon = np.meshgrid(
        cfg.lat0 + cfg.dlat * np.arange(cfg.ny),
        cfg.lon0 + cfg.dlon * np.arange(cfg.nx), indexing="ij")
    lat = grid_lat.reshape(-1)
    lon = grid_lon.reshape(-1)

    station_rng = np.random.default_rng([seed, 0xC0A57])
    stations: list[StationMeta] = []
    station_block: dict[str, dict] = {}
    # stations sit on interior grid nodes toward the eastern (offshore) side
    for k in range(cfg.n_stations):
        row = 1 + (k * max(1, (cfg.ny - 2) // max(1, cfg.n_stations))) % max(1, cfg.ny - 2)
        col = max(0, cfg.nx - 2)
        node = row * cfg.nx + col
        angle = station_rng.uniform(0.0, 2.0 * np.pi)
        sid = f"st{k:02d}"
        stations.append(StationMeta(station_id=sid, lat=float(lat[node]),
                                    lon=float(lon[node]),
                                    elevation_m=float(station_rng.uniform(1.0, 5.0))))
        station_block[sid] = {"node_index": int(node),
                              "onshore_x": float(np.cos(angle)),
                              "onshore_y": float(np.sin(angle))}

    coeffs = {
        "ib_coeff": cfg.ib_coeff,
        "wind_coeff": cfg.wind_coeff,
        "lag_hours": list(cfg.lag_hours),
        "lag_weights": list(cfg.lag_weights),
        "ar_coeff": cfg.ar_coeff,
        "noise_std": cfg.noise_std,
        "noise_seed": int(np.random.default_rng([seed, 0x5EED]).integers(2**31)),
        "stations": station_block,
    }

    year_labels = ([(cfg.start_year + i, "historical") for i in range(cfg.years)]
                   + [(cfg.future_start_year + i, "future") for i in range(cfg.future_years)])

    entries: list[YearEntry] = []
    for y_index, (year, period) in enumerate(year_labels):
        rng = np.random.default_rng([seed, y_index])
        snapshots = _season_snapshots(rng, cfg, lat, lon)

        forcing_dir = out_dir / "forcing" / str(year)
        forcing_dir.mkdir(parents=True, exist_ok=True)
        forcing_files = {}
        for snap in snapshots:
            rel = f"forcing/{year}/t{snap.timestamp:06d}.csv"
            write_forcing_csv(out_dir / rel, snap)
            forcing_files[snap.timestamp] = rel

        # targets are computed from the round-tripped file values so the
        # stored surge matches an oracle that only sees the dataset files
        reread = [read_forcing_csv(out_dir / rel, hour, cfg.ny, cfg.nx)
                  for hour, rel in sorted(forcing_files.items())]
        surge_dir = out_dir / "surge" / str(year)
        surge_dir.mkdir(parents=True, exist_ok=True)
        surge_files = {}
        for s_index, st in enumerate(stations):
            info = station_block[st.station_id]
            hours, p_anom, proj = station_forcing_series(
                reread, info["node_index"], (info["onshore_x"], info["onshore_y"]))
            noise = _noise_for(coeffs, year, s_index, int(hours[-1]) + 1)
            surge = surge_from_forcing(hours, p_anom, proj, coeffs, noise)
            rel = f"surge/{year}/{st.station_id}.csv"
            write_surge_csv(out_dir / rel, np.arange(surge.size), surge)
            surge_files[st.station_id] = rel

        entries.append(YearEntry(year=year, period=period,
                                 hours=cfg.season_days * 24,
                                 forcing_files=forcing_files,
                                 surge_files=surge_files))

    manifest = DatasetManifest(
        dataset_name=cfg.dataset_name, cadence_hours=cfg.cadence_hours,
        ny=cfg.ny, nx=cfg.nx,
        epoch="hours since each winter season's start; seasons are independent",
        stations=stations, years=entries, synthetic=coeffs)
    write_manifest(out_dir / "manifest.json", manifest)
    return manifest
