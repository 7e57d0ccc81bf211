"""Synthetic worlds with a known data-generating process.

ZIPs are 4 km squares laid out on a grid; each event floods a random
subset of them for a known number of days. Daily admissions per ZIP and
cause are gamma-mixed Poisson with mean::

    enrollees * baseline[c] * exp(A cos(2 pi (doy - 15) / 365.25))
              * exp(trend (year - mid) + temp (t_max - 20))
              * exp(sum_l beta[c, l] * exposure_l(day))

Event windows (exposure plus 28 lag days) never overlap in day-of-year,
so every other study year is a clean control for every stratum.
"""
from __future__ import annotations

import datetime as dt
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd

from .ccs import CAUSES, CAUSE_INDEX, EXCLUDED_LEVEL1, ICD10_START, LEVEL1_TO_CAUSE, CcsCause, embedded_code_table
from .covariates import MeteoGrid, aggregate_meteo_series, write_meteo
from .design import LAG_DAYS, N_LAG_WEEKS, STUDY_YEARS, ClaimsTable
from .errors import ValidationError
from .exposure import FloodCause, FloodEvent, write_catalog
from .geodata import DEFAULT_CRS, FloodRaster, GridGeometry, ZipPolygon, write_flood_raster, write_polygons
from .model.inference import cumulative_effect

N_LAGS = N_LAG_WEEKS + 1
ZIP_SIZE_M = 4000.0
PIXEL_M = 250.0
METEO_CELL_M = 4000.0
_PX_PER_ZIP = int(ZIP_SIZE_M / PIXEL_M)
_ORIGIN = (1_000_000.0, 2_000_000.0)

# admission shares by cause; the total is spread as below
DEFAULT_CAUSE_SHARES = {
    "infectious_parasitic": 0.060, "neoplasms": 0.045, "endocrine": 0.040, "blood": 0.015,
    "nervous": 0.045, "circulatory": 0.310, "respiratory": 0.139, "digestive": 0.108,
    "genitourinary": 0.050, "skin": 0.020, "musculoskeletal": 0.050, "injury_poisoning": 0.096,
    "mental_illness": 0.022,
}
_DOY_FIRST, _DOY_LAST, _DOY_GAP = 5, 335, 3


def _beta_table(value, name) -> np.ndarray:
    """Normalise a 5-vector or ``{cause: 5-vector}`` to a (13, 5) array."""
    out = np.zeros((len(CAUSES), N_LAGS))
    if value is None:
        return out
    if isinstance(value, Mapping):
        for cause, vec in value.items():
            out[CAUSE_INDEX[CcsCause(cause)]] = _lag_vector(vec, name)
        return out
    out[:] = _lag_vector(value, name)
    return out


def _canonical_beta(value):
    if value is None:
        return None
    if isinstance(value, Mapping):
        return {CcsCause(c).value: tuple(float(x) for x in v) for c, v in value.items()}
    return tuple(float(x) for x in value)


def _lag_vector(vec, name):
    v = np.asarray(vec, dtype=np.float64)
    if v.shape != (N_LAGS,) or not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} needs {N_LAGS} finite lag coefficients, got {vec!r}")
    return v


@dataclass(frozen=True)
class DgpConfig:
    seed: int = 0
    n_zips: int = 200
    study_years: tuple = STUDY_YEARS
    n_events: int = 5
    true_beta: object = (0.0,) * N_LAGS
    # optional override for events of severity 1.5 or 2
    true_beta_high_severity: object = None
    baseline_rate: object = None
    total_rate: float = 8e-4
    seasonal_amplitude: float = 0.15
    year_trend: float = 0.01
    temperature_effect: float = 0.004
    overdispersion: float = 1.0
    pct_black_beta: tuple = (0.7, 4.0)
    missing_demographics: float = 0.05
    mean_enrollees: float = 1500.0
    frac_zips_flooded: float = 0.5
    subthreshold_share: float = 0.1
    lake_share: float = 0.1
    max_event_days: int = 10
    max_flood_pixels: int = 40
    emergency_share: float = 0.65
    excluded_share: float = 0.12
    unmapped_share: float = 0.005
    cause_weights: tuple = (("heavy_rain", 0.8), ("tropical_storm_surge", 0.2))
    severity_weights: tuple = ((1.0, 0.53), (1.5, 0.14), (2.0, 0.33))
    # polygon vintage years; default: study start and ten years later
    vintages: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "study_years", tuple(int(y) for y in self.study_years))
        y0, y1 = self.study_years
        if self.vintages is None:
            object.__setattr__(self, "vintages", (y0, y0 + 10) if y0 + 10 <= y1 else (y0,))
        if y1 - y0 < 2:
            raise ValidationError("study window must span at least three years")
        if self.n_zips < 1 or self.n_events < 1:
            raise ValidationError("n_zips and n_events must be positive")
        if not self.overdispersion >= 1:
            raise ValidationError(f"overdispersion must be >= 1, got {self.overdispersion}")
        if not np.all(self.baseline_rates > 0) or not self.mean_enrollees > 0:
            raise ValidationError("rates and enrollment must be positive")
        if not 1 <= self.max_event_days:
            raise ValidationError("max_event_days must be at least 1")
        if not 2 <= self.max_flood_pixels <= (_PX_PER_ZIP - 2) ** 2 - 4:
            raise ValidationError("max_flood_pixels must fit inside a ZIP interior")
        for name in ("frac_zips_flooded", "subthreshold_share", "lake_share", "missing_demographics",
                     "emergency_share"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValidationError(f"{name} must lie in [0, 1]")
        if min(self.excluded_share, self.unmapped_share, self.seasonal_amplitude) < 0:
            raise ValidationError("shares and seasonal amplitude must be non-negative")
        for sev, _ in self.severity_weights:
            if float(sev) not in (1.0, 1.5, 2.0):
                raise ValidationError(f"unknown severity {sev}")
        for cause, _ in self.cause_weights:
            FloodCause(cause)
        _beta_table(self.true_beta, "true_beta")
        _beta_table(self.true_beta_high_severity, "true_beta_high_severity")
        for key in ("true_beta", "true_beta_high_severity"):
            object.__setattr__(self, key, _canonical_beta(getattr(self, key)))
        if not y0 <= min(self.vintages):
            raise ValidationError("polygon vintages must not predate the study window")

    @property
    def baseline_rates(self) -> np.ndarray:
        """Per-cause admissions per person-day, in cause order."""
        b = self.baseline_rate
        if b is None:
            shares = np.array([DEFAULT_CAUSE_SHARES[c.value] for c in CAUSES])
            return self.total_rate * shares / shares.sum()
        if isinstance(b, Mapping):
            return np.array([float(b[c.value]) for c in CAUSES])
        return np.full(len(CAUSES), float(b))

    @property
    def beta(self) -> np.ndarray:
        return _beta_table(self.true_beta, "true_beta")

    @property
    def beta_high(self) -> np.ndarray:
        if self.true_beta_high_severity is None:
            return self.beta
        return _beta_table(self.true_beta_high_severity, "true_beta_high_severity")

    def to_dict(self):
        d = asdict(self)
        for key in ("true_beta", "true_beta_high_severity", "baseline_rate"):
            v = d[key]
            if isinstance(v, Mapping):
                d[key] = {c: [float(x) for x in vec] for c, vec in v.items()}
            elif v is not None and not isinstance(v, (float, int)):
                d[key] = [float(x) for x in v]
        d["cause_weights"] = [list(x) for x in self.cause_weights]
        d["severity_weights"] = [list(x) for x in self.severity_weights]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("study_years", "pct_black_beta", "vintages"):
            if key in d:
                d[key] = tuple(d[key])
        for key in ("cause_weights", "severity_weights"):
            if key in d:
                d[key] = tuple(tuple(x) for x in d[key])
        return cls(**d)


def dgp_truth(config: DgpConfig) -> pd.DataFrame:
    """True lag coefficients, percent changes and cumulative effect per cause."""
    rows = []
    groups = [("overall", config.beta)]
    if config.true_beta_high_severity is not None:
        groups = [("moderate_group", config.beta), ("high_extreme_group", config.beta_high)]
    for group, table in groups:
        for c, cause in enumerate(CAUSES):
            cum = cumulative_effect(table[c])
            for lag in range(N_LAGS):
                b = float(table[c, lag])
                rows.append((group, cause.value, lag, b, 100.0 * math.expm1(b), cum))
    return pd.DataFrame(rows, columns=["subgroup", "cause", "lag", "beta", "pct", "cumulative"])


# ---------------------------------------------------------------- world


@dataclass(eq=False)
class World:
    config: DgpConfig
    catalog: tuple
    rasters: dict
    polygons: dict
    meteo: MeteoGrid
    claims: ClaimsTable
    enrollment: dict
    demographics: dict
    # (zip_id, event_id) -> (first exposed date, number of exposed days)
    exposures: dict = field(default_factory=dict)

    @property
    def zip_ids(self):
        return sorted(self.polygons)

    def expected_exposed_days(self):
        return {k: tuple(s + dt.timedelta(days=i) for i in range(n)) for k, (s, n) in self.exposures.items()}

    def write(self, directory, config_name="config.json") -> Path:
        """Write every pipeline input plus a run config; returns the config path."""
        root = Path(directory)
        (root / "rasters").mkdir(parents=True, exist_ok=True)
        write_catalog(root / "catalog.csv", self.catalog)
        for eid in sorted(self.rasters):
            write_flood_raster(root / "rasters" / f"event_{eid}.grid", self.rasters[eid])
        write_polygons(root / "polygons.tsv",
                       [self.polygons[z][v] for z in sorted(self.polygons) for v in sorted(self.polygons[z])])
        write_meteo(root / "meteo.grid.gz", self.meteo, fmt="%.3f")
        self.claims.to_frame().to_csv(root / "claims.csv", index=False, lineterminator="\n")
        pd.DataFrame([(z, y, int(n)) for (z, y), n in sorted(self.enrollment.items())],
                     columns=["zip", "year", "enrollee_count"]).to_csv(
            root / "enrollment.csv", index=False, lineterminator="\n")
        pd.DataFrame([(z, y, p) for (z, y), p in sorted(self.demographics.items())],
                     columns=["zip", "year", "pct_black"]).to_csv(
            root / "demographics.csv", index=False, lineterminator="\n", float_format="%.4f")
        truth = {
            "dgp": self.config.to_dict(),
            "exposures": [{"zip_id": z, "event_id": e, "start": s.isoformat(), "n_days": n}
                          for (z, e), (s, n) in sorted(self.exposures.items())],
        }
        (root / "truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
        dgp_truth(self.config).to_csv(root / "truth.csv", index=False, lineterminator="\n",
                                      float_format="%.10g")
        run = {
            "catalog": "catalog.csv",
            "rasters": {eid: f"rasters/event_{eid}.grid" for eid in sorted(self.rasters)},
            "polygons": "polygons.tsv",
            "meteo": "meteo.grid.gz",
            "claims": "claims.csv",
            "enrollment": "enrollment.csv",
            "demographics": "demographics.csv",
            "study_years": list(self.config.study_years),
            "exposure_rule": "primary",
            "causes": ["heavy_rain", "tropical_storm_surge"],
            "analyses": ["overall", "severity", "pct_black", "emergency"],
            "alpha": 0.05,
            "n_causes": len(CAUSES),
            "output_dir": "out",
            "seed": self.config.seed,
        }
        path = root / config_name
        path.write_text(json.dumps(run, indent=2) + "\n")
        return path


def _code_pools():
    """ICD code pools per group (13 causes, excluded, unmapped) and system."""
    table = embedded_code_table()
    pools = {(g, s): [] for g in range(len(CAUSES) + 2) for s in ("icd9", "icd10")}
    for (system, code), level in sorted(table.codes.items()):
        if level in EXCLUDED_LEVEL1:
            pools[(len(CAUSES), system)].append(code)
        else:
            pools[(CAUSE_INDEX[LEVEL1_TO_CAUSE[level]], system)].append(code)
    pools[(len(CAUSES) + 1, "icd9")] = ["0000", "V999"]
    pools[(len(CAUSES) + 1, "icd10")] = ["U071", "U099"]
    categories = []
    start = np.zeros((2, len(CAUSES) + 2), dtype=np.int64)
    size = np.zeros_like(start)
    for si, system in enumerate(("icd9", "icd10")):
        for g in range(len(CAUSES) + 2):
            codes = pools[(g, system)]
            if not codes:
                raise RuntimeError(f"no {system} codes for group {g}")
            start[si, g] = len(categories)
            size[si, g] = len(codes)
            categories.extend(codes)
    return np.array(categories, dtype=object), start, size


def _place_events(config, rng):
    y0, y1 = config.study_years
    years = np.arange(y0 + 1, y1)
    ev_years = rng.choice(years, size=config.n_events, replace=config.n_events > len(years))
    durations = rng.integers(1, config.max_event_days + 1, size=config.n_events)
    lengths = durations + LAG_DAYS + _DOY_GAP
    free = (_DOY_LAST - _DOY_FIRST) - int(lengths.sum())
    if free < 0:
        raise ValidationError(
            f"{config.n_events} events of up to {config.max_event_days} days plus {LAG_DAYS} lag days "
            "do not fit disjointly in one year; lower n_events or max_event_days")
    slack = np.sort(rng.integers(0, free + 1, size=config.n_events))
    order = rng.permutation(config.n_events)
    doy = np.empty(config.n_events, dtype=np.int64)
    offset = _DOY_FIRST
    for rank, e in enumerate(order):
        doy[e] = offset + slack[rank]
        offset += int(lengths[e])
    causes, cw = zip(*config.cause_weights)
    sevs, sw = zip(*config.severity_weights)
    cause_draw = rng.choice(len(causes), size=config.n_events, p=np.array(cw) / np.sum(cw))
    sev_draw = rng.choice(len(sevs), size=config.n_events, p=np.array(sw) / np.sum(sw))
    ids = rng.choice(np.arange(1000, 10000), size=config.n_events, replace=False)
    events = []
    for e in range(config.n_events):
        start = dt.date(int(ev_years[e]), 1, 1) + dt.timedelta(days=int(doy[e]))
        end = start + dt.timedelta(days=int(durations[e]) - 1)
        events.append(FloodEvent(f"{ids[e]:04d}", causes[cause_draw[e]], float(sevs[sev_draw[e]]), start, end))
    events.sort(key=lambda ev: (ev.start, ev.event_id))
    return tuple(events)


def _layout(n_zips):
    n_cols = int(math.ceil(math.sqrt(2 * n_zips)))
    n_rows = int(math.ceil(n_zips / n_cols))
    return n_rows, n_cols


def _zip_origin(k, n_cols):
    """Upper-left pixel (row, col) of ZIP ``k`` on the flood raster."""
    i, j = divmod(k, n_cols)
    return 1 + i * _PX_PER_ZIP, 1 + j * _PX_PER_ZIP


def generate_world(config: DgpConfig, n_threads: int = 1) -> World:
    """Deterministic synthetic world for ``config``."""
    if not isinstance(config, DgpConfig):
        raise ValidationError("generate_world expects a DgpConfig")
    root = np.random.SeedSequence(int(config.seed))
    ss_events, ss_flood, ss_meteo, ss_people, ss_zips = root.spawn(5)
    rng_events = np.random.default_rng(ss_events)
    rng_flood = np.random.default_rng(ss_flood)
    catalog = _place_events(config, rng_events)

    # geometry: ZIP squares are offset by half a pixel from the raster grid
    z_rows, z_cols = _layout(config.n_zips)
    geom = GridGeometry(_ORIGIN[0], _ORIGIN[1], PIXEL_M, z_rows * _PX_PER_ZIP + 2, z_cols * _PX_PER_ZIP + 2,
                        DEFAULT_CRS)
    zip_ids = [f"{30000 + 3 * k:05d}" for k in range(config.n_zips)]
    polygons = {}
    for k, z in enumerate(zip_ids):
        r0, c0 = _zip_origin(k, z_cols)
        xmin = geom.origin_x + c0 * PIXEL_M - PIXEL_M / 2
        ymax = geom.origin_y - r0 * PIXEL_M + PIXEL_M / 2
        polygons[z] = {v: ZipPolygon.rectangle(z, xmin, ymax - ZIP_SIZE_M, xmin + ZIP_SIZE_M, ymax, v)
                       for v in config.vintages}

    # pixels fully inside a ZIP, one ring in from its edge
    inner = [(r, c) for r in range(1, _PX_PER_ZIP - 1) for c in range(1, _PX_PER_ZIP - 1)]
    perm = np.zeros((geom.n_rows, geom.n_cols), dtype=np.uint8)
    lake_pixels = {}
    for k in range(config.n_zips):
        if rng_flood.random() < config.lake_share:
            r0, c0 = _zip_origin(k, z_cols)
            picks = rng_flood.choice(len(inner), size=3, replace=False)
            lake_pixels[k] = [(r0 + inner[p][0], c0 + inner[p][1]) for p in picks]
            for rc in lake_pixels[k]:
                perm[rc] = 1

    rasters, exposures = {}, {}
    for ev in catalog:
        flooded = perm.copy()
        duration = perm.astype(np.int32) * ev.duration_days
        for k, z in enumerate(zip_ids):
            r0, c0 = _zip_origin(k, z_cols)
            taken = set(lake_pixels.get(k, ()))
            free = [(r0 + r, c0 + c) for r, c in inner if (r0 + r, c0 + c) not in taken]
            if rng_flood.random() < config.frac_zips_flooded:
                d_z = int(rng_flood.integers(1, ev.duration_days + 1))
                n_px = int(rng_flood.integers(2, config.max_flood_pixels + 1))
                picks = rng_flood.choice(len(free), size=n_px, replace=False)
                durs = np.r_[d_z, d_z, rng_flood.integers(1, d_z + 1, size=n_px - 2)]
                for p, d in zip(picks, durs):
                    flooded[free[p]] = 1
                    duration[free[p]] = d
                exposures[(z, ev.event_id)] = (ev.start, d_z)
            elif rng_flood.random() < config.subthreshold_share:
                p = free[int(rng_flood.integers(len(free)))]
                flooded[p] = 1
                duration[p] = int(rng_flood.integers(1, ev.duration_days + 1))
        rasters[ev.event_id] = FloodRaster(geom, flooded, duration, perm, ev.event_id)

    first_date = dt.date(config.study_years[0], 1, 1)
    last_date = dt.date(config.study_years[1], 12, 31)
    n_days = (last_date - first_date).days + 1
    meteo = _meteo_grid(geom, first_date, n_days, np.random.default_rng(ss_meteo))

    rng_people = np.random.default_rng(ss_people)
    years = np.arange(config.study_years[0], config.study_years[1] + 1)
    mid = 0.5 * (years[0] + years[-1])
    enrollment, demographics = {}, {}
    for z in zip_ids:
        base = config.mean_enrollees * rng_people.lognormal(0.0, 0.3)
        growth = np.exp(0.01 * (years - mid) + rng_people.normal(0.0, 0.03, size=len(years)))
        missing = rng_people.random() < config.missing_demographics
        share = 100.0 * rng_people.beta(*config.pct_black_beta)
        noise = rng_people.normal(0.0, 0.5, size=len(years))
        for y, g, e in zip(years, growth, noise):
            enrollment[(z, int(y))] = max(int(round(base * g)), 50)
            if not missing:
                demographics[(z, int(y))] = float(np.clip(share + e, 0.0, 100.0))

    world = World(config, catalog, rasters, polygons, meteo, None, enrollment, demographics, exposures)
    world.claims = _claims(world, ss_zips, n_threads)
    return world


def _meteo_grid(flood_geom, first_date, n_days, rng) -> MeteoGrid:
    xmin, ymin, xmax, ymax = flood_geom.bounds
    ox, oy = xmin - 1000.0, ymax + 1000.0
    n_cols = int(math.ceil((xmax - ox) / METEO_CELL_M)) + 1
    n_rows = int(math.ceil((oy - ymin) / METEO_CELL_M)) + 1
    geom = GridGeometry(ox, oy, METEO_CELL_M, n_rows, n_cols, flood_geom.crs)
    doy = np.array([(first_date + dt.timedelta(days=k)).timetuple().tm_yday for k in range(n_days)])
    phase = 2 * np.pi * (doy - 105) / 365.25

    def ar1(sd, rho=0.7):
        e = rng.normal(0.0, sd * math.sqrt(1 - rho * rho), size=n_days)
        out = np.empty(n_days)
        out[0] = rng.normal(0.0, sd)
        for k in range(1, n_days):
            out[k] = rho * out[k - 1] + e[k]
        return out

    shape = (n_days, n_rows, n_cols)
    cell_t = rng.normal(0.0, 1.5, size=(n_rows, n_cols))
    t = (18 + 11 * np.sin(phase) + ar1(3.0))[:, None, None] + cell_t + rng.normal(0.0, 1.0, size=shape)
    rh = (68 - 8 * np.sin(phase) + ar1(6.0))[:, None, None] + rng.normal(0.0, 3.0, size=shape)
    wind = rng.gamma(4.0, 0.9, size=shape) + 0.3 * np.abs(cell_t)
    values = np.stack([t, np.clip(rh, 5.0, 100.0), wind], axis=1)
    return MeteoGrid(geom, first_date, np.round(values, 3))


def _calendar(config):
    return _calendar_for(*config.study_years)


@lru_cache(maxsize=8)
def _calendar_for(y0, y1):
    first = dt.date(y0, 1, 1)
    n_days = (dt.date(y1, 12, 31) - first).days + 1
    dates = np.datetime64(first) + np.arange(n_days).astype("timedelta64[D]")
    doy = np.array([(first + dt.timedelta(days=k)).timetuple().tm_yday for k in range(n_days)])
    year_of = dates.astype("datetime64[Y]").astype(int) + 1970
    return first, dates, doy, year_of


def draw_counts(mu, overdispersion, rng) -> np.ndarray:
    """Poisson counts, gamma-mixed so that Var = overdispersion * mean."""
    mu = np.asarray(mu, dtype=np.float64)
    c = float(overdispersion)
    if c > 1:
        mu = rng.gamma(mu / (c - 1), c - 1)
    return rng.poisson(mu)


def daily_means(world: World, zip_id, t_max=None) -> np.ndarray:
    """Expected admissions per day for one ZIP.

    Columns are the 13 causes in order, then excluded and unmapped codes.
    """
    config = world.config
    first, dates, doy, year_of = _calendar(config)
    if t_max is None:
        poly = world.polygons[zip_id][min(world.polygons[zip_id])]
        t_max = aggregate_meteo_series(world.meteo, poly)[:, 0]
    mid = 0.5 * sum(config.study_years)
    enr = np.array([world.enrollment[(zip_id, int(y))] for y in year_of], dtype=np.float64)
    log_scale = (config.seasonal_amplitude * np.cos(2 * np.pi * (doy - 15) / 365.25)
                 + config.year_trend * (year_of - mid) + config.temperature_effect * (t_max - 20.0))
    n_days = len(dates)
    log_mult = np.zeros((n_days, len(CAUSES)))
    events = {e.event_id: e for e in world.catalog}
    for (z, eid), (start, n_exp) in world.exposures.items():
        if z != zip_id:
            continue
        table = config.beta_high if events[eid].severity > 1 else config.beta
        i0 = (start - first).days
        log_mult[i0:i0 + n_exp] += table[:, 0]
        end = i0 + n_exp - 1
        for w in range(1, N_LAGS):
            log_mult[end + 7 * (w - 1) + 1:end + 7 * w + 1] += table[:, w]
    mu = (enr * np.exp(log_scale))[:, None] * config.baseline_rates[None, :] * np.exp(log_mult)
    extra = np.array([config.excluded_share, config.unmapped_share]) * config.total_rate
    return np.hstack([mu, enr[:, None] * extra[None, :]])


def _claims(world: World, ss_zips, n_threads) -> ClaimsTable:
    config = world.config
    categories, pool_start, pool_size = _code_pools()
    _, dates, _, _ = _calendar(config)
    system = (dates >= np.datetime64(ICD10_START)).astype(np.int64)
    zip_ids = world.zip_ids
    seeds = ss_zips.spawn(len(zip_ids))

    def one_zip(k):
        rng = np.random.default_rng(seeds[k])
        counts = draw_counts(daily_means(world, zip_ids[k]), config.overdispersion, rng)
        day_idx, group = np.nonzero(counts)
        reps = counts[day_idx, group]
        day_idx = np.repeat(day_idx, reps)
        group = np.repeat(group, reps)
        sys_ = system[day_idx]
        pick = (rng.random(len(day_idx)) * pool_size[sys_, group]).astype(np.int64)
        emergency = rng.random(len(day_idx)) < config.emergency_share
        return day_idx, pool_start[sys_, group] + pick, emergency

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            parts = list(pool.map(one_zip, range(len(zip_ids))))
    else:
        parts = [one_zip(k) for k in range(len(zip_ids))]
    day_idx = np.concatenate([p[0] for p in parts])
    code = np.concatenate([p[1] for p in parts])
    emergency = np.concatenate([p[2] for p in parts])
    zip_index = np.repeat(np.arange(len(zip_ids)), [len(p[0]) for p in parts])
    return ClaimsTable.from_codes(dates[day_idx], code, categories, zip_index,
                                  np.array(zip_ids, dtype=object), emergency, validate=False)


def simulate_panel(n_strata, beta, seed=0, overdispersion=1.0, n_covariates=2, baseline=2.0,
                   periods_per_stratum=15, n_lags=N_LAGS) -> tuple:
    """Small stratified panel drawn straight from the conditional model.

    Rows follow the stratum layout: the first ``n_lags`` periods of each
    stratum carry the lag indicators, the rest are controls. Continuous
    covariates have coefficient 0.1 each. Returns ``(panel, true_params)``.
    """
    from .model.conditional import Panel

    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (n_lags,):
        raise ValidationError(f"beta needs {n_lags} entries")
    if periods_per_stratum <= n_lags or n_strata < 1:
        raise ValidationError("need at least one stratum with control periods")
    rng = np.random.default_rng(seed)
    n = n_strata * periods_per_stratum
    lags = np.zeros((n, n_lags))
    for s in range(n_strata):
        lags[s * periods_per_stratum + np.arange(n_lags), np.arange(n_lags)] = 1.0
    z = rng.normal(size=(n, n_covariates))
    gamma = np.full(n_covariates, 0.1)
    X = np.hstack([lags, z])
    alpha = np.repeat(rng.normal(np.log(baseline), 0.5, size=n_strata), periods_per_stratum)
    offset = np.log(rng.uniform(5.0, 9.0, size=n))
    mu = np.exp(alpha + X @ np.r_[beta, gamma] + offset - np.log(7.0))
    y = draw_counts(mu, overdispersion, rng).astype(np.float64)
    names = [f"lag{k}" for k in range(n_lags)] + [f"z{k}" for k in range(n_covariates)]
    ptr = np.arange(0, n + 1, periods_per_stratum)
    return Panel(X, y, offset, ptr, tuple(names)), np.r_[beta, gamma]


def write_world(config: DgpConfig, directory, n_threads: int = 1) -> Path:
    world = generate_world(config, n_threads)
    return world.write(directory)


def load_dgp_config(path) -> DgpConfig:
    """Read a bare DgpConfig document or one nested under a ``synth`` key."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return DgpConfig.from_dict(data.get("synth", data))


def default_threads():
    return max(1, min(4, os.cpu_count() or 1))
