"""Flood-event catalog, exposure rules and ZIP-day exposure classification."""
from __future__ import annotations

import csv
import datetime as dt
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .errors import StructuralError, ValidationError
from .geodata import (FloodRaster, ZipPolygon, ZonalFloodStats, daily_flooded_area,
                      mask_permanent_water, select_vintage, zonal_flood_stats, zone_coverage)

KM2_PER_SQ_MI = 2.589988110336


class FloodCause(str, Enum):
    HEAVY_RAIN = "heavy_rain"
    TROPICAL_STORM_SURGE = "tropical_storm_surge"
    DAM = "dam"
    SNOWMELT_ICE = "snowmelt_ice"


PRIMARY_CAUSES = frozenset({FloodCause.HEAVY_RAIN, FloodCause.TROPICAL_STORM_SURGE})
ALL_CAUSES = frozenset(FloodCause)

SEVERITY_LABELS = {1.0: "moderate", 1.5: "high", 2.0: "extreme"}


class SeverityGroup(str, Enum):
    MODERATE = "moderate_group"
    HIGH_EXTREME = "high_extreme_group"


@dataclass(frozen=True)
class FloodEvent:
    event_id: str
    cause: FloodCause
    severity: float
    start: dt.date
    end: dt.date

    def __post_init__(self):
        eid = str(self.event_id)
        if not (len(eid) == 4 and eid.isdigit()):
            raise ValidationError(f"event_id must be a 4-digit code, got {self.event_id!r}")
        object.__setattr__(self, "event_id", eid)
        try:
            object.__setattr__(self, "cause", FloodCause(self.cause))
        except ValueError as exc:
            raise ValidationError(f"event {eid}: unknown cause {self.cause!r}") from exc
        sev = float(self.severity)
        if sev not in SEVERITY_LABELS:
            raise ValidationError(f"event {eid}: severity {self.severity!r} not in {{1, 1.5, 2}}")
        object.__setattr__(self, "severity", sev)
        if self.start > self.end:
            raise ValidationError(f"event {eid}: start {self.start} after end {self.end}")

    @property
    def duration_days(self):
        return (self.end - self.start).days + 1

    @property
    def severity_label(self):
        return SEVERITY_LABELS[self.severity]


@dataclass(frozen=True)
class ExposureRule:
    """A ZIP-day is exposed when flooded and either threshold is reached."""

    min_pct_area: float
    min_area_km2: float
    name: str = "custom"

    def __post_init__(self):
        if not (np.isfinite(self.min_pct_area) or np.isfinite(self.min_area_km2)):
            raise ValidationError("at least one exposure threshold must be finite")
        if self.min_pct_area < 0 or self.min_area_km2 < 0:
            raise ValidationError("exposure thresholds must be non-negative")


RULE_PRESETS = {
    "primary": ExposureRule(0.5, 5 * KM2_PER_SQ_MI, "primary"),
    "strict": ExposureRule(1.0, 10 * KM2_PER_SQ_MI, "strict"),
    # any flooded area at all
    "loose": ExposureRule(0.0, 0.0, "loose"),
}


def exposure_rule(name: str) -> ExposureRule:
    try:
        return RULE_PRESETS[name]
    except KeyError:
        raise ValidationError(f"unknown exposure rule {name!r}; choose from {sorted(RULE_PRESETS)}") from None


def classify_exposed(stats: ZonalFloodStats, rule: ExposureRule = RULE_PRESETS["primary"]) -> bool:
    if not stats.flooded_area > 0:
        return False
    return bool(stats.pct_area_flooded >= rule.min_pct_area or stats.flooded_area >= rule.min_area_km2)


def filter_events(catalog: Iterable[FloodEvent], causes) -> tuple:
    causes = {FloodCause(c) for c in causes}
    kept = tuple(e for e in catalog if e.cause in causes)
    if not kept:
        warnings.warn("cause filter removed every flood event", stacklevel=2)
    return kept


def severity_split(event) -> SeverityGroup:
    """Moderate (severity <= 1) versus high/extreme (> 1)."""
    sev = event.severity if isinstance(event, FloodEvent) else float(event)
    if sev not in SEVERITY_LABELS:
        raise ValidationError(f"unknown severity class {sev!r}")
    return SeverityGroup.MODERATE if sev <= 1 else SeverityGroup.HIGH_EXTREME


@dataclass(frozen=True)
class ZipDayExposure:
    zip_id: str
    date: dt.date
    event_id: str
    exposed: bool
    stats: ZonalFloodStats


def zip_day_exposures(catalog: Iterable[FloodEvent], rasters: Mapping[str, FloodRaster],
                      polygons: Mapping[str, Mapping[int, ZipPolygon]],
                      rule: ExposureRule = RULE_PRESETS["primary"],
                      coverage_cache: dict | None = None) -> list:
    """Classify every flooded ZIP-day of every catalog event.

    A pixel of duration ``d`` counts as flooded on the first ``d`` days of
    its event. Each (ZIP, date) appears once; when several events flood
    it, exposed rows win and ties go to the earliest-starting event.
    """
    cache = {} if coverage_cache is None else coverage_cache
    events = sorted(catalog, key=lambda e: (e.start, e.event_id))
    best: dict = {}
    for event in events:
        if event.event_id not in rasters:
            raise ValidationError(f"no flood raster for event {event.event_id}")
        masked = mask_permanent_water(rasters[event.event_id])
        any_flood = masked.flooded.any()
        for zip_id in sorted(polygons):
            poly = select_vintage(polygons[zip_id], event.start.year)
            key = (masked.geometry, zip_id, poly.vintage_year)
            cov = cache.get(key)
            if cov is None:
                cov = cache[key] = zone_coverage(masked.geometry, poly)
            if not any_flood or not masked.flooded[cov.rows, cov.cols].any():
                continue
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                ev_stats = zonal_flood_stats(masked, poly, cov)
            for k, area in enumerate(daily_flooded_area(masked, cov)):
                day = event.start + dt.timedelta(days=k)
                if day > event.end:
                    break
                if area <= 0:
                    continue
                stats = ZonalFloodStats(zip_id, event.event_id, float(area),
                                        min(100.0 * area / poly.total_area, 100.0),
                                        ev_stats.mean_duration, ev_stats.max_duration)
                row = ZipDayExposure(zip_id, day, event.event_id, classify_exposed(stats, rule), stats)
                prev = best.get((zip_id, day))
                # events are visited in start order, so only an exposed row can displace
                if prev is None or (row.exposed and not prev.exposed):
                    best[(zip_id, day)] = row
    return [best[k] for k in sorted(best)]


EXPOSURE_COLUMNS = ["zip_id", "date", "event_id", "exposed", "flooded_area_km2",
                    "pct_area_flooded", "mean_duration", "max_duration"]


def exposures_to_frame(rows) -> pd.DataFrame:
    data = [(r.zip_id, r.date.isoformat(), r.event_id, bool(r.exposed), r.stats.flooded_area,
             r.stats.pct_area_flooded, r.stats.mean_duration, r.stats.max_duration) for r in rows]
    return pd.DataFrame(data, columns=EXPOSURE_COLUMNS)


def frame_to_exposures(frame: pd.DataFrame) -> list:
    missing = set(EXPOSURE_COLUMNS) - set(frame.columns)
    if missing:
        raise StructuralError(f"exposure table missing columns {sorted(missing)}")
    out = []
    for r in frame.itertuples(index=False):
        zip_id, eid = str(r.zip_id).zfill(5), str(r.event_id).zfill(4)
        stats = ZonalFloodStats(zip_id, eid, float(r.flooded_area_km2), float(r.pct_area_flooded),
                                float(r.mean_duration), float(r.max_duration))
        exposed = r.exposed if isinstance(r.exposed, (bool, np.bool_)) else str(r.exposed).lower() == "true"
        out.append(ZipDayExposure(zip_id, dt.date.fromisoformat(str(r.date)), eid, bool(exposed), stats))
    return out


@dataclass(frozen=True)
class ExposureSummary:
    n_events: int
    n_zip_days: int
    n_zips: int

    def describe(self):
        return (f"{self.n_events} flood events, {self.n_zip_days:,} flooded ZIP Code-days, "
                f"{self.n_zips:,} unique ZIP Codes")


def summarize(rows, event_ids=None) -> ExposureSummary:
    exp = [r for r in rows if r.exposed and (event_ids is None or r.event_id in event_ids)]
    return ExposureSummary(len({r.event_id for r in exp}), len(exp), len({r.zip_id for r in exp}))


# ---------------------------------------------------------------- catalog I/O

CATALOG_COLUMNS = ["event_id", "cause", "severity", "start", "end"]


def read_catalog(path) -> tuple:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(CATALOG_COLUMNS) <= set(reader.fieldnames):
            raise StructuralError(f"{path}: catalog needs columns {CATALOG_COLUMNS}")
        events = []
        for row in reader:
            try:
                start = dt.date.fromisoformat(row["start"])
                end = dt.date.fromisoformat(row["end"])
            except ValueError as exc:
                raise ValidationError(f"{path}: bad date in event {row['event_id']}") from exc
            events.append(FloodEvent(row["event_id"], row["cause"], float(row["severity"]), start, end))
    ids = [e.event_id for e in events]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{path}: duplicate event ids")
    return tuple(events)


def write_catalog(path, events):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CATALOG_COLUMNS)
        for e in events:
            sev = int(e.severity) if e.severity == int(e.severity) else e.severity
            w.writerow([e.event_id, e.cause.value, sev, e.start.isoformat(), e.end.isoformat()])
