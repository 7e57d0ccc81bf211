"""Gridded daily meteorology aggregated to ZIP-days and to period averages."""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import MissingDataError, StructuralError, ValidationError
from .geodata import DEFAULT_CRS, GridGeometry, ZipPolygon, zone_coverage
from .gridio import read_grid, write_grid

METEO_VARIABLES = ("t_max", "rh_max", "wind_10m")


@dataclass(frozen=True, eq=False)
class MeteoGrid:
    """Daily layers on a common grid; ``values`` has shape (n_days, 3, n_rows, n_cols)."""

    geometry: GridGeometry
    first_date: dt.date
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 4 or v.shape[1] != len(METEO_VARIABLES) or \
                v.shape[2:] != (self.geometry.n_rows, self.geometry.n_cols):
            raise StructuralError(f"meteorology array has shape {v.shape}")
        rh, wind = v[:, 1], v[:, 2]
        if np.any((rh < 0) | (rh > 100)):
            raise ValidationError("rh_max outside [0, 100]")
        if np.any(wind < 0):
            raise ValidationError("wind_10m must be non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_days(self):
        return self.values.shape[0]

    def day_index(self, date):
        k = (date - self.first_date).days
        if not 0 <= k < self.n_days:
            raise MissingDataError(f"no meteorology for {date}")
        return k


class MeteoTriple(NamedTuple):
    t_max: float
    rh_max: float
    wind_10m: float


@dataclass(frozen=True)
class ZipMeteoDay:
    zip_id: str
    date: dt.date
    t_max: float
    rh_max: float
    wind_10m: float


def _weights(grid: MeteoGrid, polygon: ZipPolygon, coverage=None):
    cov = coverage if coverage is not None else zone_coverage(grid.geometry, polygon)
    total = cov.fraction.sum()
    if not total > 0:
        raise MissingDataError(f"ZIP {polygon.zip_id} does not intersect the meteorology grid")
    return cov


def _weighted(layer, fraction):
    # centred on the smallest cell value so a uniform field comes back exactly
    base = layer.min(axis=-1, keepdims=True)
    return base[..., 0] + (layer - base) @ fraction / fraction.sum()


def aggregate_meteo(grid: MeteoGrid, polygon: ZipPolygon, date, coverage=None) -> ZipMeteoDay:
    """Coverage-fraction weighted mean of each variable for one ZIP-day."""
    cov = _weights(grid, polygon, coverage)
    layer = grid.values[grid.day_index(date)][:, cov.rows, cov.cols]
    vals = _weighted(layer, cov.fraction)
    if not np.all(np.isfinite(vals)):
        raise MissingDataError(f"missing meteorology for ZIP {polygon.zip_id} on {date}")
    return ZipMeteoDay(polygon.zip_id, date, *map(float, vals))


def aggregate_meteo_series(grid: MeteoGrid, polygon: ZipPolygon, coverage=None) -> np.ndarray:
    """All days at once: array of shape (n_days, 3); NaN where inputs are missing."""
    cov = _weights(grid, polygon, coverage)
    layer = grid.values[:, :, cov.rows, cov.cols]
    return _weighted(layer, cov.fraction)


def period_average(days: Sequence) -> MeteoTriple:
    """Unweighted mean over the period's days.

    ``days`` holds :class:`ZipMeteoDay` objects or ``(t_max, rh_max, wind)``
    rows; ``None`` or NaN entries raise :class:`MissingDataError`.
    """
    if len(days) == 0:
        raise ValidationError("period_average needs at least one day")
    rows = []
    for d in days:
        if d is None:
            raise MissingDataError("missing meteorology day in period")
        if isinstance(d, ZipMeteoDay):
            d = (d.t_max, d.rh_max, d.wind_10m)
        rows.append(d)
    arr = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise MissingDataError("missing meteorology value in period")
    return MeteoTriple(*map(float, arr.mean(axis=0)))


class ZipMeteoSeries:
    """Per-ZIP daily meteorology with O(1) period means via cumulative sums."""

    def __init__(self, first_date: dt.date, series: dict):
        self.first_date = first_date
        self._cum = {}
        for zip_id, arr in series.items():
            arr = np.asarray(arr, dtype=np.float64)
            cum = np.zeros((arr.shape[0] + 1, arr.shape[1]))
            cum[1:] = np.cumsum(arr, axis=0)
            self._cum[zip_id] = cum

    @classmethod
    def from_grid(cls, grid: MeteoGrid, polygons: dict):
        return cls(grid.first_date, {z: aggregate_meteo_series(grid, p) for z, p in polygons.items()})

    def period_mean(self, zip_id, start: dt.date, end: dt.date) -> MeteoTriple:
        try:
            cum = self._cum[zip_id]
        except KeyError:
            raise MissingDataError(f"no meteorology for ZIP {zip_id}") from None
        i0 = (start - self.first_date).days
        i1 = (end - self.first_date).days + 1
        if i0 < 0 or i1 > cum.shape[0] - 1 or i1 <= i0:
            raise MissingDataError(f"meteorology for ZIP {zip_id} does not cover {start}..{end}")
        mean = (cum[i1] - cum[i0]) / (i1 - i0)
        if not np.all(np.isfinite(mean)):
            raise MissingDataError(f"missing meteorology for ZIP {zip_id} in {start}..{end}")
        return MeteoTriple(*map(float, mean))


def write_meteo(path, grid: MeteoGrid, fmt="%.4f"):
    g = grid.geometry
    header = dict(kind="meteo", crs=g.crs, origin_x=g.origin_x, origin_y=g.origin_y,
                  pixel_size=g.pixel_size, n_rows=g.n_rows, n_cols=g.n_cols,
                  first_date=grid.first_date.isoformat(), n_days=grid.n_days,
                  layers=list(METEO_VARIABLES))

    def sections():
        for k in range(grid.n_days):
            label = (grid.first_date + dt.timedelta(days=k)).isoformat()
            for j, name in enumerate(METEO_VARIABLES):
                yield name, label, grid.values[k, j], fmt

    write_grid(path, header, sections())


def read_meteo(path) -> MeteoGrid:
    header, sections = read_grid(path)
    if header.get("kind") != "meteo":
        raise ValidationError(f"{path}: grid kind {header.get('kind')!r} is not 'meteo'")
    first = dt.date.fromisoformat(header["first_date"])
    n_days = int(header["n_days"])
    values = np.full((n_days, 3, int(header["n_rows"]), int(header["n_cols"])), np.nan)
    index = {name: j for j, name in enumerate(METEO_VARIABLES)}
    for name, label, arr in sections:
        if name not in index:
            raise StructuralError(f"{path}: unknown layer {name}")
        k = (dt.date.fromisoformat(label) - first).days
        if not 0 <= k < n_days:
            raise StructuralError(f"{path}: layer date {label} outside header range")
        values[k, index[name]] = arr
    geom = GridGeometry(float(header["origin_x"]), float(header["origin_y"]), float(header["pixel_size"]),
                        int(header["n_rows"]), int(header["n_cols"]), header.get("crs", DEFAULT_CRS))
    return MeteoGrid(geom, first, values)
