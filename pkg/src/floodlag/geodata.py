"""Flood rasters, ZIP polygons and coverage-weighted zonal statistics.

All geometry is assumed to be in a common equal-area projection. The
projection tag is compared, never transformed.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
import shapely
from shapely import wkt as shapely_wkt

from . import kernels
from .errors import ProjectionError, StructuralError, ValidationError
from .gridio import read_grid, write_grid

DEFAULT_CRS = "EPSG:5070"
M2_PER_KM2 = 1.0e6
FLOOD_BANDS = ("flooded", "duration", "perm_water")


class CoverageWarning(UserWarning):
    """Polygon extends (partly or wholly) beyond the raster extent."""


@dataclass(frozen=True)
class GridGeometry:
    """North-up grid; ``origin`` is the upper-left corner in projected metres."""

    origin_x: float
    origin_y: float
    pixel_size: float
    n_rows: int
    n_cols: int
    crs: str = DEFAULT_CRS

    def __post_init__(self):
        if not self.pixel_size > 0:
            raise ValidationError("pixel_size must be positive")
        if self.n_rows <= 0 or self.n_cols <= 0:
            raise ValidationError("grid must have at least one row and column")

    @property
    def pixel_area_km2(self):
        return self.pixel_size * self.pixel_size / M2_PER_KM2

    @property
    def bounds(self):
        """(xmin, ymin, xmax, ymax)."""
        return (self.origin_x, self.origin_y - self.n_rows * self.pixel_size,
                self.origin_x + self.n_cols * self.pixel_size, self.origin_y)

    def pixel_box(self, row, col):
        xmin = self.origin_x + col * self.pixel_size
        ymax = self.origin_y - row * self.pixel_size
        return (xmin, ymax - self.pixel_size, xmin + self.pixel_size, ymax)


def _readonly(arr, dtype):
    arr = np.array(arr, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FloodRaster:
    """Per-event flood map with ``flooded``, ``duration`` and ``perm_water`` bands."""

    geometry: GridGeometry
    flooded: np.ndarray
    duration: np.ndarray
    perm_water: np.ndarray
    event_id: str

    def __post_init__(self):
        shapes = {self.flooded.shape, self.duration.shape, self.perm_water.shape}
        expected = (self.geometry.n_rows, self.geometry.n_cols)
        if len(shapes) != 1 or shapes.pop() != expected:
            raise StructuralError(
                f"band shapes {self.flooded.shape}/{self.duration.shape}/{self.perm_water.shape} "
                f"do not match grid {expected}")
        object.__setattr__(self, "flooded", _readonly(self.flooded, np.uint8))
        object.__setattr__(self, "duration", _readonly(self.duration, np.int32))
        object.__setattr__(self, "perm_water", _readonly(self.perm_water, np.uint8))
        if self.flooded.max(initial=0) > 1 or self.perm_water.max(initial=0) > 1:
            raise ValidationError("flooded and perm_water bands must be binary")
        if self.duration.min(initial=0) < 0:
            raise ValidationError("duration must be non-negative")
        if np.any((self.flooded == 0) & (self.duration != 0)):
            raise ValidationError("duration must be zero wherever flooded is zero")

    @property
    def n_rows(self):
        return self.geometry.n_rows

    @property
    def n_cols(self):
        return self.geometry.n_cols

    @cached_property
    def is_masked(self):
        return not np.any((self.flooded == 1) & (self.perm_water == 1))


def mask_permanent_water(raster: FloodRaster) -> FloodRaster:
    """Remove permanent water from the flood bands (idempotent)."""
    if not (raster.flooded.shape == raster.duration.shape == raster.perm_water.shape):
        raise StructuralError("flood bands are not dimension-aligned")
    keep = raster.perm_water == 0
    return FloodRaster(
        geometry=raster.geometry,
        flooded=np.where(keep, raster.flooded, 0),
        duration=np.where(keep, raster.duration, 0),
        perm_water=raster.perm_water,
        event_id=raster.event_id,
    )


def _signed_area(ring):
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _open_ring(coords):
    ring = np.asarray(coords, dtype=np.float64)[:, :2]
    if len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
        ring = ring[:-1]
    return ring


@dataclass(frozen=True, eq=False)
class ZipPolygon:
    """ZIP code area of one boundary vintage.

    ``parts`` is a tuple of polygons, each a tuple of open rings with the
    exterior first. ``total_area`` is in km^2 and includes any permanent water.
    """

    zip_id: str
    parts: tuple
    vintage_year: int
    crs: str = DEFAULT_CRS
    total_area: float = field(init=False)

    def __post_init__(self):
        if not (isinstance(self.zip_id, str) and len(self.zip_id) == 5):
            raise ValidationError(f"zip_id must be a 5-character code, got {self.zip_id!r}")
        parts = []
        for part in self.parts:
            rings = [_open_ring(r) for r in part]
            if any(len(r) < 3 for r in rings):
                raise ValidationError(f"{self.zip_id}: ring with fewer than 3 vertices")
            parts.append(tuple(rings))
        object.__setattr__(self, "parts", tuple(parts))
        geom = self.to_shapely()
        if not geom.is_valid:
            raise ValidationError(f"{self.zip_id}: invalid polygon ({shapely.is_valid_reason(geom)})")
        area = geom.area / M2_PER_KM2
        if not area > 0:
            raise ValidationError(f"{self.zip_id}: degenerate polygon with zero area")
        object.__setattr__(self, "total_area", area)

    @classmethod
    def from_wkt(cls, zip_id, text, vintage_year, crs=DEFAULT_CRS):
        geom = shapely_wkt.loads(text)
        if geom.geom_type == "Polygon":
            polys = [geom]
        elif geom.geom_type == "MultiPolygon":
            polys = list(geom.geoms)
        else:
            raise ValidationError(f"{zip_id}: expected POLYGON or MULTIPOLYGON, got {geom.geom_type}")
        parts = [[p.exterior.coords] + [h.coords for h in p.interiors] for p in polys]
        return cls(zip_id, tuple(parts), int(vintage_year), crs)

    @classmethod
    def rectangle(cls, zip_id, xmin, ymin, xmax, ymax, vintage_year, crs=DEFAULT_CRS):
        ring = [(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)]
        return cls(zip_id, ((ring,),), vintage_year, crs)

    def to_shapely(self):
        polys = [shapely.Polygon(part[0], part[1:]) for part in self.parts]
        return polys[0] if len(polys) == 1 else shapely.MultiPolygon(polys)

    def to_wkt(self):
        return shapely_wkt.dumps(self.to_shapely(), rounding_precision=-1)

    @cached_property
    def oriented_rings(self):
        """Rings with exteriors counter-clockwise and holes clockwise."""
        out = []
        for part in self.parts:
            for k, ring in enumerate(part):
                want_positive = k == 0
                if (_signed_area(ring) > 0) != want_positive:
                    ring = ring[::-1]
                out.append(np.ascontiguousarray(ring))
        return out

    @cached_property
    def bounds(self):
        allv = np.concatenate([r for part in self.parts for r in part])
        return (*allv.min(axis=0), *allv.max(axis=0))


def select_vintage(vintages: Mapping[int, ZipPolygon], year: int) -> ZipPolygon:
    """Boundary vintage equal to ``year``, else the nearest preceding one.

    Falls back to the earliest vintage (with a warning) if none precede.
    """
    if not vintages:
        raise ValidationError("no polygon vintages available")
    preceding = [v for v in vintages if v <= year]
    if preceding:
        return vintages[max(preceding)]
    earliest = min(vintages)
    warnings.warn(f"no boundary vintage on or before {year}; using {earliest}", stacklevel=2)
    return vintages[earliest]


def coverage_fraction(pixel_cell, polygon: ZipPolygon, backend=None) -> float:
    """Exact fraction of an axis-aligned square covered by ``polygon``.

    ``pixel_cell`` is ``(xmin, ymin, size)``.
    """
    xmin, ymin, size = (float(v) for v in pixel_cell)
    if not size > 0:
        raise ValidationError("pixel size must be positive")
    if not polygon.total_area > 0:
        raise ValidationError("degenerate polygon")
    block = kernels.coverage_block(polygon.oriented_rings, xmin, ymin + size, size, 0, 1, 0, 1,
                                   backend=backend)
    return float(np.clip(block[0, 0], 0.0, 1.0))


@dataclass(frozen=True, eq=False)
class ZoneCoverage:
    """Pixels of a grid with positive coverage by one polygon."""

    rows: np.ndarray
    cols: np.ndarray
    fraction: np.ndarray
    complete: bool


def zone_coverage(geometry: GridGeometry, polygon: ZipPolygon, backend=None) -> ZoneCoverage:
    if geometry.crs != polygon.crs:
        raise ProjectionError(f"grid crs {geometry.crs} != polygon crs {polygon.crs}")
    pxmin, pymin, pxmax, pymax = polygon.bounds
    gxmin, gymin, gxmax, gymax = geometry.bounds
    complete = pxmin >= gxmin and pymin >= gymin and pxmax <= gxmax and pymax <= gymax
    s = geometry.pixel_size
    col0 = max(int(np.floor((pxmin - geometry.origin_x) / s)), 0)
    col1 = min(int(np.ceil((pxmax - geometry.origin_x) / s)), geometry.n_cols)
    row0 = max(int(np.floor((geometry.origin_y - pymax) / s)), 0)
    row1 = min(int(np.ceil((geometry.origin_y - pymin) / s)), geometry.n_rows)
    if row1 <= row0 or col1 <= col0:
        empty = np.zeros(0, dtype=np.int64)
        return ZoneCoverage(empty, empty, np.zeros(0), complete)
    block = kernels.coverage_block(polygon.oriented_rings, geometry.origin_x, geometry.origin_y, s,
                                   row0, row1, col0, col1, backend=backend)
    block = np.clip(block, 0.0, 1.0)
    rr, cc = np.nonzero(block > 0)
    return ZoneCoverage(rr + row0, cc + col0, block[rr, cc], complete)


@dataclass(frozen=True)
class ZonalFloodStats:
    zip_id: str
    event_id: str
    flooded_area: float
    pct_area_flooded: float
    mean_duration: float
    max_duration: float


def zonal_flood_stats(raster: FloodRaster, polygon: ZipPolygon,
                      coverage: ZoneCoverage | None = None) -> ZonalFloodStats:
    """Coverage-weighted flooded area and flood duration of a ZIP polygon.

    ``raster`` must already have permanent water masked out.
    """
    if not raster.is_masked:
        raise ValidationError("raster still contains permanent water; apply mask_permanent_water first")
    if coverage is None:
        coverage = zone_coverage(raster.geometry, polygon)
    if not coverage.complete:
        warnings.warn(f"ZIP {polygon.zip_id} extends beyond raster of event {raster.event_id}",
                      CoverageWarning, stacklevel=2)
    flooded = raster.flooded[coverage.rows, coverage.cols] == 1
    frac = coverage.fraction[flooded]
    area = float(frac.sum()) * raster.geometry.pixel_area_km2
    if frac.size:
        dur = raster.duration[coverage.rows, coverage.cols][flooded].astype(np.float64)
        mean_dur = float(np.dot(frac, dur) / frac.sum())
        max_dur = float(dur.max())
    else:
        mean_dur = max_dur = 0.0
    pct = min(100.0 * area / polygon.total_area, 100.0)
    return ZonalFloodStats(polygon.zip_id, raster.event_id, area, pct, mean_dur, max_dur)


def daily_flooded_area(raster: FloodRaster, coverage: ZoneCoverage) -> np.ndarray:
    """Flooded area (km^2) on each day of the event, counted from its start.

    Element ``k`` sums pixels whose duration exceeds ``k`` days, i.e. a
    pixel with duration ``d`` is treated as flooded on event days
    ``0 .. d-1``.
    """
    flooded = raster.flooded[coverage.rows, coverage.cols] == 1
    dur = raster.duration[coverage.rows, coverage.cols][flooded]
    if dur.size == 0 or dur.max() == 0:
        return np.zeros(0)
    w = coverage.fraction[flooded] * raster.geometry.pixel_area_km2
    by_dur = np.bincount(dur, weights=w, minlength=int(dur.max()) + 1)
    # area with duration > k
    return np.cumsum(by_dur[::-1])[::-1][1:]


# ---------------------------------------------------------------- file I/O

def write_flood_raster(path, raster: FloodRaster):
    g = raster.geometry
    header = dict(kind="flood", event_id=raster.event_id, crs=g.crs, origin_x=g.origin_x,
                  origin_y=g.origin_y, pixel_size=g.pixel_size, n_rows=g.n_rows, n_cols=g.n_cols)
    write_grid(path, header, [
        ("flooded", None, raster.flooded, "%d"),
        ("duration", None, raster.duration, "%d"),
        ("perm_water", None, raster.perm_water, "%d"),
    ])


def read_flood_raster(path) -> FloodRaster:
    header, sections = read_grid(path)
    if header.get("kind") != "flood":
        raise ValidationError(f"{path}: grid kind {header.get('kind')!r} is not 'flood'")
    bands = {name: arr for name, _, arr in sections}
    missing = set(FLOOD_BANDS) - set(bands)
    if missing:
        raise StructuralError(f"{path}: missing bands {sorted(missing)}")
    geom = GridGeometry(float(header["origin_x"]), float(header["origin_y"]),
                        float(header["pixel_size"]), int(header["n_rows"]), int(header["n_cols"]),
                        header.get("crs", DEFAULT_CRS))
    return FloodRaster(geom, bands["flooded"], bands["duration"], bands["perm_water"],
                       str(header["event_id"]))


def write_polygons(path, polygons: Sequence[ZipPolygon]):
    crs = {p.crs for p in polygons}
    if len(crs) > 1:
        raise ProjectionError(f"mixed projections {sorted(crs)}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# crs: {crs.pop() if crs else DEFAULT_CRS}\n")
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["zip_id", "vintage", "wkt"])
        for p in polygons:
            w.writerow([p.zip_id, p.vintage_year, p.to_wkt()])


def read_polygons(path) -> dict:
    """Return ``{zip_id: {vintage_year: ZipPolygon}}``."""
    crs = DEFAULT_CRS
    out: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                if key.strip() == "crs":
                    crs = value.strip()
                continue
            lines.append(line)
    reader = csv.DictReader(lines, delimiter="\t")
    if reader.fieldnames is None or not {"zip_id", "vintage", "wkt"} <= set(reader.fieldnames):
        raise StructuralError(f"{path}: expected columns zip_id, vintage, wkt")
    for row in reader:
        poly = ZipPolygon.from_wkt(row["zip_id"], row["wkt"], int(row["vintage"]), crs)
        out.setdefault(poly.zip_id, {})[poly.vintage_year] = poly
    return out
