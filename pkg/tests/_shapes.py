"""Random test geometry shared by several test modules."""
import numpy as np
import shapely

from floodlag.geodata import FloodRaster, GridGeometry, ZipPolygon


def star_ring(rng, cx, cy, r_lo, r_hi, n=None):
    n = n or int(rng.integers(5, 21))
    gaps = rng.uniform(0.2, 1.0, n)
    ang = rng.uniform(0, 2 * np.pi) + 2 * np.pi * np.cumsum(gaps) / gaps.sum()
    rad = rng.uniform(r_lo, r_hi, n)
    return np.c_[cx + rad * np.cos(ang), cy + rad * np.sin(ang)]


def random_polygon(rng, geometry, zip_id="00001", hole=None, parts=1, vintage=2010):
    """Star-shaped polygon(s) placed inside ``geometry`` (optionally with a hole)."""
    xmin, ymin, xmax, ymax = geometry.bounds
    width = min(xmax - xmin, ymax - ymin)
    out = []
    for k in range(parts):
        r_hi = width * rng.uniform(0.12, 0.22)
        r_lo = r_hi * rng.uniform(0.4, 0.8)
        # parts sit in separate halves so they never touch
        span = (xmax - xmin) / parts
        cx = xmin + span * k + span / 2
        cy = rng.uniform(ymin + r_hi + 1, ymax - r_hi - 1)
        rings = [star_ring(rng, cx, cy, r_lo, r_hi)]
        if hole if hole is not None else rng.random() < 0.3:
            rings.append(star_ring(rng, cx, cy, 0.1 * r_lo, 0.3 * r_lo)[::-1])
        out.append(tuple(rings))
    return ZipPolygon(zip_id, tuple(out), vintage)


def random_raster(rng, n_rows=24, n_cols=24, pixel=250.0, p_flood=0.4, p_perm=0.1, event_id="1234"):
    geom = GridGeometry(rng.uniform(0, 1e5), rng.uniform(1e5, 2e5), pixel, n_rows, n_cols)
    flooded = (rng.random((n_rows, n_cols)) < p_flood).astype(np.uint8)
    duration = flooded * rng.integers(1, 12, size=(n_rows, n_cols))
    perm = (rng.random((n_rows, n_cols)) < p_perm).astype(np.uint8)
    return FloodRaster(geom, flooded, duration, perm, event_id)


def shapely_coverage(geometry, polygon):
    """Pixel-by-pixel coverage from shapely intersections (independent oracle)."""
    shape = polygon.to_shapely()
    s = geometry.pixel_size
    cov = np.zeros((geometry.n_rows, geometry.n_cols))
    for r in range(geometry.n_rows):
        for c in range(geometry.n_cols):
            box = shapely.box(*geometry.pixel_box(r, c))
            cov[r, c] = shape.intersection(box).area / (s * s)
    return cov
