"""Natural cubic spline bases (no intercept column), knots at quantiles.

Construction follows the usual B-spline route: a cubic B-spline basis on
the boundary and interior knots, minus its first column, projected onto
the null space of the second-derivative constraints at both boundary
knots. Outside the boundary knots the basis is extended linearly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import qr

from ..errors import ConfigurationError


@dataclass(frozen=True, eq=False)
class SplineBasis:
    name: str
    df: int
    interior_knots: np.ndarray
    boundary_knots: tuple
    _transform: np.ndarray
    matrix: np.ndarray

    @property
    def column_names(self):
        return [f"ns({self.name}){k + 1}" for k in range(self.df)]

    def evaluate(self, x) -> np.ndarray:
        return _evaluate(np.asarray(x, dtype=np.float64), self.interior_knots,
                         self.boundary_knots, self._transform)


def _full_knots(interior, boundary):
    lo, hi = boundary
    return np.r_[[lo] * 4, interior, [hi] * 4]


def _bspline_design(t, x, nu=0):
    n_basis = len(t) - 4
    spl = BSpline(t, np.eye(n_basis), 3, extrapolate=True)
    return spl(x, nu=nu)


def _evaluate(x, interior, boundary, transform):
    t = _full_knots(interior, boundary)
    lo, hi = boundary
    inside = (x >= lo) & (x <= hi)
    raw = np.empty((len(x), len(t) - 4))
    if inside.any():
        raw[inside] = _bspline_design(t, x[inside])
    for edge, mask in ((lo, x < lo), (hi, x > hi)):
        if mask.any():
            val = _bspline_design(t, np.array([edge]))
            slope = _bspline_design(t, np.array([edge]), nu=1)
            raw[mask] = val + np.outer(x[mask] - edge, slope[0])
    return raw[:, 1:] @ transform


def natural_spline_basis(values, df: int = 4, name: str = "x") -> SplineBasis:
    """Natural cubic spline basis with ``df`` columns evaluated at ``values``."""
    x = np.asarray(values, dtype=np.float64).ravel()
    if df < 1:
        raise ConfigurationError("df must be at least 1")
    if not np.all(np.isfinite(x)):
        raise ConfigurationError(f"{name}: non-finite values")
    if len(np.unique(x)) < df + 1:
        raise ConfigurationError(
            f"{name}: natural spline with df={df} needs at least {df + 1} distinct values")
    boundary = (float(x.min()), float(x.max()))
    probs = np.linspace(0, 1, df + 1)[1:-1]
    interior = np.quantile(x, probs)
    if np.any(interior <= boundary[0]) or np.any(interior >= boundary[1]):
        raise ConfigurationError(f"{name}: quantile knots collide with the boundary; too many ties")
    t = _full_knots(interior, boundary)
    const = _bspline_design(t, np.array(boundary), nu=2)[:, 1:]
    q, _ = qr(const.T)
    transform = q[:, 2:]
    matrix = _evaluate(x, interior, boundary, transform)
    return SplineBasis(name, df, interior, boundary, transform, matrix)
