"""Conditional Poisson estimation for stratified count panels.

Conditioning each stratum's counts on their total turns the Poisson
model with stratum intercepts into a multinomial model free of those
intercepts. Point estimates coincide with the explicit fixed-effects fit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .. import kernels
from ..errors import ConvergenceError, RankDeficiencyError, StructuralError, ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Panel:
    """Rows grouped into strata; stratum ``s`` owns rows ``ptr[s]:ptr[s+1]``."""

    X: np.ndarray
    y: np.ndarray
    offset: np.ndarray
    ptr: np.ndarray
    names: tuple
    stratum_ids: tuple = ()

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise StructuralError("X must be two-dimensional")
        n = X.shape[0]
        y = np.asarray(self.y, dtype=np.float64)
        off = np.asarray(self.offset, dtype=np.float64)
        ptr = np.asarray(self.ptr, dtype=np.int64)
        if y.shape != (n,) or off.shape != (n,):
            raise StructuralError("y and offset must have one entry per row of X")
        if ptr[0] != 0 or ptr[-1] != n or np.any(np.diff(ptr) < 0):
            raise StructuralError("stratum pointer must run monotonically from 0 to n")
        if np.any(y < 0) or not np.all(np.isfinite(off)):
            raise ValidationError("counts must be non-negative and offsets finite")
        if len(self.names) != X.shape[1]:
            raise StructuralError("one name per column of X required")
        for attr, val in (("X", X), ("y", y), ("offset", off), ("ptr", ptr)):
            object.__setattr__(self, attr, val)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n_strata(self):
        return len(self.ptr) - 1

    @property
    def stratum_totals(self):
        return np.add.reduceat(self.y, self.ptr[:-1]) if self.n_strata else np.zeros(0)

    def without_zero_strata(self):
        sizes = np.diff(self.ptr)
        tot = np.array([self.y[a:b].sum() for a, b in zip(self.ptr[:-1], self.ptr[1:])])
        keep = (tot > 0) & (sizes > 0)
        if keep.all():
            return self
        rows = np.concatenate([np.arange(a, b) for a, b, k in zip(self.ptr[:-1], self.ptr[1:], keep) if k]
                              or [np.zeros(0, dtype=np.int64)])
        ptr = np.r_[0, np.cumsum(sizes[keep])]
        ids = tuple(s for s, k in zip(self.stratum_ids, keep) if k) if self.stratum_ids else ()
        return Panel(self.X[rows], self.y[rows], self.offset[rows], ptr, self.names, ids)

    def select_columns(self, cols):
        cols = list(cols)
        return Panel(self.X[:, cols], self.y, self.offset, self.ptr,
                     tuple(self.names[c] for c in cols), self.stratum_ids)


@dataclass(eq=False)
class ConditionalFit:
    params: np.ndarray
    information: np.ndarray
    loglik: float
    fitted: np.ndarray
    n_iter: int
    grad_norm: float
    converged: bool
    loglik_path: list = field(default_factory=list)


def conditional_loglik(panel: Panel, params, backend=None) -> float:
    return kernels.cond_poisson_derivs(panel.X, panel.y, panel.offset, panel.ptr, params, backend)[0]


def separated_columns(panel: Panel) -> list:
    """Indices of binary columns whose coefficient diverges.

    A 0/1 column separates when no count falls in its rows (estimate tends
    to minus infinity) or when, inside every stratum touching it, all
    counts fall in its rows (plus infinity).
    """
    out = []
    sid = np.repeat(np.arange(panel.n_strata), np.diff(panel.ptr))
    for j in range(panel.X.shape[1]):
        col = panel.X[:, j]
        if not np.all((col == 0) | (col == 1)) or not col.any():
            continue
        on = col == 1
        touched = np.isin(sid, np.unique(sid[on]))
        if panel.y[on].sum() == 0 or panel.y[touched & ~on].sum() == 0:
            out.append(j)
    return out


def check_rank(panel: Panel, rtol=1e-9):
    """Raise :class:`RankDeficiencyError` if the within-stratum design is singular."""
    X = panel.X
    sizes = np.diff(panel.ptr)
    nonempty = sizes > 0
    means = np.zeros((panel.n_strata, X.shape[1]))
    means[nonempty] = np.add.reduceat(X, panel.ptr[:-1][nonempty], axis=0) / sizes[nonempty, None]
    centered = X - np.repeat(means, sizes, axis=0)
    scale = np.linalg.norm(centered, axis=0)
    zero = scale == 0
    if zero.any():
        raise RankDeficiencyError([panel.names[j] for j in np.flatnonzero(zero)],
                                  "columns constant within every stratum: "
                                  + ", ".join(panel.names[j] for j in np.flatnonzero(zero)))
    _, r, piv = linalg.qr(centered / scale, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    rank = int(np.sum(d > rtol * d[0]))
    if rank < X.shape[1]:
        raise RankDeficiencyError([panel.names[j] for j in piv[rank:]])


def fit_conditional(panel: Panel, max_iter=100, tol=1e-8, backend=None, start=None) -> ConditionalFit:
    """Newton-Raphson with step halving on the conditional log-likelihood.

    Stops when the score norm drops below ``tol`` or stops shrinking
    once the Newton decrement is negligible. Line-searched steps never
    decrease the log-likelihood.
    """
    p = panel.X.shape[1]
    theta = np.zeros(p) if start is None else np.array(start, dtype=np.float64)
    derivs = lambda th: kernels.cond_poisson_derivs(panel.X, panel.y, panel.offset, panel.ptr, th, backend)
    ll, score, info, fitted = derivs(theta)
    path = [ll]
    gnorm = float(np.linalg.norm(score))
    for it in range(1, max_iter + 1):
        if gnorm < tol:
            return ConditionalFit(theta, info, ll, fitted, it - 1, gnorm, True, path)
        try:
            cho = linalg.cho_factor(info)
            step = linalg.cho_solve(cho, score)
        except linalg.LinAlgError:
            step = np.linalg.lstsq(info, score, rcond=None)[0]
        decrement = float(score @ step)
        # inside the quadratic region the predicted gain is below the
        # resolution of ll, so comparing ll values would reject good steps
        near = decrement < 1e-9 * max(1.0, abs(ll))
        if near:
            cand = theta + step
            ll_c, score_c, info_c, fitted_c = derivs(cand)
        else:
            t = 1.0
            for _ in range(40):
                cand = theta + t * step
                ll_c, score_c, info_c, fitted_c = derivs(cand)
                if np.isfinite(ll_c) and ll_c >= ll:
                    break
                t *= 0.5
            else:
                raise ConvergenceError("step halving failed to increase the conditional log-likelihood",
                                       theta, it, gnorm)
        new_gnorm = float(np.linalg.norm(score_c))
        if near and new_gnorm >= gnorm:
            # score is at its floating-point floor
            return ConditionalFit(theta, info, ll, fitted, it - 1, gnorm, True, path)
        theta, ll, score, info, fitted = cand, ll_c, score_c, info_c, fitted_c
        path.append(ll)
        gnorm = new_gnorm
    if gnorm < tol:
        return ConditionalFit(theta, info, ll, fitted, max_iter, gnorm, True, path)
    raise ConvergenceError(f"no convergence after {max_iter} iterations (score norm {gnorm:.3g})",
                           theta, max_iter, gnorm)


def pearson_dispersion(y, fitted, n_params, n_strata):
    """Pearson chi-square over residual degrees of freedom.

    Residual df subtracts the stratum intercepts eliminated by conditioning.
    """
    pos = fitted > 0
    chi2 = float(np.sum((y[pos] - fitted[pos]) ** 2 / fitted[pos]))
    dof = int(pos.sum()) - n_params - n_strata
    if dof <= 0:
        raise ValidationError(f"no residual degrees of freedom ({dof})")
    return chi2 / dof


def fit_fixed_effects_poisson(panel: Panel, max_iter=200, tol=1e-12):
    """Poisson regression with one explicit intercept per stratum, by IRLS.

    Returns ``(coefficients for panel columns, stratum intercepts)``.
    """
    n, p = panel.X.shape
    S = panel.n_strata
    D = np.zeros((n, S))
    D[np.arange(n), np.repeat(np.arange(S), np.diff(panel.ptr))] = 1.0
    Z = np.hstack([panel.X, D])
    y = panel.y
    mu = y + 0.5
    eta = np.log(mu)
    coef = None
    for _ in range(max_iter):
        w = mu
        work = eta - panel.offset + (y - mu) / mu
        sw = np.sqrt(w)
        new, *_ = np.linalg.lstsq(Z * sw[:, None], work * sw, rcond=None)
        if coef is not None and np.max(np.abs(new - coef)) < tol:
            coef = new
            break
        coef = new
        eta = Z @ coef + panel.offset
        mu = np.exp(eta)
    else:
        raise ConvergenceError("fixed-effects IRLS did not converge", coef, max_iter)
    return coef[:p], coef[p:]


def equivalence_check_fixed_effects(panel: Panel, backend=None) -> float:
    """Max |conditional - fixed-effects| coefficient difference."""
    if panel.n_strata > 50:
        raise ValidationError("fixed-effects equivalence check is limited to 50 strata")
    panel = panel.without_zero_strata()
    cond = fit_conditional(panel, tol=1e-10, backend=backend)
    fe, _ = fit_fixed_effects_poisson(panel)
    return float(np.max(np.abs(cond.params - fe))) if len(fe) else 0.0
