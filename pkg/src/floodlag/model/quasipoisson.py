"""Distributed-lag conditional quasi-Poisson model for matched strata.

For stratum s and period t::

    log E[Y_st] = a_s + sum_l beta_l * Exposure_lst + gamma' z_st + log(person_days_st)

``a_s`` is eliminated by conditioning on stratum totals; ``z_st`` holds
natural splines (4 df) of year and of period-mean maximum temperature,
maximum relative humidity and wind speed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..ccs import CcsCause
from ..design import Anchor, CountSubset, N_LAG_WEEKS, drop_zero_strata
from ..errors import ConfigurationError
from .conditional import (Panel, check_rank, fit_conditional, pearson_dispersion,
                          separated_columns)
from .inference import N_CAUSES, PercentChange, bonferroni_z, cumulative_effect, percent_change
from .splines import natural_spline_basis

N_LAGS = N_LAG_WEEKS + 1
CONFOUNDERS = ("year", "t_max", "rh_max", "wind_10m")
LAG_NAMES = tuple(f"lag{k}" for k in range(N_LAGS))


@dataclass(frozen=True)
class ModelSpec:
    cause: CcsCause
    subset: CountSubset = CountSubset.ALL
    spline_df: int = 4
    confounders: tuple = CONFOUNDERS

    def __post_init__(self):
        object.__setattr__(self, "cause", CcsCause(self.cause))
        object.__setattr__(self, "subset", CountSubset(self.subset))

    @property
    def n_columns(self):
        return N_LAGS + self.spline_df * len(self.confounders)


def _confounder_values(period, name):
    if name == "year":
        return float(period.year)
    return float(getattr(period.meteo, name))


def assemble_panel(strata, spec: ModelSpec) -> Panel:
    """Design matrix, counts and log person-days offsets for one cause."""
    kept = drop_zero_strata(strata, spec.cause, spec.subset)
    if not kept:
        raise ConfigurationError(f"no strata with {spec.cause.value} counts ({spec.subset.value})")
    periods = [p for s in kept for p in s.periods]
    n = len(periods)
    lags = np.zeros((n, N_LAGS))
    for i, p in enumerate(periods):
        if p.anchor is Anchor.EXPOSURE:
            lags[i, p.lag] = 1.0
    blocks, names = [lags], list(LAG_NAMES)
    for var in spec.confounders:
        basis = natural_spline_basis([_confounder_values(p, var) for p in periods], spec.spline_df, var)
        blocks.append(basis.matrix)
        names += basis.column_names
    y = np.array([p.count(spec.cause, spec.subset) for p in periods], dtype=np.float64)
    offset = np.log([p.person_days for p in periods])
    ptr = np.r_[0, np.cumsum([len(s.periods) for s in kept])]
    return Panel(np.hstack(blocks), y, offset, ptr, tuple(names), tuple(s.stratum_id for s in kept))


@dataclass(eq=False)
class FitResult:
    """Estimates for one cause (and subgroup).

    ``covariance`` is the dispersion-scaled inverse information over all
    estimated columns; rows/columns of non-estimable lags hold NaN.
    """

    cause: CcsCause
    subset: CountSubset
    names: tuple
    beta: np.ndarray
    gamma: np.ndarray
    covariance: np.ndarray
    dispersion: float
    pct_changes: list
    cumulative: float
    n_strata: int
    n_obs: int
    converged: bool
    n_iter: int
    grad_norm: float
    loglik: float
    alpha: float = 0.05
    n_causes: int = N_CAUSES
    non_estimable: tuple = ()
    status: str = "ok"
    reason: str = ""
    loglik_path: list = field(default_factory=list)

    @property
    def se(self):
        return np.sqrt(np.diag(self.covariance)[:N_LAGS])

    @property
    def estimable(self):
        return self.status == "ok"

    @classmethod
    def not_estimable(cls, cause, subset, reason, n_strata=0, alpha=0.05, n_causes=N_CAUSES):
        nan5 = np.full(N_LAGS, np.nan)
        return cls(CcsCause(cause), CountSubset(subset), LAG_NAMES, nan5, np.zeros(0),
                   np.full((N_LAGS, N_LAGS), np.nan), np.nan,
                   [PercentChange(np.nan, np.nan, np.nan)] * N_LAGS, np.nan, n_strata, 0,
                   False, 0, np.nan, np.nan, alpha, n_causes, LAG_NAMES, "non_estimable", reason)

    def nominal_ci(self, level=0.95):
        """Uncorrected Wald intervals on the log-rate-ratio scale."""
        from scipy.stats import norm
        z = norm.ppf(0.5 + level / 2)
        return np.c_[self.beta - z * self.se, self.beta + z * self.se]


def fit_panel(panel: Panel, cause, subset=CountSubset.ALL, alpha=0.05, n_causes=N_CAUSES,
              backend=None, max_iter=100, tol=1e-8) -> FitResult:
    panel = panel.without_zero_strata()
    p_all = panel.X.shape[1]
    sep = [j for j in separated_columns(panel) if j < N_LAGS]
    keep = [j for j in range(p_all) if j not in sep]
    work = panel.select_columns(keep) if sep else panel
    check_rank(work)
    fit = fit_conditional(work, max_iter=max_iter, tol=tol, backend=backend)
    phi = pearson_dispersion(work.y, fit.fitted, len(keep), work.n_strata)
    cov_sub = phi * np.linalg.inv(fit.information)
    cov_sub = 0.5 * (cov_sub + cov_sub.T)
    params = np.full(p_all, np.nan)
    params[keep] = fit.params
    cov = np.full((p_all, p_all), np.nan)
    cov[np.ix_(keep, keep)] = cov_sub
    beta = params[:N_LAGS]
    se = np.sqrt(np.diag(cov)[:N_LAGS])
    pcts = [percent_change(b, s, n_causes, alpha) if np.isfinite(b) else PercentChange(np.nan, np.nan, np.nan)
            for b, s in zip(beta, se)]
    cumulative = cumulative_effect(beta) if np.all(np.isfinite(beta)) else np.nan
    return FitResult(
        CcsCause(cause), CountSubset(subset), panel.names, beta, params[N_LAGS:], cov, phi, pcts,
        cumulative, work.n_strata, len(work.y), fit.converged, fit.n_iter, fit.grad_norm, fit.loglik,
        alpha, n_causes, tuple(panel.names[j] for j in sep), "ok", "", fit.loglik_path)


def fit_conditional_quasipoisson(strata, spec: ModelSpec, alpha=0.05, n_causes=N_CAUSES,
                                 backend=None) -> FitResult:
    """Fit one cause's distributed-lag model over the given strata."""
    panel = assemble_panel(strata, spec)
    return fit_panel(panel, spec.cause, spec.subset, alpha, n_causes, backend)


def ci_halfwidth_ratio(alpha=0.05, n_causes=N_CAUSES):
    """Corrected over nominal 95 % half-width on the log scale."""
    return bonferroni_z(alpha, n_causes) / bonferroni_z(alpha, 1)
