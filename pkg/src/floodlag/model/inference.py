"""Percent-change transforms and multiplicity-corrected Wald intervals."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.stats import norm

from ..errors import ValidationError

N_CAUSES = 13


class PercentChange(NamedTuple):
    pct: float
    ci_lo: float
    ci_hi: float


def bonferroni_z(alpha=0.05, n_causes=N_CAUSES) -> float:
    """Two-sided standard-normal critical value at level ``alpha / n_causes``."""
    return float(norm.ppf(1.0 - alpha / n_causes / 2.0))


def percent_change(beta, se, n_causes=N_CAUSES, alpha=0.05) -> PercentChange:
    """100 (exp(beta) - 1) with a Wald interval built on the log scale."""
    if not se > 0:
        raise ValidationError(f"standard error must be positive, got {se}")
    z = bonferroni_z(alpha, n_causes)
    return PercentChange(100.0 * np.expm1(beta), 100.0 * np.expm1(beta - z * se),
                         100.0 * np.expm1(beta + z * se))


def cumulative_effect(beta) -> float:
    """Sum over lags of exp(beta) - 1."""
    b = np.asarray(beta, dtype=np.float64)
    if b.ndim != 1 or b.size == 0:
        raise ValidationError("cumulative_effect expects a non-empty coefficient vector")
    return float(np.sum(np.expm1(b)))


def wald_pvalue(beta, se) -> float:
    return float(2.0 * norm.sf(abs(beta) / se))


def holm_alphas(pvalues, alpha=0.05) -> np.ndarray:
    """Per-test level from the Holm step-down procedure.

    The k-th smallest p-value (k from 0) is tested at alpha / (m - k) until
    the first acceptance; that level and all later ones are held at the
    level of the first accepted test.
    """
    p = np.asarray(pvalues, dtype=np.float64)
    m = len(p)
    order = np.argsort(p, kind="stable")
    levels = np.empty(m)
    current = None
    for k, i in enumerate(order):
        lvl = alpha / (m - k)
        if current is None and p[i] > lvl:
            current = lvl
        levels[i] = lvl if current is None else current
    return levels
